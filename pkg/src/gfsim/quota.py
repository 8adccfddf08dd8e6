"""Spot quota from demand forecasts, with an eviction-feedback safety factor."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .domain import ClusterState, Task
from .forecast import ForecastDistribution, predict_quantile

HOUR = 3600
TIMELINE_HEADER = "time_s,f,eta,Q_H,spot_allocated,e_window,l_window_s"


class HorizonTooShort(ValueError):
    pass


def estimate_inventory(forecasts: Sequence[ForecastDistribution], p: float, H: int, C: float) -> float:
    """GPUs left over once every org's ``p``-quantile peak over ``H`` steps is reserved.

    A negative quantile (tiny mean, wide spread) reserves nothing rather than
    handing capacity back.
    """
    reserved = 0.0
    for dist in forecasts:
        if len(dist) < H:
            raise HorizonTooShort(f"forecast covers {len(dist)} steps, need {H}")
        reserved += max(float(np.max(predict_quantile(dist, p)[:H])), 0.0)
    return C - min(C, reserved)


def compute_quota(f: float, eta: float, S0: float, Sa: float) -> float:
    return min(f * eta, S0 + Sa)


def update_eta(eta: float, e: float, l: float, target: float, theta: float) -> float:
    """One feedback step: shrink on excess evictions, grow when spot tasks starve."""
    if e > 1.5 * target:
        return eta * (target / e)
    if e < 0.5 * target and l > theta:
        return eta * (1.5 - e / target)
    return eta


def quota_satisfy(task: Task, state: ClusterState, quota: "QuotaState") -> bool:
    if task.is_hp:
        return True
    return state.spot_allocated + task.total_gpus <= quota.Q_H + 1e-9


# ---------------------------------------------------------------- telemetry


def window_eviction_rate(runs: Iterable[tuple], start: float, end: float) -> float:
    """Evicted runs ending in ``(start, end]`` over runs active in that window.

    ``runs`` holds ``(run_start, run_end_or_None, evicted)`` tuples.  An empty
    window has rate 0.
    """
    active = evicted = 0
    for s, e, was_evicted in runs:
        if s > end or (e is not None and e <= start):
            continue
        active += 1
        if was_evicted and e is not None and start < e <= end:
            evicted += 1
    return evicted / active if active else 0.0


def window_max_wait(waits: Iterable[tuple], start: float, end: float) -> float:
    """Longest waiting segment overlapping ``[start, end]``; open segments run to ``end``."""
    longest = 0.0
    for s, e in waits:
        stop = end if e is None else min(e, end)
        if s > end or stop < start:
            continue
        longest = max(longest, stop - s)
    return longest


@dataclass
class QuotaState:
    p: float = 0.9
    H: int = 1
    theta: float = 3600.0
    update_interval: int = 300
    eta: float = 1.0
    Q_H: float = 0.0
    f: float = 0.0
    e_window: float = 0.0
    l_window: float = 0.0
    freeze_eta: bool = False
    guaranteed_only: bool = False
    eta_max: Optional[float] = None
    timeline: list[tuple] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise ValueError("guarantee rate p must lie in (0, 1)")
        if self.H < 1:
            raise ValueError("H must be a positive number of hours")
        if self.eta <= 0:
            raise ValueError("eta must be positive")

    @property
    def target_eviction(self) -> float:
        return 1.0 - self.p

    @property
    def window(self) -> int:
        return self.H * HOUR

    def observe(self, e: float, l: float) -> float:
        """Feed one telemetry sample and apply the feedback rule."""
        self.e_window, self.l_window = e, l
        if not self.freeze_eta:
            self.eta = update_eta(self.eta, e, l, self.target_eviction, self.theta)
            if self.eta_max is not None:
                self.eta = min(self.eta, self.eta_max)
        return self.eta

    def recompute(self, now: int, f: float, S0: float, Sa: float, spot_allocated: float,
                  capacity: Optional[float] = None) -> float:
        self.f = f
        q = compute_quota(f, self.eta, S0, Sa)
        if capacity is not None:
            q = min(q, capacity)
        self.Q_H = max(q, 0.0)
        self.timeline.append((now, self.f, self.eta, self.Q_H, spot_allocated, self.e_window, self.l_window))
        return self.Q_H

    def snapshot(self) -> "QuotaState":
        return QuotaState(self.p, self.H, self.theta, self.update_interval, self.eta, self.Q_H, self.f,
                          self.e_window, self.l_window, self.freeze_eta, self.guaranteed_only, self.eta_max)


def _fmt(x) -> str:
    x = float(x)
    if x.is_integer():
        return str(int(x))
    return f"{x:.9g}"


def timeline_csv(timeline: Iterable[tuple]) -> str:
    rows = [TIMELINE_HEADER]
    rows += [",".join(_fmt(v) for v in row) for row in timeline]
    return "\n".join(rows) + "\n"
