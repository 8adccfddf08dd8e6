"""Trace ingestion, synthetic multi-organization workloads and usage series."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .domain import Node, Priority, Task, expand_checkpoints, validate_task

HOUR = 3600
DAY = 86400
WEEK = 7 * DAY

TRACE_HEADER = "task_id,submit_time_s,class,pods,gpus_per_pod,duration_s,org_id,checkpoint_interval_s"
NODE_HEADER = "node_id,cluster_id,gpu_model,total_gpus"
USAGE_HEADER = "org_id,bucket_start_s,demand_gpus"

# (gpus_per_pod, weight) mixes loosely following the production request spread
HP_SIZES = ((0.5, 0.0011), (1, 0.5511), (2, 0.1337), (4, 0.0753), (8, 0.2369))
SPOT_SIZES = ((0.5, 0.0082), (1, 0.6735), (2, 0.0567), (4, 0.12), (8, 0.1404))
HP_GANG = 0.0866
SPOT_GANG = 0.2726


class ParseError(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class ConfigError(ValueError):
    pass


@dataclass
class UsageSeries:
    """Per-organization GPU demand, one value per ``granularity`` bucket."""

    org_id: str
    values: np.ndarray
    granularity: int = HOUR
    attributes: tuple[int, ...] = ()
    start: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if np.any(self.values < 0):
            raise ValueError("usage values must be non-negative")

    def __len__(self):
        return len(self.values)

    def bucket_times(self) -> np.ndarray:
        return self.start + self.granularity * np.arange(len(self.values))

    def window(self, end: int, length: int) -> np.ndarray:
        """The ``length`` buckets ending just before time ``end``."""
        stop = (end - self.start) // self.granularity
        if stop - length < 0 or stop > len(self.values):
            raise IndexError("window outside series")
        return self.values[stop - length:stop]


# ---------------------------------------------------------------- CSV I/O


def _fmt_num(x) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


def _parse_int(text: str, line: int, name: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(line, f"{name} is not an integer: {text!r}") from None


def _parse_float(text: str, line: int, name: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(line, f"{name} is not a number: {text!r}") from None
    if not math.isfinite(value):
        raise ParseError(line, f"{name} is not finite")
    return value


def _read_rows(path, header: str):
    text = Path(path).read_text()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].strip() != header:
        raise ParseError(1, f"expected header {header!r}")
    ncols = header.count(",") + 1
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        cols = raw.rstrip("\r").split(",")
        if len(cols) != ncols:
            raise ParseError(lineno, f"expected {ncols} columns, got {len(cols)}")
        yield lineno, cols


def parse_trace(path) -> list[Task]:
    """Read a task trace CSV. Any malformed row rejects the whole file."""
    tasks = []
    seen = set()
    for lineno, cols in _read_rows(path, TRACE_HEADER):
        tid, submit, cls, pods, gpp, duration, org, interval = cols
        if cls not in ("hp", "spot"):
            raise ParseError(lineno, f"unknown priority class {cls!r}")
        if tid in seen:
            raise ParseError(lineno, f"duplicate task id {tid!r}")
        seen.add(tid)
        duration_s = _parse_int(duration, lineno, "duration_s")
        interval_s = _parse_int(interval, lineno, "checkpoint_interval_s")
        if interval_s < 0:
            raise ParseError(lineno, "negative checkpoint interval")
        task = Task(
            id=tid,
            submit_time=_parse_int(submit, lineno, "submit_time_s"),
            pods=_parse_int(pods, lineno, "pods"),
            gpus_per_pod=_parse_float(gpp, lineno, "gpus_per_pod"),
            priority=Priority.HP if cls == "hp" else Priority.SPOT,
            duration=duration_s,
            org_id=org,
            checkpoints=expand_checkpoints(duration_s, interval_s),
        )
        try:
            validate_task(task)
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from exc
        tasks.append(task)
    tasks.sort(key=lambda t: (t.submit_time, t.id))
    return tasks


def checkpoint_interval(task: Task) -> int:
    if not task.checkpoints:
        return 0
    step = task.checkpoints[0]
    if task.checkpoints != expand_checkpoints(task.duration, step):
        raise ValueError(f"task {task.id}: milestones are not periodic")
    return step


def write_trace(tasks: Iterable[Task], path) -> None:
    rows = [TRACE_HEADER]
    for t in tasks:
        cls = "hp" if t.is_hp else "spot"
        rows.append(
            f"{t.id},{t.submit_time},{cls},{t.pods},{_fmt_num(t.gpus_per_pod)},"
            f"{t.duration},{t.org_id},{checkpoint_interval(t)}"
        )
    Path(path).write_text("\n".join(rows) + "\n")


def parse_nodes(path) -> list[Node]:
    nodes = []
    for lineno, (nid, cluster, model, total) in _read_rows(path, NODE_HEADER):
        gpus = _parse_int(total, lineno, "total_gpus")
        if gpus < 1:
            raise ParseError(lineno, "total_gpus must be positive")
        nodes.append(Node(nid, gpus, cluster_id=cluster, gpu_model=model))
    return nodes


def write_nodes(nodes: Iterable[Node], path) -> None:
    rows = [NODE_HEADER]
    rows += [f"{n.id},{n.cluster_id},{n.gpu_model},{n.total_gpus}" for n in nodes]
    Path(path).write_text("\n".join(rows) + "\n")


def make_nodes(count: int, gpus: int = 8, cluster_id: str = "c0", gpu_model: str = "A100") -> list[Node]:
    width = len(str(max(count - 1, 0)))
    return [Node(f"n{i:0{width}d}", gpus, cluster_id, gpu_model) for i in range(count)]


def parse_usage(path, granularity: int = HOUR) -> list[UsageSeries]:
    by_org: dict[str, list[tuple[int, float]]] = {}
    for lineno, (org, start, demand) in _read_rows(path, USAGE_HEADER):
        value = _parse_float(demand, lineno, "demand_gpus")
        if value < 0:
            raise ParseError(lineno, "negative demand")
        by_org.setdefault(org, []).append((_parse_int(start, lineno, "bucket_start_s"), value))
    out = []
    for org, rows in by_org.items():
        rows.sort()
        starts = [r[0] for r in rows]
        if any(b - a != granularity for a, b in zip(starts, starts[1:])):
            raise ParseError(0, f"org {org}: buckets are not contiguous")
        out.append(UsageSeries(org, [r[1] for r in rows], granularity, start=starts[0]))
    return out


def write_usage(series: Iterable[UsageSeries], path) -> None:
    rows = [USAGE_HEADER]
    for s in series:
        for t, v in zip(s.bucket_times(), s.values):
            rows.append(f"{s.org_id},{int(t)},{_fmt_num(v)}")
    Path(path).write_text("\n".join(rows) + "\n")


# ---------------------------------------------------------------- aggregation


def _peak_per_bucket(intervals, start: int, end: int, granularity: int) -> np.ndarray:
    n = (end - start) // granularity
    out = np.zeros(n)
    events = []
    for s, e, g in intervals:
        if e <= start or s >= end or e <= s:
            continue
        events.append((max(s, start), 1, g))
        events.append((min(e, end), 0, g))
    # releases sort before acquisitions at the same instant
    events.sort(key=lambda ev: (ev[0], ev[1]))
    level = 0.0
    i = 0
    for b in range(n):
        b_start = start + b * granularity
        b_end = b_start + granularity
        while i < len(events) and events[i][0] <= b_start and (events[i][0] < b_start or events[i][1] == 0):
            level += events[i][2] if events[i][1] else -events[i][2]
            i += 1
        peak = level
        while i < len(events) and events[i][0] < b_end:
            level += events[i][2] if events[i][1] else -events[i][2]
            peak = max(peak, level)
            i += 1
        out[b] = max(peak, 0.0)
    return np.round(out, 9)


def aggregate_usage(
    source,
    granularity: int = HOUR,
    start: int = 0,
    end: Optional[int] = None,
    orgs: Optional[Sequence[str]] = None,
    attributes: Optional[dict] = None,
) -> list[UsageSeries]:
    """Peak concurrent HP GPU demand per organization and bucket.

    ``source`` is a list of tasks (assumed to run ``[submit, submit+duration)``)
    or a :class:`~gfsim.sim.SimLog`, in which case actual run intervals are used.
    """
    intervals: dict[str, list] = {}
    if hasattr(source, "records"):
        for rec in source.records.values():
            if not rec.task.is_hp:
                continue
            for run in rec.runs:
                stop = run.end if run.end is not None else source.end_time
                intervals.setdefault(rec.task.org_id, []).append((run.start, stop, rec.task.total_gpus))
        if end is None:
            end = source.end_time
    else:
        for t in source:
            if t.is_hp:
                intervals.setdefault(t.org_id, []).append((t.submit_time, t.submit_time + t.duration, t.total_gpus))
        if end is None:
            end = max((stop for v in intervals.values() for _, stop, _ in v), default=start)
    span = end - start
    if span < 0 or span % granularity:
        # round up to whole buckets
        end = start + -(-span // granularity) * granularity
    names = list(orgs) if orgs is not None else sorted(intervals)
    attributes = attributes or {}
    return [
        UsageSeries(o, _peak_per_bucket(intervals.get(o, []), start, end, granularity), granularity,
                    tuple(attributes.get(o, ())), start)
        for o in names
    ]


# ---------------------------------------------------------------- synthetic


@dataclass
class SyntheticConfig:
    """Synthetic multi-organization workload.

    Per-org sequences (``base_demand``, ``diurnal_amplitude``, ``weekly_dip``)
    are GPU counts / fractions; ``spot_fraction`` is the mean spot GPU load at
    multiplier 1 as a fraction of ``capacity_gpus``.
    """

    num_orgs: int = 4
    horizon_days: float = 3.0
    history_days: float = 28.0
    base_demand: tuple = (24.0, 20.0, 16.0, 12.0)
    diurnal_amplitude: tuple = (8.0, 10.0, 6.0, 4.0)
    weekly_dip: tuple = (0.0, 0.1, 0.357, 0.2)
    noise_std: float = 2.0
    spot_fraction: float = 0.12
    spot_multiplier: int = 1
    capacity_gpus: int = 128
    overload_factor: float = 1.0
    holidays: tuple = ()
    hp_median_duration: float = 2 * HOUR
    spot_median_duration: float = 1.5 * HOUR
    checkpoint_choices: tuple = (600, 1200, 1800)
    spot_checkpoint_prob: float = 0.3
    track_step: int = 900
    seed: int = 0

    def per_org(self, name: str) -> tuple:
        value = getattr(self, name)
        if np.isscalar(value):
            return (float(value),) * self.num_orgs
        value = tuple(float(v) for v in value)
        if len(value) != self.num_orgs:
            raise ConfigError(f"{name} must have one entry per organization")
        return value

    def validate(self) -> None:
        if self.num_orgs < 1:
            raise ConfigError("num_orgs must be >= 1")
        if self.horizon_days <= 0 or self.history_days < 0:
            raise ConfigError("horizon_days must be positive and history_days non-negative")
        base = self.per_org("base_demand")
        amp = self.per_org("diurnal_amplitude")
        dips = self.per_org("weekly_dip")
        if any(b < a for b, a in zip(base, amp)):
            raise ConfigError("base_demand must be >= diurnal_amplitude")
        if any(a < 0 for a in amp) or any(not 0 <= d < 1 for d in dips):
            raise ConfigError("amplitudes must be >= 0 and dips in [0, 1)")
        if self.spot_multiplier not in (1, 2, 4):
            raise ConfigError("spot_multiplier must be 1, 2 or 4")
        if not 0.0 <= self.spot_checkpoint_prob <= 1.0:
            raise ConfigError("spot_checkpoint_prob must lie in [0, 1]")
        if self.noise_std < 0 or self.spot_fraction < 0:
            raise ConfigError("noise_std and spot_fraction must be non-negative")
        if self.capacity_gpus <= 0 or self.overload_factor <= 0:
            raise ConfigError("capacity and overload factor must be positive")

    @property
    def org_ids(self) -> list[str]:
        return [f"org{i}" for i in range(self.num_orgs)]

    def org_attributes(self) -> dict[str, tuple[int, ...]]:
        # (org index, cluster affiliation)
        return {o: (i, i % 2) for i, o in enumerate(self.org_ids)}

    @property
    def attribute_cardinalities(self) -> tuple[int, ...]:
        return (self.num_orgs, 2)


def _seed_streams(seed: int, n: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def diurnal_shape(hours: np.ndarray) -> np.ndarray:
    """Unit-amplitude daily cycle peaking at 17:00 (inside the 10:00-24:00 busy window)."""
    return np.cos(2 * np.pi * (np.asarray(hours) % 24 - 17) / 24)


def is_weekend(t) -> np.ndarray:
    # t = 0 is Monday 00:00
    return (np.asarray(t) // DAY) % 7 >= 5


def demand_profile(config: SyntheticConfig) -> list[UsageSeries]:
    """Hourly target HP demand per organization over ``[-history, horizon)``."""
    config.validate()
    start = -int(round(config.history_days * DAY))
    end = int(round(config.horizon_days * DAY))
    start -= start % HOUR
    times = np.arange(start, end, HOUR)
    rng = _seed_streams(config.seed, 3)[0]
    base = config.per_org("base_demand")
    amp = config.per_org("diurnal_amplitude")
    dips = config.per_org("weekly_dip")
    hours = (times // HOUR) % 24
    weekend = is_weekend(times)
    rows = []
    for b, a, d in zip(base, amp, dips):
        level = b + a * diurnal_shape(hours)
        level = np.where(weekend, level * (1 - d), level)
        level = level + rng.normal(0.0, config.noise_std, size=len(times))
        rows.append(np.maximum(level, 0.0))
    demand = np.array(rows)
    limit = config.capacity_gpus * config.overload_factor
    total = demand.sum(axis=0)
    scale = np.where(total > limit, limit / np.maximum(total, 1e-12), 1.0)
    demand = demand * scale
    attrs = config.org_attributes()
    return [UsageSeries(o, demand[i], HOUR, attrs[o], start) for i, o in enumerate(config.org_ids)]


def _draw_size(rng, sizes, cap=None):
    vals = np.array([s for s, _ in sizes], dtype=float)
    w = np.array([p for _, p in sizes], dtype=float)
    if cap is not None:
        mask = vals <= cap
        if not mask.any():
            mask = vals == vals.min()
        vals, w = vals[mask], w[mask]
    return float(rng.choice(vals, p=w / w.sum()))


def _lognormal_duration(rng, median: float, lo: int, hi: int) -> int:
    return int(np.clip(round(median * math.exp(rng.normal(0.0, 0.7))), lo, hi))


def _hp_tasks(config: SyntheticConfig, profile: list[UsageSeries], rng) -> list[tuple]:
    """Spawn HP tasks per org so concurrent demand tracks the hourly profile."""
    raw = []
    step = config.track_step
    for series in profile:
        heap: list[tuple[int, float]] = []
        active = 0.0
        t0 = int(series.start)
        t_end = t0 + len(series) * HOUR
        for t in range(t0, t_end, step):
            while heap and heap[0][0] <= t:
                active -= heapq.heappop(heap)[1]
            target = series.values[(t - t0) // HOUR]
            while active < target - 0.5:
                gang = rng.random() < HP_GANG
                g = _draw_size(rng, HP_SIZES, cap=max(target - active, 1.0))
                pods = 2 if gang and g >= 1 and 2 * g <= target - active + g else 1
                submit = t + int(rng.integers(0, step))
                duration = _lognormal_duration(rng, config.hp_median_duration, 600, 12 * HOUR)
                interval = int(rng.choice(config.checkpoint_choices))
                raw.append((submit, series.org_id, pods, g, duration, interval))
                heapq.heappush(heap, (submit + duration, pods * g))
                active += pods * g
    return raw


def _spot_tasks(config: SyntheticConfig, rng, horizon: int) -> list[tuple]:
    sizes = np.array([s for s, _ in SPOT_SIZES])
    w = np.array([p for _, p in SPOT_SIZES])
    mean_gpus = float((sizes * w).sum() / w.sum()) * (1 + SPOT_GANG)
    mean_duration = config.spot_median_duration * math.exp(0.7**2 / 2)
    base_rate = config.spot_fraction * config.capacity_gpus / (mean_gpus * mean_duration)
    rate = base_rate * config.spot_multiplier
    n = int(rng.poisson(rate * horizon))
    submits = np.sort(rng.integers(0, horizon, size=n))
    orgs = config.org_ids
    raw = []
    for submit in submits:
        g = _draw_size(rng, SPOT_SIZES)
        pods = 2 if (g >= 1 and rng.random() < SPOT_GANG) else 1
        duration = _lognormal_duration(rng, config.spot_median_duration, 300, 6 * HOUR)
        interval = int(rng.choice(config.checkpoint_choices))
        if rng.random() >= config.spot_checkpoint_prob:
            interval = 0
        raw.append((int(submit), orgs[int(rng.integers(len(orgs)))], pods, g, duration, interval))
    return raw


def generate_synthetic(config: SyntheticConfig) -> tuple[list[Task], list[UsageSeries]]:
    """Build a trace for ``[0, horizon)`` plus realized HP usage history.

    HP tasks are generated from ``-history`` onwards so that the returned
    usage series (peak concurrent HP demand, hourly) covers the history
    window used to fit forecasters.  HP tasks still running at time 0 enter
    the trace at time 0 with their remaining duration.
    """
    config.validate()
    profile = demand_profile(config)
    _, hp_rng, spot_rng = _seed_streams(config.seed, 3)
    horizon = int(round(config.horizon_days * DAY))
    start = profile[0].start

    hp_raw = _hp_tasks(config, profile, hp_rng)
    history_tasks = []
    tasks = []
    for k, (submit, org, pods, g, duration, interval) in enumerate(hp_raw):
        tid = f"hp{k:06d}"
        full = Task(tid, 0, pods, g, Priority.HP, duration, org, ())
        history_tasks.append((submit, full))
        if submit >= horizon or submit + duration <= 0:
            continue
        if submit < 0:
            duration, submit = submit + duration, 0
        tasks.append(Task(tid, submit, pods, g, Priority.HP, duration, org,
                          expand_checkpoints(duration, interval)))
    for k, (submit, org, pods, g, duration, interval) in enumerate(_spot_tasks(config, spot_rng, horizon)):
        tasks.append(Task(f"sp{k:06d}", submit, pods, g, Priority.SPOT, duration, org,
                          expand_checkpoints(duration, interval)))
    tasks.sort(key=lambda t: (t.submit_time, t.id))

    intervals = {}
    for submit, t in history_tasks:
        intervals.setdefault(t.org_id, []).append((submit, submit + t.duration, t.total_gpus))
    attrs = config.org_attributes()
    usage = [
        UsageSeries(o, _peak_per_bucket(intervals.get(o, []), start, horizon, HOUR), HOUR, attrs[o], start)
        for o in config.org_ids
    ]
    return tasks, usage
