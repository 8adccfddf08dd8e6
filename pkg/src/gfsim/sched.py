"""Node scoring, gang placement, waste-aware preemption and greedy baselines."""

from __future__ import annotations

import bisect
import enum
import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .domain import EPS, ActiveRun, ClusterState, Node, Placement, Priority, Task

HOUR = 3600
DAY = 86400


class TaskNotRunning(RuntimeError):
    pass


class Variant(enum.Enum):
    GFS = "GFS"
    GFS_s = "GFS-s"
    GFS_p = "GFS-p"
    GFS_sp = "GFS-sp"
    FirstFit = "FirstFit"
    BestFit = "BestFit"

    @classmethod
    def parse(cls, label: str) -> "Variant":
        for v in cls:
            if label in (v.value, v.name):
                return v
        raise ValueError(f"unknown scheduler variant {label!r}")


@dataclass
class SchedulerPolicy:
    variant: Variant = Variant.GFS
    gamma: float = 0.8
    m: float = 3.0
    beta: float = 0.5
    short_window: int = HOUR
    long_window: int = DAY
    seed: int = 0
    rng: random.Random = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if isinstance(self.variant, str):
            self.variant = Variant.parse(self.variant)
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.m <= 1:
            raise ValueError("m must exceed 1")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        self.rng = random.Random(self.seed)

    @property
    def uses_quota(self) -> bool:
        return self.variant not in (Variant.FirstFit, Variant.BestFit)

    @property
    def is_baseline(self) -> bool:
        return self.variant in (Variant.FirstFit, Variant.BestFit)

    @property
    def full_scoring(self) -> bool:
        return self.variant in (Variant.GFS, Variant.GFS_p)

    @property
    def random_preemption(self) -> bool:
        return self.variant in (Variant.GFS_p, Variant.GFS_sp)


@dataclass(frozen=True)
class NodeScore:
    node_id: str
    score1: float
    score2: float
    score3: float

    def key(self):
        return (self.score1, self.score2, self.score3)


@dataclass
class PreemptionPlan:
    node_id: str
    victims: list[str]
    freed_gpus: list[int]
    waste: float = 0.0
    cost: float = 0.0


def _clamp(x: float) -> float:
    return min(max(x, 0.0), 1.0)


# ---------------------------------------------------------------- scores


def score_packing(node) -> float:
    idle = node.total_gpus - node.hp_gpus - node.spot_gpus
    return _clamp(1.0 - idle / node.total_gpus)


def score_colocation(node, priority: Priority) -> float:
    held = node.hp_gpus if priority == Priority.HP else node.spot_gpus
    return _clamp(held / node.total_gpus)


def _events_in(events: Sequence[int], since: float, now: float) -> int:
    return bisect.bisect_right(events, now) - bisect.bisect_right(events, since)


def weighted_eviction_rate(node, gamma: float, now: float, short_window: int = HOUR,
                           long_window: int = DAY) -> float:
    e_short = _events_in(node.eviction_events, now - short_window, now)
    e_long = _events_in(node.eviction_events, now - long_window, now)
    return gamma * e_short + (1 - gamma) * e_long / (long_window / HOUR)


def score_eviction_from_rate(rate: float, priority: Priority, m: float) -> float:
    penalty = 0.01 * m**rate
    if priority == Priority.HP:
        return min(_clamp(penalty), 1.0)
    return max(_clamp(1.0 - penalty), 0.0)


def score_eviction(node, priority: Priority, m: float, gamma: float, now: float, **windows) -> float:
    return score_eviction_from_rate(weighted_eviction_rate(node, gamma, now, **windows), priority, m)


def score_node(node, priority: Priority, policy: SchedulerPolicy, now: float) -> NodeScore:
    rate = weighted_eviction_rate(node, policy.gamma, now, policy.short_window, policy.long_window)
    return NodeScore(node.id, score_packing(node), score_colocation(node, priority),
                     score_eviction_from_rate(rate, priority, policy.m))


# ---------------------------------------------------------------- planning view


class _NodeView:
    """Scratch copy of a node's occupancy so a gang can be placed tentatively."""

    __slots__ = ("node", "id", "index", "total_gpus", "occupancy", "hp_gpus", "spot_gpus", "eviction_events")

    def __init__(self, node: Node):
        self.node = node
        self.id = node.id
        self.index = node.index
        self.total_gpus = node.total_gpus
        self.occupancy = list(node.occupancy)
        self.hp_gpus = node.hp_gpus
        self.spot_gpus = node.spot_gpus
        self.eviction_events = node.eviction_events

    @property
    def free(self) -> float:
        return self.total_gpus - self.hp_gpus - self.spot_gpus

    def idle_gpus(self) -> list[int]:
        return [k for k, o in enumerate(self.occupancy) if o <= EPS]

    def fractional_slot(self, g: float) -> Optional[int]:
        """Fullest GPU that still fits a fractional pod of size ``g``."""
        best = None
        for k, o in enumerate(self.occupancy):
            if 1.0 - o + EPS >= g and (best is None or o > self.occupancy[best]):
                best = k
        return best

    def fits(self, g: float) -> bool:
        if g < 1.0:
            return self.fractional_slot(g) is not None
        return len(self.idle_gpus()) >= g

    def take(self, g: float, priority: Priority) -> tuple[int, ...]:
        if g < 1.0:
            gpus = (self.fractional_slot(g),)
            self.occupancy[gpus[0]] += g
        else:
            gpus = tuple(self.idle_gpus()[: int(round(g))])
            for k in gpus:
                self.occupancy[k] = 1.0
        if priority == Priority.HP:
            self.hp_gpus += g if g < 1.0 else len(gpus)
        else:
            self.spot_gpus += g if g < 1.0 else len(gpus)
        return gpus


def _placement(task: Task, picks: list[tuple[int, tuple[int, ...]]], nodes: Sequence[Node],
               victims: Sequence[str] = ()) -> Placement:
    assignments: dict[str, int] = {}
    gpus = []
    frac = task.gpus_per_pod if task.fractional else 1.0
    for idx, ks in picks:
        nid = nodes[idx].id
        assignments[nid] = assignments.get(nid, 0) + 1
        gpus.append((idx, ks, frac))
    return Placement(task.id, assignments, tuple(gpus), tuple(victims))


# ---------------------------------------------------------------- non-preemptive


def _rank_key(view: _NodeView, task: Task, policy: SchedulerPolicy, rates: dict[int, float]):
    """Larger is better; node index enters negated so ties go to the lowest id."""
    v = policy.variant
    if v == Variant.FirstFit:
        return (-view.index,)
    if v == Variant.BestFit:
        return (-(view.free - task.gpus_per_pod), -view.index)
    s1 = score_packing(view)
    if not policy.full_scoring:
        return (s1, -view.index)
    s2 = score_colocation(view, task.priority)
    s3 = score_eviction_from_rate(rates[view.index], task.priority, policy.m)
    return (s1, s2, s3, -view.index)


def schedule_nonpreemptive(nodes: Sequence[Node], task: Task, now: float,
                           policy: Optional[SchedulerPolicy] = None) -> Optional[Placement]:
    """Place the gang pod by pod on a scratch view; ``None`` if any pod fails."""
    policy = policy or SchedulerPolicy()
    views = [_NodeView(n) for n in nodes]
    rates = {v.index: weighted_eviction_rate(v, policy.gamma, now, policy.short_window, policy.long_window)
             for v in views}
    breaker = policy.full_scoring and task.priority == Priority.SPOT
    g = task.gpus_per_pod
    picks = []
    for _ in range(task.pods):
        best, best_key = None, None
        for view in views:
            if not view.fits(g):
                continue
            if breaker and score_eviction_from_rate(rates[view.index], Priority.SPOT, policy.m) <= 0.0:
                continue
            key = _rank_key(view, task, policy, rates)
            if best_key is None or key > best_key:
                best, best_key = view, key
        if best is None:
            return None
        picks.append((best.index, best.take(g, task.priority)))
    return _placement(task, picks, nodes)


# ---------------------------------------------------------------- preemption


def compute_waste(run: Optional[ActiveRun], now: float) -> float:
    """GPU-seconds of progress lost if ``run`` were evicted at ``now``."""
    if run is None or run.draining:
        raise TaskNotRunning("task holds no active run")
    return run.task.total_gpus * (now - run.last_checkpoint_time(now))


def preemption_cost(plan: PreemptionPlan, G: int, F: int, beta: float, total_gpu_time: float) -> float:
    n = len(plan.victims)
    denom = G + F + n
    first = (F + n) / denom if denom else 0.0
    if plan.waste == 0:
        return first
    if total_gpu_time <= 0:
        raise ValueError("total_gpu_time must be positive")
    return first + beta * plan.waste / total_gpu_time


class _PreemptView:
    def __init__(self, nodes: Sequence[Node], running: dict[str, ActiveRun]):
        self.nodes = nodes
        self.running = running
        self.taken: set[tuple[int, int]] = set()
        self.victims: list[str] = []

    def _usable(self, node: Node, k: int, extra: set[str]) -> bool:
        if (node.index, k) in self.taken:
            return False
        for tid in node.owners[k]:
            if tid in extra or tid in self.victims:
                continue
            return False
        return True

    def usable_gpus(self, node: Node, extra: set[str]) -> list[int]:
        return [k for k in range(node.total_gpus) if self._usable(node, k, extra)]

    def spot_tenants(self, node: Node) -> list[str]:
        seen = []
        for owners in node.owners:
            for tid in owners:
                run = self.running.get(tid)
                if run is None or run.draining or run.task.is_hp:
                    continue
                if tid in self.victims or tid in seen:
                    continue
                seen.append(tid)
        return sorted(seen)


def _greedy_victims(view: _PreemptView, node: Node, order: list[str], need: int) -> list[str]:
    chosen = list(order)
    for tid in order:
        trial = [t for t in chosen if t != tid]
        if len(view.usable_gpus(node, set(trial))) >= need:
            chosen = trial
    return chosen


def _pick_gpus(view: _PreemptView, node: Node, victims: list[str], need: int) -> list[int]:
    """Prefer GPUs that are free already, then those released by the victims."""
    usable = view.usable_gpus(node, set(victims))
    free_now = [k for k in usable if not node.owners[k]]
    rest = [k for k in usable if node.owners[k]]
    return (free_now + rest)[:need]


def plan_preemption(view: _PreemptView, node: Node, need: int, now: float, policy: SchedulerPolicy,
                    G: int, F: int, total_gpu_time: float) -> Optional[PreemptionPlan]:
    tenants = view.spot_tenants(node)
    if len(view.usable_gpus(node, set(tenants))) < need:
        return None
    wastes = {tid: compute_waste(view.running[tid], now) for tid in tenants}
    if policy.is_baseline:
        # evict the most recently started tenants until the pod fits
        order = sorted(tenants, key=lambda t: (-view.running[t].start, t))
        victims = []
        for tid in order:
            if len(view.usable_gpus(node, set(victims))) >= need:
                break
            victims.append(tid)
    else:
        if policy.random_preemption:
            order = list(tenants)
            policy.rng.shuffle(order)
        else:
            order = sorted(tenants, key=lambda t: (-wastes[t], t))
        victims = _greedy_victims(view, node, order, need)
    plan = PreemptionPlan(node.id, victims, _pick_gpus(view, node, victims, need),
                          sum(wastes[t] for t in victims))
    plan.cost = preemption_cost(plan, G, F, policy.beta, total_gpu_time)
    return plan


def schedule_preemptive(nodes: Sequence[Node], running: dict[str, ActiveRun], task: Task, now: float,
                        policy: Optional[SchedulerPolicy] = None, G: int = 0, F: int = 0,
                        total_gpu_time: float = 1.0) -> Optional[Placement]:
    """Place an HP gang by evicting spot tasks; ``None`` when even that is impossible.

    Fractional HP requests are not placed preemptively.
    """
    policy = policy or SchedulerPolicy()
    if not task.is_hp or task.fractional:
        return None
    need = int(round(task.gpus_per_pod))
    view = _PreemptView(nodes, running)
    picks = []
    for _ in range(task.pods):
        plans = []
        for node in nodes:
            plan = plan_preemption(view, node, need, now, policy, G, F, total_gpu_time)
            if plan is not None:
                plans.append((node, plan))
        if not plans:
            return None
        if policy.is_baseline:
            if policy.variant == Variant.FirstFit:
                node, plan = plans[0]
            else:
                node, plan = min(plans, key=lambda np_: (len(view.usable_gpus(np_[0], set(np_[1].victims))) - need,
                                                         np_[0].index))
        elif policy.random_preemption:
            node, plan = plans[policy.rng.randrange(len(plans))]
        else:
            node, plan = min(plans, key=lambda np_: (np_[1].cost, np_[0].index))
        for tid in plan.victims:
            view.victims.append(tid)
        for k in plan.freed_gpus:
            view.taken.add((node.index, k))
        picks.append((node.index, tuple(plan.freed_gpus)))
    return _placement(task, picks, nodes, view.victims)


# ---------------------------------------------------------------- dispatch


def _total_gpu_time(state: ClusterState) -> float:
    return state.capacity * max(state.now, 1)


def schedule(task: Task, state: ClusterState, quota, policy: SchedulerPolicy, now: float) -> Optional[Placement]:
    """Quota admission, then non-preemptive placement, then preemption for HP tasks."""
    from .quota import quota_satisfy

    if policy.uses_quota and quota is not None and not quota_satisfy(task, state, quota):
        return None
    placed = schedule_nonpreemptive(state.nodes, task, now, policy)
    if placed is not None or not task.is_hp:
        return placed
    return schedule_preemptive(state.nodes, state.running, task, now, policy,
                               state.completed_spot, state.evicted_spot, _total_gpu_time(state))


def schedule_baseline(task: Task, state: ClusterState, policy: SchedulerPolicy, now: float,
                      quota=None) -> Optional[Placement]:
    if policy.variant == Variant.GFS:
        raise ValueError("GFS is not a baseline variant")
    return schedule(task, state, quota, policy, now)
