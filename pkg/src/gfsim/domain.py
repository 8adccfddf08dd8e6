"""Core data model: tasks, run records, nodes and cluster state."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

EPS = 1e-9


class Priority(enum.IntEnum):
    SPOT = 0
    HP = 1


class MalformedTask(ValueError):
    """A task violates one of its structural invariants."""

    def __init__(self, field_name: str, reason: str):
        super().__init__(f"{field_name}: {reason}")
        self.field = field_name
        self.reason = reason


@dataclass(frozen=True)
class RunRecord:
    """One run of a task: ``[start, end)`` and the checkpoint index reached.

    ``checkpoint`` indexes into the task's milestone list, 1-based; 0 means
    no milestone has been reached yet.
    """

    start: int
    end: Optional[int] = None
    checkpoint: int = 0
    evicted: bool = False

    @property
    def closed(self) -> bool:
        return self.end is not None

    @property
    def length(self) -> int:
        if self.end is None:
            raise ValueError("run is still open")
        return self.end - self.start


@dataclass(frozen=True)
class Task:
    id: str
    submit_time: int
    pods: int
    gpus_per_pod: float
    priority: Priority
    duration: int
    org_id: str = ""
    checkpoints: tuple[int, ...] = ()
    runtime_logs: tuple[RunRecord, ...] = ()

    @property
    def total_gpus(self) -> float:
        return self.pods * self.gpus_per_pod

    @property
    def is_hp(self) -> bool:
        return self.priority == Priority.HP

    @property
    def fractional(self) -> bool:
        return self.gpus_per_pod < 1.0

    def milestone(self, index: int) -> float:
        """Offset of milestone ``index`` with ``c_0 = 0`` and ``c_{D+1} = inf``."""
        if index <= 0:
            return 0
        if index > len(self.checkpoints):
            return float("inf")
        return self.checkpoints[index - 1]

    def checkpoint_for(self, progress: float) -> int:
        """Largest milestone index whose offset is <= ``progress``."""
        lo, hi = 0, len(self.checkpoints)
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if self.checkpoints[mid - 1] <= progress:
                lo = mid
            else:
                hi = mid - 1
        return lo


def expand_checkpoints(duration: int, interval: int) -> tuple[int, ...]:
    """Periodic checkpoints every ``interval`` seconds, up to ``duration``."""
    if interval <= 0:
        return ()
    return tuple(range(interval, duration + 1, interval))


def validate_task(task: Task) -> None:
    """Raise :class:`MalformedTask` if any task invariant is violated."""
    if not task.id:
        raise MalformedTask("id", "empty identifier")
    if task.pods < 1:
        raise MalformedTask("pods", "w_i >= 1 violated")
    g = task.gpus_per_pod
    if not g > 0:
        raise MalformedTask("gpus_per_pod", "g_i > 0 violated")
    if g > 8:
        raise MalformedTask("gpus_per_pod", "g_i <= 8 violated")
    if g > 1 and abs(g - round(g)) > EPS:
        raise MalformedTask("gpus_per_pod", "multi-card requests must be whole GPUs")
    if task.duration <= 0:
        raise MalformedTask("duration", "must be positive")
    if task.submit_time < 0:
        raise MalformedTask("submit_time", "must be non-negative")
    prev = 0
    for c in task.checkpoints:
        if c <= prev:
            raise MalformedTask("checkpoints", "non-ascending")
        prev = c
    if task.checkpoints and task.checkpoints[-1] > task.duration:
        raise MalformedTask("checkpoints", "milestone beyond duration")
    runs = task.runtime_logs
    for k, run in enumerate(runs):
        if run.end is None:
            if k != len(runs) - 1:
                raise MalformedTask("runtime_logs", "open run followed by another run")
        elif run.end <= run.start:
            raise MalformedTask("runtime_logs", "empty or inverted run")
        if k and run.start < runs[k - 1].end:
            raise MalformedTask("runtime_logs", "overlapping runs")
        if k and run.checkpoint < runs[k - 1].checkpoint:
            raise MalformedTask("runtime_logs", "checkpoint index decreased")


class Node:
    """A machine with ``total_gpus`` cards tracked at fractional granularity.

    ``owners[k]`` maps task id to the fraction of GPU ``k`` it holds.  A
    full-card pod holds exactly 1.0 of a GPU and is its only owner.
    """

    def __init__(self, id, total_gpus: int, cluster_id: str = "", gpu_model: str = ""):
        if total_gpus < 1:
            raise ValueError("total_gpus must be positive")
        self.id = id
        self.cluster_id = cluster_id
        self.gpu_model = gpu_model
        self.total_gpus = int(total_gpus)
        self.occupancy = [0.0] * self.total_gpus
        self.owners: list[dict[str, float]] = [{} for _ in range(self.total_gpus)]
        self.hp_gpus = 0.0
        self.spot_gpus = 0.0
        self.eviction_events: list[int] = []
        self.index = 0

    def __repr__(self):
        return f"Node({self.id!r}, {self.total_gpus} GPUs, hp={self.hp_gpus:g}, spot={self.spot_gpus:g})"

    @property
    def free_gpus(self) -> float:
        return max(self.total_gpus - self.hp_gpus - self.spot_gpus, 0.0)

    @property
    def idle_whole_gpus(self) -> int:
        return sum(1 for o in self.occupancy if o <= EPS)

    def allocate(self, gpu: int, task_id: str, fraction: float, priority: Priority) -> None:
        if self.occupancy[gpu] + fraction > 1.0 + EPS:
            raise RuntimeError(f"GPU {gpu} on node {self.id} over-committed")
        self.occupancy[gpu] += fraction
        self.owners[gpu][task_id] = self.owners[gpu].get(task_id, 0.0) + fraction
        if priority == Priority.HP:
            self.hp_gpus += fraction
        else:
            self.spot_gpus += fraction

    def release(self, gpu: int, task_id: str, priority: Priority) -> None:
        fraction = self.owners[gpu].pop(task_id)
        self.occupancy[gpu] -= fraction
        if self.occupancy[gpu] < EPS:
            self.occupancy[gpu] = 0.0
        if priority == Priority.HP:
            self.hp_gpus = max(self.hp_gpus - fraction, 0.0)
        else:
            self.spot_gpus = max(self.spot_gpus - fraction, 0.0)

    def record_eviction(self, now: int) -> None:
        self.eviction_events.append(now)

    def evictions_since(self, since: int) -> int:
        return sum(1 for t in self.eviction_events if t > since)

    def audit(self) -> list[str]:
        problems = []
        if self.hp_gpus + self.spot_gpus > self.total_gpus + 1e-6:
            problems.append(f"node {self.id}: hp+spot exceeds capacity")
        for k, (occ, owners) in enumerate(zip(self.occupancy, self.owners)):
            if occ > 1.0 + 1e-6:
                problems.append(f"node {self.id} gpu {k}: occupancy {occ}")
            if abs(sum(owners.values()) - occ) > 1e-6:
                problems.append(f"node {self.id} gpu {k}: owner sum mismatch")
            if any(v >= 1.0 - EPS for v in owners.values()) and len(owners) > 1:
                problems.append(f"node {self.id} gpu {k}: full-card pod shares GPU")
        return problems


@dataclass
class ActiveRun:
    """A task currently holding GPUs.

    ``base_checkpoint`` is the milestone the run resumed from; ``gpus`` lists
    ``(node_index, gpu_index, fraction)`` triples.  A draining run has received
    an eviction notice and only waits for its grace period to end.
    """

    task: Task
    start: int
    base_checkpoint: int = 0
    gpus: list = field(default_factory=list)
    draining: bool = False

    def progress(self, now: int) -> float:
        done = self.task.milestone(self.base_checkpoint) + (now - self.start)
        return min(done, self.task.duration)

    def checkpoint_at(self, now: int) -> int:
        return max(self.task.checkpoint_for(self.progress(now)), self.base_checkpoint)

    def last_checkpoint_time(self, now: int) -> float:
        """Wall-clock time of the newest milestone reached in this run, else the run start."""
        f = self.checkpoint_at(now)
        if f <= self.base_checkpoint:
            return self.start
        return self.start + self.task.milestone(f) - self.task.milestone(self.base_checkpoint)


@dataclass
class ClusterState:
    """Mutable cluster snapshot owned by the simulator loop."""

    nodes: list[Node]
    now: int = 0
    completed_spot: int = 0  # G
    evicted_spot: int = 0  # F
    running: dict[str, ActiveRun] = field(default_factory=dict)
    pending: dict[str, Task] = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = sorted(self.nodes, key=lambda n: n.id)
        for i, node in enumerate(self.nodes):
            node.index = i

    @property
    def capacity(self) -> int:
        return sum(n.total_gpus for n in self.nodes)

    @property
    def spot_allocated(self) -> float:
        return sum(n.spot_gpus for n in self.nodes)


@dataclass(frozen=True)
class Placement:
    """Outcome of a successful scheduling decision.

    ``gpus`` lists one ``(node_index, gpu_indices, fraction)`` entry per pod.
    """

    task_id: str
    assignments: dict
    gpus: tuple = ()
    evicted_task_ids: tuple[str, ...] = ()

    @property
    def preemptive(self) -> bool:
        return bool(self.evicted_task_ids)


def cluster_idle_gpus(state: ClusterState) -> float:
    return sum(n.total_gpus - n.hp_gpus - n.spot_gpus for n in state.nodes)
