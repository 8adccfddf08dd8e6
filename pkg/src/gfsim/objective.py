"""Schedule objective (eviction ratio vs. checkpointed progress), constraint audit, exhaustive oracle.

The objective weights each task by its allocation footprint, i.e. pods held
summed over time, so for task ``i`` with total run time ``R_i`` the weight
is ``w_i * R_i``.  With ``E_i`` runs and last achieved milestone ``c_i``::

    sum(W_i (E_i - 1)) / sum(W_i E_i)  -  alpha * sum(W_i w_i g_i c_i) / (C * T)
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .domain import EPS, RunRecord, Task

MAX_TASKS = 5
MAX_NODES = 3
MAX_SLOTS = 20


class IncompleteLog(ValueError):
    pass


class InstanceTooLarge(ValueError):
    pass


def objective_from_runs(items: Iterable[tuple[Task, Sequence[RunRecord]]], capacity: float, horizon: float,
                        alpha: float = 0.5) -> float:
    num = den = progress = 0.0
    for task, runs in items:
        if not runs:
            continue
        if any(r.end is None for r in runs):
            raise IncompleteLog(f"task {task.id} has an open run")
        weight = task.pods * sum(r.end - r.start for r in runs)
        E = len(runs)
        num += weight * (E - 1)
        den += weight * E
        progress += weight * task.pods * task.gpus_per_pod * task.milestone(runs[-1].checkpoint)
    first = num / den if den else 0.0
    if capacity * horizon <= 0:
        return first
    return first - alpha * progress / (capacity * horizon)


def objective_value(log, alpha: float = 0.5, horizon: Optional[float] = None) -> float:
    """Objective of a finished simulation log; ``horizon`` defaults to the log's end time."""
    T = log.end_time if horizon is None else horizon
    return objective_from_runs(((r.task, r.runs) for r in log.records.values()), log.capacity, T, alpha)


# ---------------------------------------------------------------- audit


def audit_schedule(log) -> list[str]:
    """Check a log against capacity, gang, HP-never-evicted and checkpoint-progress rules."""
    problems = []
    usage: dict[str, list[tuple[int, int, float]]] = {}
    for rec in log.records.values():
        task = rec.task
        runs = rec.runs
        if len(rec.allocations) != len(runs):
            problems.append(f"{task.id}: run/allocation count mismatch")
            continue
        for k, (run, alloc) in enumerate(zip(runs, rec.allocations)):
            if run.end is None:
                problems.append(f"{task.id}: run {k + 1} still open")
                continue
            gpus = sum(len(ks) for _, ks, _ in alloc)
            pods = gpus if task.fractional else gpus / task.gpus_per_pod
            if abs(pods - task.pods) > EPS:
                problems.append(f"{task.id}: run {k + 1} holds {pods} pods, needs {task.pods}")
            for node_id, ks, frac in alloc:
                usage.setdefault(node_id, []).append((run.start, run.end, len(ks) * frac))
            if k and run.start <= runs[k - 1].end:
                problems.append(f"{task.id}: run {k + 1} starts before the previous run released its pods")
            prev = runs[k - 1].checkpoint if k else 0
            if run.checkpoint < prev:
                problems.append(f"{task.id}: checkpoint index decreased")
            done = task.milestone(run.checkpoint) - task.milestone(prev)
            nxt = task.milestone(run.checkpoint + 1) - task.milestone(prev)
            if not done <= run.end - run.start < nxt:
                problems.append(f"{task.id}: run {k + 1} length {run.end - run.start} inconsistent with checkpoints")
        if task.is_hp and (len(runs) > 1 or any(r.evicted for r in runs)):
            problems.append(f"{task.id}: HP task evicted")
        if rec.finish is not None:
            done = sum(r.end - r.start for r in runs if r.end is not None)
            lost = sum(r.end - r.start - (task.milestone(r.checkpoint) - task.milestone(runs[k - 1].checkpoint if k else 0))
                       for k, r in enumerate(runs) if r.evicted)
            if abs(done - lost - task.duration) > EPS:
                problems.append(f"{task.id}: useful run time {done - lost} != duration {task.duration}")
    for node_id, spans in usage.items():
        cap = log.node_sizes[node_id]
        deltas = sorted([(s, +g) for s, _, g in spans] + [(e, -g) for _, e, g in spans], key=lambda x: (x[0], x[1]))
        level = 0.0
        for t, d in deltas:
            level += d
            if level > cap + 1e-6:
                problems.append(f"node {node_id}: {level} GPUs in use at t={t} exceeds {cap}")
                break
    return problems


# ---------------------------------------------------------------- oracle


@dataclass
class OracleResult:
    objective: float
    runs: dict[str, list[RunRecord]] = field(default_factory=dict)

    @property
    def evictions(self) -> int:
        return sum(len(r) - 1 for r in self.runs.values())


def _packs(gpus: list[int], sizes: tuple[int, ...]) -> bool:
    """Whole-GPU pods (largest first) into nodes without splitting a pod."""
    free = list(sizes)

    def place(i: int) -> bool:
        if i == len(gpus):
            return True
        tried = set()
        for j in range(len(free)):
            if free[j] >= gpus[i] and free[j] not in tried:
                tried.add(free[j])
                free[j] -= gpus[i]
                if place(i + 1):
                    return True
                free[j] += gpus[i]
        return False

    return place(0)


def exhaustive_oracle(tasks: Sequence[Task], node_sizes: Sequence[int], horizon: int,
                      alpha: float = 0.5) -> OracleResult:
    """Minimum objective over every slot-level schedule that finishes all tasks by ``horizon``.

    Pods may land on any node in any slot, HP runs are uninterrupted, a spot
    task may stop at any slot boundary (rolling back to its last milestone) and
    cannot restart in the slot it stopped.
    """
    if len(tasks) > MAX_TASKS or len(node_sizes) > MAX_NODES or horizon > MAX_SLOTS:
        raise InstanceTooLarge(f"at most {MAX_TASKS} tasks, {MAX_NODES} nodes, {MAX_SLOTS} slots")
    for t in tasks:
        if abs(t.gpus_per_pod - round(t.gpus_per_pod)) > EPS:
            raise InstanceTooLarge("oracle needs whole-GPU requests")
    n = len(tasks)
    sizes = tuple(sorted(node_sizes, reverse=True))
    pods = [[int(round(t.gpus_per_pod))] * t.pods for t in tasks]
    fits: dict[int, bool] = {}

    # Per-task key (done, running, base, run_len, runs_so_far, run_time).  The
    # objective depends only on these, so paths reaching the same key merge;
    # a back-pointer per key recovers one representative schedule.
    @functools.lru_cache(maxsize=None)
    def moves(i: int, local: tuple, t: int) -> tuple:
        """``(active_bit, next_local, closed_run)`` options for task ``i`` in slot ``t``."""
        done, running, base, run_len, E, R = local
        task = tasks[i]
        if done:
            return ((0, local, None),)
        if not running:
            if t < task.submit_time or (task.is_hp and E):
                return ((0, local, None),)
            if task.duration - task.milestone(base) > horizon - t:
                return ()  # can no longer finish
        out = []
        length = run_len + 1 if running else 1
        runs = E if running else E + 1
        if task.milestone(base) + length >= task.duration:
            final = task.checkpoint_for(task.duration)
            out.append((1 << i, (True, False, final, 0, runs, R + length), (t + 1 - length, t + 1, final)))
        else:
            out.append((1 << i, (False, True, base, length, runs, R), None))
        if running and not task.is_hp:
            reached = task.checkpoint_for(task.milestone(base) + run_len)
            out.append((0, (False, False, reached, 0, E, R + run_len), (t - run_len, t, reached)))
        elif not running:
            out.append((0, local, None))
        return tuple(out)

    def feasible_mask(mask: int) -> bool:
        if mask not in fits:
            active = tuple(i for i in range(n) if mask >> i & 1)
            gpus = sorted((g for i in active for g in pods[i]), reverse=True)
            fits[mask] = sum(gpus) <= sum(sizes) and _packs(gpus, sizes)
        return fits[mask]

    start = tuple((False, False, 0, 0, 0, 0) for _ in tasks)
    parents: list[dict] = []
    layer = {start}
    for t in range(horizon):
        back: dict = {}
        for state in sorted(layer):
            options = [moves(i, local, t) for i, local in enumerate(state)]
            if any(not o for o in options):
                continue
            for combo in itertools.product(*options):
                mask = 0
                for m in combo:
                    mask |= m[0]
                if mask and not feasible_mask(mask):
                    continue
                key = tuple(m[1] for m in combo)
                if key not in back:
                    back[key] = (state, tuple(m[2] for m in combo))
        parents.append(back)
        layer = set(back)

    def history(state: tuple) -> list[list[tuple]]:
        runs = [[] for _ in tasks]
        for t in range(horizon - 1, -1, -1):
            state, closed = parents[t][state]
            for i, c in enumerate(closed):
                if c is not None:
                    runs[i].append(c)
        return [r[::-1] for r in runs]

    best: Optional[OracleResult] = None
    total = sum(node_sizes)
    for state in sorted(layer):
        if not all(s[0] for s in state):
            continue
        runs = {
            tasks[i].id: [RunRecord(s, e, f, evicted=k < len(h) - 1) for k, (s, e, f) in enumerate(h)]
            for i, h in enumerate(history(state))
        }
        value = objective_from_runs(((t, runs[t.id]) for t in tasks), total, horizon, alpha)
        if best is None or value < best.objective - 1e-12:
            best = OracleResult(value, runs)
    if best is None:
        raise ValueError("no schedule finishes every task within the horizon")
    return best


@dataclass
class TinyInstance:
    tasks: list[Task]
    node_sizes: list[int]
    horizon: int


def tiny_instance(seed: int, horizon: int = 14, max_tasks: int = MAX_TASKS) -> TinyInstance:
    """Random instance small enough for :func:`exhaustive_oracle`.

    Every gang fits the cluster on its own; whether all tasks can finish by
    ``horizon`` is left to the caller.
    """
    import random

    from .domain import Priority, expand_checkpoints

    rng = random.Random(seed)
    sizes = [rng.choice([2, 4]) for _ in range(rng.randint(1, MAX_NODES))]
    tasks = []
    for i in range(rng.randint(2, max_tasks)):
        duration = rng.randint(1, 5)
        g = rng.choice([1, 2])
        pods = rng.randint(1, 2)
        if not _packs([g] * pods, tuple(sorted(sizes, reverse=True))):
            pods = 1
        prio = Priority.HP if rng.random() < 0.4 else Priority.SPOT
        tasks.append(Task(f"t{i}", rng.randint(0, 5), pods, g, prio, duration, "org0",
                          expand_checkpoints(duration, rng.randint(0, 2))))
    return TinyInstance(tasks, sizes, horizon)
