"""Discrete-event replay of a trace through a scheduler with the spot quota in the loop."""

from __future__ import annotations

import enum
import hashlib
import heapq
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .domain import ActiveRun, ClusterState, Node, Placement, Priority, RunRecord, Task
from .forecast import Forecaster, NaivePeakForecaster, OrgLinearForecaster
from .objective import IncompleteLog, objective_value
from .quota import (QuotaState, estimate_inventory, quota_satisfy, timeline_csv, window_eviction_rate,
                    window_max_wait)
from .sched import SchedulerPolicy, Variant, schedule
from .trace import HOUR, UsageSeries

LOG_HEADER = "time_s,event,task_id,node_ids,detail"
METRICS_HEADER = "variant,class,jct_mean_s,jct_p99_s,jqt_mean_s,eviction_rate,allocation_rate,objective"


class SimulationStalled(RuntimeError):
    pass


class EventKind(enum.IntEnum):
    TaskArrival = 0
    TaskFinish = 1
    CheckpointReached = 2
    EvictionNotice = 3
    GraceExpired = 4
    QuotaUpdate = 5
    SchedulePass = 6


@dataclass
class SimConfig:
    grace: int = 30
    p: float = 0.9
    H: int = 1
    theta: float = 3600.0
    update_interval: int = 300
    freeze_eta: bool = False
    guaranteed_only: bool = False
    eta_max: Optional[float] = None
    baseline_fcfs: bool = True  # baselines serve each class first-come first-served, no backfilling
    eta_growth: str = "quota"  # "quota": only quota-refused waits count toward l; "any": every spot wait
    alpha: float = 0.5
    stall_timeout: int = 14 * 86400
    audit: bool = False
    refit_every: int = 0

    def quota_state(self) -> QuotaState:
        return QuotaState(p=self.p, H=self.H, theta=self.theta, update_interval=self.update_interval,
                          freeze_eta=self.freeze_eta, guaranteed_only=self.guaranteed_only,
                          eta_max=self.eta_max)


@dataclass
class TaskRecord:
    task: Task
    runs: list[RunRecord] = field(default_factory=list)
    allocations: list[tuple] = field(default_factory=list)  # per run: ((node_id, gpus, fraction), ...)
    waits: list[list] = field(default_factory=list)  # [start, end] segments
    grace: float = 0.0  # seconds spent draining after eviction notices
    finish: Optional[int] = None
    resume: int = 0  # milestone index the next run starts from

    @property
    def evictions(self) -> int:
        return sum(1 for r in self.runs if r.evicted)

    @property
    def queue_time(self) -> float:
        return sum(e - s for s, e in self.waits if e is not None)


@dataclass
class SimLog:
    records: dict[str, TaskRecord]
    node_sizes: dict[str, int]
    lines: list[str]
    quota_timeline: list[tuple]
    seed: int
    config_hash: str
    end_time: int
    allocated_gpu_seconds: float
    audit_failures: list[str] = field(default_factory=list)

    @property
    def capacity(self) -> int:
        return sum(self.node_sizes.values())

    def serialize(self) -> str:
        head = [f"# seed={self.seed} config_hash={self.config_hash}", LOG_HEADER]
        return "\n".join(head + self.lines) + "\n"

    def quota_csv(self) -> str:
        return timeline_csv(self.quota_timeline)


def _fmt(x) -> str:
    x = float(x)
    if x.is_integer():
        return str(int(x))
    return f"{x:.9g}"


def config_digest(*parts) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(repr(part).encode())
        h.update(b"\0")
    return h.hexdigest()[:16]


def fresh_nodes(nodes: Sequence[Node]) -> list[Node]:
    return [Node(n.id, n.total_gpus, n.cluster_id, n.gpu_model) for n in nodes]


def _fcfs_key(task: Task):
    return (-int(task.priority), task.submit_time, task.id)


def _queue_key(task: Task):
    # HP ahead of spot, then larger requests, larger gangs, earlier arrivals
    return (-int(task.priority), -task.total_gpus, -task.pods, task.submit_time, task.id)


class Simulator:
    def __init__(self, trace: Sequence[Task], nodes: Sequence[Node], policy: SchedulerPolicy,
                 config: Optional[SimConfig] = None, forecaster: Optional[Forecaster] = None,
                 usage_history: Sequence[UsageSeries] = (), seed: int = 0, config_hash: str = ""):
        self.config = config or SimConfig()
        self.policy = policy
        self.forecaster = forecaster
        self.seed = seed
        self.config_hash = config_hash or config_digest(self.config, policy.variant, policy.gamma, policy.m,
                                                        policy.beta, seed)
        self.state = ClusterState(fresh_nodes(nodes))
        self.node_by_id = {n.id: n for n in self.state.nodes}
        self.quota = self.config.quota_state()
        self.records = {t.id: TaskRecord(t) for t in trace}
        if len(self.records) != len(trace):
            raise ValueError("duplicate task ids in trace")
        self.lines: list[str] = []
        self.heap: list[tuple] = []
        self.seq = 0
        self.pass_at: Optional[int] = None
        self.arrivals_left = len(trace)
        self.allocated = 0.0
        self.alloc_integral = 0.0
        self.last_time = 0
        self.last_task_event = 0
        self.last_progress = 0
        self.handover: dict[str, list] = {}
        self.victims_of: dict[str, list[str]] = {}
        self.spot_runs: list[list] = []  # [start, end, evicted]
        self.spot_waits: list[list] = []
        self.quota_waits: dict[int, list] = {}  # wait segments during which the quota refused the task
        self.audit_failures: list[str] = []
        self._init_usage(trace, usage_history)
        for t in trace:
            self._push(t.submit_time, EventKind.TaskArrival, t.id)
        if policy.uses_quota:
            self._push(0, EventKind.QuotaUpdate, "")

    # ------------------------------------------------------------ bookkeeping

    def _init_usage(self, trace, usage_history):
        self.history = {s.org_id: s for s in usage_history}
        orgs = list(self.history)
        for t in trace:
            if t.is_hp and t.org_id not in self.history and t.org_id not in orgs:
                orgs.append(t.org_id)
        self.orgs = orgs
        self.demand = {o: 0.0 for o in orgs}
        self.buckets = {o: [0.0] for o in orgs}

    def _push(self, time, kind, task_id, payload=None):
        self.seq += 1
        heapq.heappush(self.heap, (int(time), int(kind), task_id, self.seq, payload))

    def _log(self, event: str, task_id: str = "", node_ids=(), detail: str = ""):
        self.lines.append(f"{self.state.now},{event},{task_id},{';'.join(node_ids)},{detail}")

    def _request_pass(self):
        if self.pass_at != self.state.now:
            self.pass_at = self.state.now
            self._push(self.state.now, EventKind.SchedulePass, "")

    def _advance(self, now: int):
        if now < self.last_time:
            raise RuntimeError("event time went backwards")
        self.alloc_integral += self.allocated * (now - self.last_time)
        hour = now // HOUR
        for org in self.orgs:
            b = self.buckets[org]
            while len(b) <= hour:
                b.append(self.demand[org])
        self.last_time = now
        self.state.now = now

    def _set_demand(self, task: Task, delta: float):
        if not task.is_hp or task.org_id not in self.demand:
            return
        org = task.org_id
        self.demand[org] = max(self.demand[org] + delta, 0.0)
        b = self.buckets[org]
        b[-1] = max(b[-1], self.demand[org])

    def _allocate(self, task: Task, node_idx: int, gpu: int, frac: float):
        self.state.nodes[node_idx].allocate(gpu, task.id, frac, task.priority)
        self.allocated += frac

    def _release_all(self, run: ActiveRun):
        for node_idx, gpu, frac in run.gpus:
            node = self.state.nodes[node_idx]
            if run.task.id in node.owners[gpu]:
                node.release(gpu, run.task.id, run.task.priority)
                self.allocated -= frac
        self.allocated = max(self.allocated, 0.0)

    # ------------------------------------------------------------ lifecycle

    def _start_run(self, task: Task, gpus: list[tuple[int, int, float]], already: set = frozenset()):
        rec = self.records[task.id]
        now = self.state.now
        for node_idx, gpu, frac in gpus:
            if (node_idx, gpu) not in already:
                self._allocate(task, node_idx, gpu, frac)
        run = ActiveRun(task, now, rec.resume, list(gpus))
        self.state.running[task.id] = run
        self.state.pending.pop(task.id, None)
        if rec.waits and rec.waits[-1][1] is None:
            rec.waits[-1][1] = now
        rec.runs.append(RunRecord(now, None, rec.resume))
        pods = []
        per_node: dict[int, list[int]] = {}
        for node_idx, gpu, frac in gpus:
            per_node.setdefault(node_idx, []).append(gpu)
        rec.allocations.append(tuple((self.state.nodes[i].id, tuple(ks), gpus[0][2]) for i, ks in per_node.items()))
        if not task.is_hp:
            self.spot_runs.append([now, None, False])
        token = len(rec.runs)
        remaining = task.duration - task.milestone(rec.resume)
        self._push(now + remaining, EventKind.TaskFinish, task.id, token)
        self._schedule_checkpoint(run, token)
        self._log("TaskStart", task.id, [self.state.nodes[i].id for i in per_node],
                  f"run={token};from_checkpoint={rec.resume}")

    def _schedule_checkpoint(self, run: ActiveRun, token: int):
        nxt = run.checkpoint_at(self.state.now) + 1
        if nxt > len(run.task.checkpoints):
            return
        offset = run.task.milestone(nxt) - run.task.milestone(run.base_checkpoint)
        when = run.start + offset
        if when < run.start + run.task.duration - run.task.milestone(run.base_checkpoint):
            self._push(when, EventKind.CheckpointReached, run.task.id, (token, nxt))

    def _enqueue(self, task: Task):
        rec = self.records[task.id]
        self.state.pending[task.id] = task
        seg = [self.state.now, None]
        rec.waits.append(seg)
        if not task.is_hp:
            self.spot_waits.append(seg)  # shared with rec.waits, closed on start

    def _evict(self, victim_id: str, preemptor: str):
        run = self.state.running[victim_id]
        rec = self.records[victim_id]
        now = self.state.now
        reached = run.checkpoint_at(now)
        rec.runs[-1] = replace(rec.runs[-1], end=now, checkpoint=reached, evicted=True)
        rec.resume = reached
        run.draining = True
        self.state.evicted_spot += 1
        for sr in reversed(self.spot_runs):
            if sr[1] is None and sr[0] == run.start:
                sr[1], sr[2] = now, True
                break
        hosts = sorted({i for i, _, _ in run.gpus})
        for i in hosts:
            self.state.nodes[i].record_eviction(now)
        self._log("EvictionNotice", victim_id, [self.state.nodes[i].id for i in hosts],
                  f"by={preemptor};checkpoint={reached}")
        self._push(now + self.config.grace, EventKind.GraceExpired, victim_id, "victim")

    def _finish_drain(self, victim_id: str):
        run = self.state.running.get(victim_id)
        if run is None or not run.draining:
            return
        self._release_all(run)
        del self.state.running[victim_id]
        rec = self.records[victim_id]
        rec.grace += self.state.now - rec.runs[-1].end
        self._log("GraceExpired", victim_id, (), "released")
        self._enqueue(run.task)

    def _apply(self, placement: Placement):
        task = self.records[placement.task_id].task
        gpus = []
        for node_idx, ks, frac in placement.gpus:
            for k in ks:
                gpus.append((node_idx, k, frac))
        if not placement.evicted_task_ids:
            self._start_run(task, gpus)
            return
        for vid in placement.evicted_task_ids:
            self._evict(vid, task.id)
        reserved = set()
        for node_idx, k, frac in gpus:
            if not self.state.nodes[node_idx].owners[k]:
                self._allocate(task, node_idx, k, frac)
                reserved.add((node_idx, k))
        self.state.pending.pop(task.id, None)
        self.handover[task.id] = [gpus, reserved]
        self.victims_of[task.id] = list(placement.evicted_task_ids)
        self._log("Preempt", task.id, sorted({self.state.nodes[i].id for i, _, _ in gpus}),
                  "victims=" + ";".join(placement.evicted_task_ids))
        self._push(self.state.now + self.config.grace, EventKind.GraceExpired, task.id, "preemptor")

    def _finish(self, task_id: str, token: int):
        rec = self.records[task_id]
        run = self.state.running.get(task_id)
        if run is None or run.draining or len(rec.runs) != token:
            return
        task = rec.task
        now = self.state.now
        final = task.checkpoint_for(task.duration)
        rec.runs[-1] = replace(rec.runs[-1], end=now, checkpoint=max(final, rec.resume))
        rec.finish = now
        self._release_all(run)
        del self.state.running[task_id]
        if task.is_hp:
            self._set_demand(task, -task.total_gpus)
        else:
            self.state.completed_spot += 1
            for sr in reversed(self.spot_runs):
                if sr[1] is None and sr[0] == run.start:
                    sr[1] = now
                    break
        self._log("TaskFinish", task_id, sorted({self.state.nodes[i].id for i, _, _ in run.gpus}), f"run={token}")

    # ------------------------------------------------------------ quota loop

    def _forecast_inventory(self) -> float:
        C = self.state.capacity
        if self.forecaster is None or not self.orgs:
            return float(C)
        now = self.state.now
        hour = now // HOUR
        origin = hour * HOUR
        steps = self.quota.H + (1 if now % HOUR else 0)
        L = self.forecaster.history_length
        dists = []
        for org in self.orgs:
            past = self.buckets[org][:hour]
            pre = self.history.get(org)
            if pre is not None and len(past) < L:
                values = np.concatenate([pre.values[pre.bucket_times() < 0], past])
            else:
                values = np.asarray(past, dtype=float)
            if len(values) < L:
                # not enough history for this org: reserve its current demand
                dists.append(_point(max(self.demand[org], max(values[-24:], default=0.0)), steps))
                continue
            attrs = pre.attributes if pre is not None else ()
            dist = self.forecaster.predict(org, attrs, values[-L:], origin)
            dists.append(dist)
        return estimate_inventory(dists, self.quota.p, steps, C)

    def _sa(self) -> float:
        if not self.quota.guaranteed_only:
            return self.state.spot_allocated
        now = self.state.now
        total = 0.0
        for run in self.state.running.values():
            if run.task.is_hp or run.draining:
                continue
            if run.task.duration - run.progress(now) >= self.quota.window:
                total += run.task.total_gpus
        return total

    def _quota_update(self):
        now = self.state.now
        q = self.quota
        window = q.window
        if now > 0 and now % window == 0:
            e = window_eviction_rate(self.spot_runs, now - window, now)
            waits = self.quota_waits.values() if self.config.eta_growth == "quota" else self.spot_waits
            l = window_max_wait(waits, now - window, now)
            before = q.eta
            q.observe(e, l)
            if q.eta != before:
                self._log("EtaUpdate", "", (), f"eta={_fmt(q.eta)};e={_fmt(e)};l={_fmt(l)}")
        if self.config.refit_every and now > 0 and now % self.config.refit_every == 0:
            self._refit()
        f = self._forecast_inventory()
        S0 = sum(n.total_gpus - n.hp_gpus - n.spot_gpus for n in self.state.nodes)
        q.recompute(now, f, S0, self._sa(), self.state.spot_allocated, self.state.capacity)
        self._log("QuotaUpdate", "", (), f"f={_fmt(f)};eta={_fmt(q.eta)};Q_H={_fmt(q.Q_H)}")
        if self._active():
            self._push(now + q.update_interval, EventKind.QuotaUpdate, "")

    def _refit(self):
        if not isinstance(self.forecaster, OrgLinearForecaster):
            return
        hour = self.state.now // HOUR
        series = []
        for org in self.orgs:
            pre = self.history.get(org)
            past = np.asarray(self.buckets[org][:hour], dtype=float)
            if pre is None:
                continue
            values = np.concatenate([pre.values[pre.bucket_times() < 0], past])
            series.append(UsageSeries(org, values, HOUR, pre.attributes, start=int(min(pre.start, 0))))
        if series:
            self.forecaster.fit(series, end=hour * HOUR)

    def _active(self) -> bool:
        return bool(self.arrivals_left or self.state.running or self.state.pending or self.handover)

    # ------------------------------------------------------------ main loop

    def _schedule_pass(self):
        if not self.state.pending:
            return
        fcfs = self.policy.is_baseline and self.config.baseline_fcfs
        queue = sorted(self.state.pending.values(), key=_fcfs_key if fcfs else _queue_key)
        blocked = set()  # classes whose FCFS head could not be placed in this pass
        for task in queue:
            if task.id not in self.state.pending or task.priority in blocked:
                continue
            if not self._worth_trying(task):
                if fcfs:
                    blocked.add(task.priority)
                continue
            if self.policy.uses_quota and not task.is_hp and not quota_satisfy(task, self.state, self.quota):
                seg = self.records[task.id].waits[-1]
                self.quota_waits.setdefault(id(seg), seg)
                continue
            placement = schedule(task, self.state, self.quota, self.policy, self.state.now)
            if placement is not None:
                self._apply(placement)
                self.last_progress = self.state.now
            elif fcfs:
                blocked.add(task.priority)

    def _worth_trying(self, task: Task) -> bool:
        """Cheap necessary conditions, so hopeless queue entries skip the planner."""
        g = task.gpus_per_pod
        nodes = self.state.nodes
        if task.fractional:
            return any(1.0 - o + 1e-9 >= g for n in nodes for o in n.occupancy)
        idle = sum(n.idle_whole_gpus for n in nodes)
        if idle >= task.total_gpus and max(n.idle_whole_gpus for n in nodes) >= g:
            return True
        if not task.is_hp:
            return False
        reclaim = sum(
            1 for n in nodes for owners in n.owners
            if all(not self.state.running[t].task.is_hp and not self.state.running[t].draining
                   for t in owners if t in self.state.running)
            and all(t in self.state.running for t in owners)
        )
        return reclaim >= task.total_gpus

    def _grace_expired(self, task_id: str, role: str):
        if role == "victim":
            self._finish_drain(task_id)
            self._request_pass()
            return
        for vid in self.victims_of.pop(task_id, []):
            self._finish_drain(vid)
        gpus, reserved = self.handover.pop(task_id)
        self._start_run(self.records[task_id].task, gpus, reserved)
        self._request_pass()

    def run(self) -> SimLog:
        while self.heap:
            time, kind, task_id, _, payload = heapq.heappop(self.heap)
            self._advance(time)
            kind = EventKind(kind)
            if kind not in (EventKind.QuotaUpdate, EventKind.SchedulePass):
                self.last_task_event = time
            if kind == EventKind.TaskArrival:
                task = self.records[task_id].task
                self.arrivals_left -= 1
                self._set_demand(task, task.total_gpus)
                self._enqueue(task)
                self._log("TaskArrival", task_id, (), f"class={'hp' if task.is_hp else 'spot'};gpus={_fmt(task.total_gpus)}")
                self._request_pass()
            elif kind == EventKind.TaskFinish:
                if task_id in self.state.running and not self.state.running[task_id].draining \
                        and len(self.records[task_id].runs) == payload:
                    self._finish(task_id, payload)
                    self._request_pass()
            elif kind == EventKind.CheckpointReached:
                token, idx = payload
                run = self.state.running.get(task_id)
                if run is not None and not run.draining and len(self.records[task_id].runs) == token:
                    self._log("CheckpointReached", task_id, (), f"checkpoint={idx}")
                    self._schedule_checkpoint(run, token)
            elif kind == EventKind.GraceExpired:
                self._grace_expired(task_id, payload)
            elif kind == EventKind.QuotaUpdate:
                self._quota_update()
                self._request_pass()
            elif kind == EventKind.SchedulePass:
                self.pass_at = None
                self._schedule_pass()
            if self.config.audit:
                for node in self.state.nodes:
                    self.audit_failures.extend(f"t={time}: {p}" for p in node.audit())
            if self.state.pending and not self.state.running and not self.arrivals_left and not self.handover:
                if self.state.now - self.last_progress > self.config.stall_timeout or not self.heap:
                    raise SimulationStalled(
                        f"{len(self.state.pending)} task(s) pending at t={self.state.now} with nothing left to run")
        return SimLog(self.records, {n.id: n.total_gpus for n in self.state.nodes}, self.lines,
                      list(self.quota.timeline), self.seed, self.config_hash, self.last_task_event,
                      self.alloc_integral, self.audit_failures)


def _point(value: float, steps: int):
    from .forecast import ForecastDistribution

    return ForecastDistribution(np.full(steps, float(value)), np.full(steps, 1e-6))


def run_simulation(trace: Sequence[Task], nodes: Sequence[Node], policy: SchedulerPolicy,
                   quota_config: Optional[SimConfig] = None, forecaster: Optional[Forecaster] = None,
                   seed: int = 0, usage_history: Sequence[UsageSeries] = (), config_hash: str = "") -> SimLog:
    """Replay ``trace``; an unfitted forecaster is first trained on ``usage_history``."""
    if forecaster is not None and not forecaster.fitted and usage_history:
        forecaster.fit(list(usage_history), end=0)
    sim = Simulator(trace, nodes, policy, quota_config, forecaster, usage_history, seed, config_hash)
    return sim.run()


# ---------------------------------------------------------------- metrics


@dataclass
class ClassMetrics:
    jct_mean: float = 0.0
    jct_p99: float = 0.0
    jqt_mean: float = 0.0
    eviction_rate: float = 0.0
    tasks: int = 0


@dataclass
class MetricsReport:
    hp: ClassMetrics
    spot: ClassMetrics
    allocation_rate: float
    objective: float
    variant: str = ""

    def rows(self) -> list[str]:
        out = []
        for name, m in (("hp", self.hp), ("spot", self.spot)):
            out.append(",".join([self.variant, name, _fmt(m.jct_mean), _fmt(m.jct_p99), _fmt(m.jqt_mean),
                                 _fmt(m.eviction_rate), _fmt(self.allocation_rate), _fmt(self.objective)]))
        return out


def nearest_rank(values: Sequence[float], q: float) -> float:
    if not values:
        return 0.0
    ordered = sorted(values)
    k = max(math.ceil(q * len(ordered)), 1)
    return float(ordered[k - 1])


def _class_metrics(records: list[TaskRecord]) -> ClassMetrics:
    if not records:
        return ClassMetrics()
    jct = [r.finish - r.task.submit_time for r in records]
    runs = sum(len(r.runs) for r in records)
    evictions = sum(r.evictions for r in records)
    return ClassMetrics(float(np.mean(jct)), nearest_rank(jct, 0.99), float(np.mean([r.queue_time for r in records])),
                        evictions / runs if runs else 0.0, len(records))


def compute_metrics(log: SimLog, alpha: float = 0.5, variant: str = "") -> MetricsReport:
    for rec in log.records.values():
        if rec.finish is None or any(r.end is None for r in rec.runs):
            raise IncompleteLog(f"task {rec.task.id} did not finish")
    hp = [r for r in log.records.values() if r.task.is_hp]
    spot = [r for r in log.records.values() if not r.task.is_hp]
    horizon = log.end_time
    alloc = log.allocated_gpu_seconds / (log.capacity * horizon) if horizon > 0 else 0.0
    return MetricsReport(_class_metrics(hp), _class_metrics(spot), min(alloc, 1.0),
                         objective_value(log, alpha) if horizon > 0 else 0.0, variant)


def metrics_csv(reports: Sequence[MetricsReport]) -> str:
    rows = [METRICS_HEADER]
    for r in reports:
        rows.extend(r.rows())
    return "\n".join(rows) + "\n"


# ---------------------------------------------------------------- ablation

ABLATION_VARIANTS = ("GFS", "GFS-e", "GFS-d", "GFS-s", "GFS-p", "GFS-sp", "FirstFit", "BestFit")


@dataclass
class VariantSpec:
    label: str
    scheduler: Variant
    forecaster: str  # "orglinear", "naive" or "none"
    freeze_eta: bool = False


def variant_spec(label: str) -> VariantSpec:
    table = {
        "GFS": VariantSpec("GFS", Variant.GFS, "orglinear"),
        "GFS-e": VariantSpec("GFS-e", Variant.GFS, "naive"),
        "GFS-d": VariantSpec("GFS-d", Variant.GFS, "orglinear", freeze_eta=True),
        "GFS-s": VariantSpec("GFS-s", Variant.GFS_s, "orglinear"),
        "GFS-p": VariantSpec("GFS-p", Variant.GFS_p, "orglinear"),
        "GFS-sp": VariantSpec("GFS-sp", Variant.GFS_sp, "orglinear"),
        "FirstFit": VariantSpec("FirstFit", Variant.FirstFit, "none"),
        "BestFit": VariantSpec("BestFit", Variant.BestFit, "none"),
    }
    if label not in table:
        raise ValueError(f"unknown ablation variant {label!r}")
    return table[label]


def run_variant(label: str, trace, nodes, seed: int, config: Optional[SimConfig] = None,
                policy_params: Optional[dict] = None, usage_history: Sequence[UsageSeries] = (),
                forecasters: Optional[dict] = None,
                make_orglinear: Optional[Callable[[], Forecaster]] = None,
                config_hash: Optional[str] = None) -> tuple[SimLog, MetricsReport]:
    config = config or SimConfig()
    spec = variant_spec(label)
    forecasters = forecasters if forecasters is not None else {}
    fc = None
    if spec.forecaster == "naive":
        fc = forecasters.get("naive") or NaivePeakForecaster()
    elif spec.forecaster == "orglinear" and usage_history:
        fc = forecasters.get("orglinear")
        if fc is None:
            fc = make_orglinear() if make_orglinear else OrgLinearForecaster()
            fc.fit(list(usage_history), end=0)
            forecasters["orglinear"] = fc
    policy = SchedulerPolicy(spec.scheduler, seed=seed, **(policy_params or {}))
    cfg = replace(config, freeze_eta=config.freeze_eta or spec.freeze_eta)
    log = run_simulation(trace, nodes, policy, cfg, fc, seed, usage_history,
                         config_hash or config_digest(cfg, label, policy_params, seed))
    return log, compute_metrics(log, cfg.alpha, label)


def run_ablation(trace, nodes, variants: Sequence[str] = ABLATION_VARIANTS, seed: int = 0,
                 config: Optional[SimConfig] = None, policy_params: Optional[dict] = None,
                 usage_history: Sequence[UsageSeries] = (), forecasters: Optional[dict] = None,
                 make_orglinear=None) -> list[MetricsReport]:
    """One report per variant, all replaying the same trace and seed.

    The OrgLinear forecaster is trained once and shared by every variant that uses it.
    """
    shared = forecasters if forecasters is not None else {}
    return [run_variant(v, trace, nodes, seed, config, policy_params, usage_history, shared, make_orglinear)[1]
            for v in variants]
