import numpy as np
import pytest

from gfsim.domain import Node, Priority, Task
from gfsim.forecast import NaivePeakForecaster
from gfsim.objective import audit_schedule
from gfsim.sched import SchedulerPolicy, Variant
from gfsim.sim import (EventKind, IncompleteLog, SimConfig, SimulationStalled, Simulator, compute_metrics,
                       metrics_csv, nearest_rank, run_ablation, run_simulation, run_variant)
from gfsim.trace import SyntheticConfig, generate_synthetic, make_nodes

from conftest import make_task


def small_workload(seed=0, mult=1, days=1.0):
    cfg = SyntheticConfig(seed=seed, spot_multiplier=mult, horizon_days=days, history_days=8,
                          capacity_gpus=32, base_demand=(6, 5, 4, 3), diurnal_amplitude=(2, 2, 1, 1))
    tasks, usage = generate_synthetic(cfg)
    return tasks, usage, make_nodes(4)


def test_event_kind_order():
    assert [k.name for k in sorted(EventKind)] == ["TaskArrival", "TaskFinish", "CheckpointReached",
                                                    "EvictionNotice", "GraceExpired", "QuotaUpdate", "SchedulePass"]


def test_empty_trace():
    log = run_simulation([], make_nodes(2), SchedulerPolicy())
    m = compute_metrics(log)
    assert log.records == {}
    assert m.hp.jct_mean == m.spot.jqt_mean == m.allocation_rate == m.objective == 0


def test_single_hp_task():
    task = make_task(tid="h", submit=100, g=4, hp=True, duration=3600)
    log = run_simulation([task], make_nodes(1), SchedulerPolicy())
    rec = log.records["h"]
    assert rec.queue_time == 0 and rec.finish - task.submit_time == 3600
    m = compute_metrics(log)
    assert m.hp.jct_mean == 3600 and m.hp.jqt_mean == 0 and m.spot.eviction_rate == 0


def test_preemption_grace_and_rollback():
    spot = make_task(tid="s", submit=0, g=8, duration=5000)
    hp = make_task(tid="h", submit=600, g=8, hp=True, duration=1000)
    log = run_simulation([spot, hp], [Node("n0", 8)], SchedulerPolicy(Variant.BestFit))
    s, h = log.records["s"], log.records["h"]
    assert h.runs[0].start == 630 and h.queue_time == 30
    assert [r.evicted for r in s.runs] == [True, False]
    assert s.runs[0].end == 600 and s.runs[0].checkpoint == 0
    assert s.runs[1].start == 1630 and s.runs[1].end == 6630  # full duration again
    assert s.grace == 30
    assert any(line.split(",")[1] == "EvictionNotice" for line in log.lines)
    m = compute_metrics(log)
    assert m.spot.eviction_rate == 0.5 and m.hp.eviction_rate == 0
    assert audit_schedule(log) == []


def test_spot_restart_waits_for_quota_refresh():
    spot = make_task(tid="s", submit=0, g=8, duration=5000)
    hp = make_task(tid="h", submit=600, g=8, hp=True, duration=1000)
    log = run_simulation([spot, hp], [Node("n0", 8)], SchedulerPolicy())
    assert log.records["h"].runs[0].start == 630
    # the quota computed at t=1500 saw no free GPUs, so the restart waits for t=1800
    assert log.records["s"].runs[1].start == 1800


def test_preemption_resumes_from_checkpoint():
    spot = make_task(tid="s", submit=0, g=8, duration=5000, interval=500)
    hp = make_task(tid="h", submit=1200, g=8, hp=True, duration=100)
    log = run_simulation([spot, hp], [Node("n0", 8)], SchedulerPolicy())
    s = log.records["s"]
    assert s.runs[0].checkpoint == 2 and s.runs[1].start == 1330
    assert s.runs[1].end - s.runs[1].start == 4000
    assert audit_schedule(log) == []


def test_fcfs_example_metrics():
    a = Task("a", 0, 1, 1, Priority.HP, 50)
    b = Task("b", 0, 1, 1, Priority.HP, 100)
    log = run_simulation([a, b], [Node("n", 1)], SchedulerPolicy())
    rb = log.records["b"]
    assert rb.finish - rb.task.submit_time == 150 and rb.queue_time == 50


def test_conservation_of_time():
    tasks, usage, nodes = small_workload(seed=2, mult=4)
    log = run_simulation(tasks, nodes, SchedulerPolicy(Variant.FirstFit))
    for rec in log.records.values():
        run_time = sum(r.end - r.start for r in rec.runs)
        assert run_time + rec.queue_time + rec.grace == pytest.approx(rec.finish - rec.task.submit_time)


def test_simulation_audits_clean():
    tasks, usage, nodes = small_workload(seed=1, mult=4)
    for variant in ("GFS", "BestFit", "GFS-p"):
        log, _ = run_variant(variant, tasks, nodes, seed=1, config=SimConfig(audit=True), usage_history=usage)
        assert log.audit_failures == []
        assert audit_schedule(log) == []
        assert all(r.evictions == 0 for r in log.records.values() if r.task.is_hp)


def test_spot_placements_respect_quota(monkeypatch):
    tasks, usage, nodes = small_workload(seed=3, mult=2)
    violations = []
    original = Simulator._start_run

    def checked(self, task, gpus, already=frozenset()):
        original(self, task, gpus, already)
        if not task.is_hp and self.state.spot_allocated > self.quota.Q_H + 1e-9:
            violations.append((self.state.now, task.id))

    monkeypatch.setattr(Simulator, "_start_run", checked)
    run_variant("GFS", tasks, nodes, seed=3, usage_history=usage)
    assert violations == []


def test_deterministic_logs():
    tasks, usage, nodes = small_workload(seed=4, mult=2)
    a, ma = run_variant("GFS-p", tasks, nodes, seed=4, usage_history=usage)
    b, mb = run_variant("GFS-p", tasks, nodes, seed=4, usage_history=usage)
    assert a.serialize() == b.serialize() and a.quota_csv() == b.quota_csv()
    assert metrics_csv([ma]) == metrics_csv([mb])
    assert a.serialize().startswith(f"# seed=4 config_hash={a.config_hash}\ntime_s,event,task_id,node_ids,detail\n")


def test_frozen_eta_and_naive_forecaster():
    tasks, usage, nodes = small_workload(seed=5, mult=2)
    log, _ = run_variant("GFS-d", tasks, nodes, seed=5, usage_history=usage)
    assert all(row[2] == 1.0 for row in log.quota_timeline)
    forecasters = {}
    run_variant("GFS-e", tasks, nodes, seed=5, usage_history=usage, forecasters=forecasters)
    assert "orglinear" not in forecasters


def test_ablation_rows_and_shared_arrivals():
    tasks, usage, nodes = small_workload(seed=6)
    reports = run_ablation(tasks, nodes, ["GFS", "FirstFit", "BestFit"], seed=6, usage_history=usage)
    assert [r.variant for r in reports] == ["GFS", "FirstFit", "BestFit"]
    assert len(metrics_csv(reports).splitlines()) == 1 + 2 * 3
    assert len({r.hp.tasks + r.spot.tasks for r in reports}) == 1


def test_load_response_first_fit():
    evictions = []
    for mult in (1, 4):
        tasks, usage, nodes = small_workload(seed=7, mult=mult)
        log = run_simulation(tasks, nodes, SchedulerPolicy(Variant.FirstFit))
        evictions.append(sum(r.evictions for r in log.records.values()))
    assert evictions[1] >= evictions[0]


def test_stall_detection():
    too_big = make_task(tid="x", g=8, pods=3, hp=True)
    with pytest.raises(SimulationStalled):
        run_simulation([too_big], make_nodes(2), SchedulerPolicy(Variant.BestFit))
    with pytest.raises(SimulationStalled):
        run_simulation([too_big], make_nodes(2), SchedulerPolicy(), SimConfig(stall_timeout=3600))


def test_incomplete_log_rejected():
    log = run_simulation([make_task(tid="a", hp=True)], make_nodes(1), SchedulerPolicy())
    log.records["a"].finish = None
    with pytest.raises(IncompleteLog):
        compute_metrics(log)


def test_nearest_rank():
    assert nearest_rank([], 0.99) == 0
    assert nearest_rank(list(range(1, 101)), 0.99) == 99
    assert nearest_rank([5.0], 0.99) == 5.0
