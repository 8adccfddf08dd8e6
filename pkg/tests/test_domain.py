import pytest
from hypothesis import given, strategies as st

from gfsim.domain import (ActiveRun, ClusterState, MalformedTask, Node, Priority, RunRecord, Task,
                          cluster_idle_gpus, expand_checkpoints, validate_task)

from conftest import fill, make_task


def test_valid_task_passes():
    task = Task("t1", 0, 1, 8, Priority.HP, 1800, "orgA", (600, 1200))
    validate_task(task)


@pytest.mark.parametrize("kwargs, field", [
    (dict(pods=0), "pods"),
    (dict(gpus_per_pod=0), "gpus_per_pod"),
    (dict(gpus_per_pod=9), "gpus_per_pod"),
    (dict(gpus_per_pod=1.5), "gpus_per_pod"),
    (dict(duration=0), "duration"),
    (dict(submit_time=-1), "submit_time"),
    (dict(checkpoints=(1200, 600)), "checkpoints"),
    (dict(checkpoints=(600, 2400)), "checkpoints"),
])
def test_malformed_tasks(kwargs, field):
    base = dict(id="t", submit_time=0, pods=1, gpus_per_pod=1.0, priority=Priority.SPOT, duration=1800)
    base.update(kwargs)
    with pytest.raises(MalformedTask) as err:
        validate_task(Task(**base))
    assert err.value.field == field


def test_zero_pods_reason_mentions_bound():
    with pytest.raises(MalformedTask, match="w_i >= 1"):
        validate_task(Task("t", 0, 0, 1, Priority.SPOT, 10))


def test_non_ascending_reason():
    with pytest.raises(MalformedTask, match="non-ascending"):
        validate_task(Task("t", 0, 1, 1, Priority.SPOT, 1800, checkpoints=(1200, 600)))


def test_runtime_log_checks():
    ok = (RunRecord(0, 10, 1, True), RunRecord(20, None, 1))
    validate_task(Task("t", 0, 1, 1, Priority.SPOT, 100, checkpoints=(5, 50), runtime_logs=ok))
    for logs in [
        (RunRecord(0, None), RunRecord(20, 30)),
        (RunRecord(0, 10), RunRecord(5, 30)),
        (RunRecord(10, 10),),
        (RunRecord(0, 10, 2), RunRecord(20, 30, 1)),
    ]:
        with pytest.raises(MalformedTask):
            validate_task(Task("t", 0, 1, 1, Priority.SPOT, 100, checkpoints=(5, 50), runtime_logs=logs))


def test_fractional_task_is_valid():
    validate_task(Task("f", 0, 3, 0.5, Priority.SPOT, 60))


def test_milestones_and_checkpoint_lookup():
    task = make_task(duration=1800, interval=600)
    assert task.checkpoints == (600, 1200, 1800)
    assert task.milestone(0) == 0
    assert task.milestone(4) == float("inf")
    assert task.checkpoint_for(599) == 0
    assert task.checkpoint_for(600) == 1
    assert task.checkpoint_for(1799) == 2
    assert task.checkpoint_for(5000) == 3
    assert expand_checkpoints(1000, 0) == ()
    assert expand_checkpoints(1000, 300) == (300, 600, 900)


@given(st.integers(1, 5000), st.integers(1, 900), st.floats(0, 6000))
def test_checkpoint_for_is_largest_reached(duration, interval, progress):
    task = make_task(duration=duration, interval=interval)
    f = task.checkpoint_for(progress)
    assert task.milestone(f) <= progress
    assert task.milestone(f + 1) > progress


def test_cluster_idle_gpus_examples():
    empty = ClusterState([Node("a", 8), Node("b", 8)])
    assert cluster_idle_gpus(empty) == 16
    a, b = Node("a", 8), Node("b", 8)
    fill(a, "h", range(6), Priority.HP)
    fill(a, "s", range(6, 8), Priority.SPOT)
    assert cluster_idle_gpus(ClusterState([a, b])) == 8
    fill(b, "h2", range(8), Priority.HP)
    assert cluster_idle_gpus(ClusterState([a, b])) == 0


def test_node_allocation_accounting():
    n = Node("n", 2)
    n.allocate(0, "x", 0.5, Priority.SPOT)
    n.allocate(0, "y", 0.5, Priority.HP)
    assert n.occupancy[0] == 1.0
    assert n.hp_gpus == 0.5 and n.spot_gpus == 0.5
    with pytest.raises(RuntimeError):
        n.allocate(0, "z", 0.25, Priority.SPOT)
    n.release(0, "x", Priority.SPOT)
    assert n.occupancy[0] == 0.5 and n.spot_gpus == 0.0
    assert n.audit() == []
    assert n.idle_whole_gpus == 1


def test_audit_flags_mixed_full_card():
    n = Node("n", 1)
    n.owners[0] = {"full": 1.0, "frac": 0.25}
    n.occupancy[0] = 1.25
    problems = n.audit()
    assert any("occupancy" in p for p in problems)
    assert any("full-card" in p for p in problems)


def test_cluster_state_sorts_nodes_and_indexes():
    state = ClusterState([Node("b", 4), Node("a", 8)])
    assert [n.id for n in state.nodes] == ["a", "b"]
    assert [n.index for n in state.nodes] == [0, 1]
    assert state.capacity == 12


def test_active_run_progress_and_checkpoint_time():
    task = make_task(duration=1800, interval=600)
    run = ActiveRun(task, start=1000, base_checkpoint=1)
    assert run.progress(1000) == 600
    assert run.checkpoint_at(1500) == 1
    assert run.last_checkpoint_time(1500) == 1000  # nothing new saved in this run
    assert run.checkpoint_at(1600) == 2
    assert run.last_checkpoint_time(1700) == 1600
    assert run.progress(10_000) == 1800
