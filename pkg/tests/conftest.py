import pytest

from gfsim.domain import Node, Priority, Task, expand_checkpoints


def make_task(tid="t", submit=0, pods=1, g=1.0, hp=False, duration=100, interval=0, org="org0"):
    return Task(tid, submit, pods, g, Priority.HP if hp else Priority.SPOT, duration, org,
                expand_checkpoints(duration, interval))


@pytest.fixture
def task_factory():
    return make_task


def fill(node: Node, task_id: str, gpus, priority=Priority.SPOT, fraction=1.0):
    for k in gpus:
        node.allocate(k, task_id, fraction, priority)


def occupy(state, node_index: int, task, gpus, start: int = 0, base: int = 0):
    """Register ``task`` as running on ``gpus`` of one node in ``state``."""
    from gfsim.domain import ActiveRun

    node = state.nodes[node_index]
    frac = task.gpus_per_pod if task.fractional else 1.0
    run = state.running.get(task.id) or ActiveRun(task, start, base)
    for k in gpus:
        node.allocate(k, task.id, frac, task.priority)
        run.gpus.append((node_index, k, frac))
    state.running[task.id] = run
    return run
