import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gfsim.domain import Priority, Task, expand_checkpoints
from gfsim.trace import (DAY, HOUR, TRACE_HEADER, ConfigError, ParseError, SyntheticConfig, UsageSeries,
                         aggregate_usage, demand_profile, generate_synthetic, is_weekend, make_nodes,
                         parse_nodes, parse_trace, parse_usage, write_nodes, write_trace, write_usage)


def write(tmp_path, rows, header=TRACE_HEADER):
    p = tmp_path / "trace.csv"
    p.write_text("\n".join([header] + rows) + "\n")
    return p


def test_parse_row_maps_fields(tmp_path):
    tasks = parse_trace(write(tmp_path, ["t1,0,hp,1,8,3600,orgA,600"]))
    t = tasks[0]
    assert (t.pods, t.gpus_per_pod, t.priority, t.duration, t.org_id) == (1, 8, Priority.HP, 3600, "orgA")
    assert t.checkpoints == tuple(range(600, 3601, 600))


def test_fractional_row(tmp_path):
    t = parse_trace(write(tmp_path, ["f,5,spot,1,0.5,60,o,0"]))[0]
    assert t.gpus_per_pod == 0.5 and t.fractional and t.checkpoints == ()


@pytest.mark.parametrize("row, reason", [
    ("t1,0,batch,1,8,3600,orgA,600", "unknown priority class"),
    ("t1,0,hp,0,8,3600,orgA,600", "w_i"),
    ("t1,0,hp,1,x,3600,orgA,600", "not a number"),
    ("t1,0,hp,1,8,3600,orgA", "columns"),
    ("t1,0,hp,1,8,3600,orgA,-5", "negative"),
])
def test_bad_rows_reject_file(tmp_path, row, reason):
    with pytest.raises(ParseError, match=reason) as err:
        parse_trace(write(tmp_path, ["ok,0,hp,1,1,10,o,0", row]))
    assert err.value.line == 3


def test_duplicate_ids_and_missing_header(tmp_path):
    with pytest.raises(ParseError, match="duplicate"):
        parse_trace(write(tmp_path, ["a,0,hp,1,1,10,o,0", "a,1,hp,1,1,10,o,0"]))
    with pytest.raises(ParseError, match="header"):
        parse_trace(write(tmp_path, ["a,0,hp,1,1,10,o,0"], header="id,when"))


def test_sorted_by_submit(tmp_path):
    tasks = parse_trace(write(tmp_path, ["b,50,spot,1,1,10,o,0", "a,10,hp,1,1,10,o,0"]))
    assert [t.id for t in tasks] == ["a", "b"]


task_strategy = st.builds(
    lambda i, submit, pods, g, hp, duration, interval, org: Task(
        f"t{i}", submit, pods, g, Priority.HP if hp else Priority.SPOT, duration, org,
        expand_checkpoints(duration, interval)),
    st.integers(0, 10**6), st.integers(0, 10**6), st.integers(1, 4),
    st.sampled_from([0.25, 0.5, 1, 2, 4, 8]), st.booleans(), st.integers(1, 20000),
    st.integers(0, 3000), st.sampled_from(["orgA", "orgB"]))


@settings(max_examples=50, deadline=None)
@given(st.lists(task_strategy, max_size=8, unique_by=lambda t: t.id))
def test_trace_round_trip(tmp_path_factory, tasks):
    path = tmp_path_factory.mktemp("rt") / "t.csv"
    write_trace(tasks, path)
    assert parse_trace(path) == sorted(tasks, key=lambda t: (t.submit_time, t.id))


def test_node_and_usage_round_trip(tmp_path):
    nodes = make_nodes(3, gpus=4)
    write_nodes(nodes, tmp_path / "n.csv")
    back = parse_nodes(tmp_path / "n.csv")
    assert [(n.id, n.total_gpus, n.cluster_id) for n in back] == [(n.id, n.total_gpus, n.cluster_id) for n in nodes]
    series = [UsageSeries("a", [1, 2.5, 0], start=-3600), UsageSeries("b", [4, 4, 4])]
    write_usage(series, tmp_path / "u.csv")
    back = parse_usage(tmp_path / "u.csv")
    assert [s.org_id for s in back] == ["a", "b"]
    assert back[0].start == -3600 and list(back[0].values) == [1, 2.5, 0]


def test_aggregate_usage_examples():
    one = [Task("a", 0, 1, 8, Priority.HP, 7200, "o")]
    assert list(aggregate_usage(one)[0].values) == [8, 8]
    overlap = [Task("a", 0, 1, 4, Priority.HP, 1800, "o"), Task("b", 0, 1, 4, Priority.HP, 1800, "o")]
    assert list(aggregate_usage(overlap)[0].values) == [8]
    empty = aggregate_usage([], end=3 * HOUR, orgs=["o"])
    assert list(empty[0].values) == [0, 0, 0]


def test_aggregate_usage_peak_not_sum_of_disjoint():
    tasks = [Task("a", 0, 1, 4, Priority.HP, 1000, "o"), Task("b", 2000, 1, 4, Priority.HP, 1000, "o"),
             Task("s", 0, 1, 8, Priority.SPOT, 3600, "o")]
    assert list(aggregate_usage(tasks, end=HOUR)[0].values) == [4]


@given(st.lists(st.tuples(st.integers(0, 20000), st.integers(1, 20000), st.sampled_from([1, 2, 8])), max_size=10))
def test_aggregate_length_matches_horizon(spans):
    tasks = [Task(f"t{i}", s, 1, g, Priority.HP, d, "o") for i, (s, d, g) in enumerate(spans)]
    out = aggregate_usage(tasks, end=12 * HOUR, orgs=["o"])[0]
    assert len(out) == 12
    assert np.all(out.values >= 0)


def test_synthetic_deterministic_and_scaled():
    cfg = SyntheticConfig(seed=3, horizon_days=2, history_days=7)
    a, ua = generate_synthetic(cfg)
    b, ub = generate_synthetic(cfg)
    assert a == b
    assert all(np.array_equal(x.values, y.values) for x, y in zip(ua, ub))
    assert all(0 <= t.submit_time < 2 * DAY for t in a)


def test_spot_multiplier_ratio():
    def spot_count(mult):
        cfg = SyntheticConfig(seed=11, horizon_days=30, history_days=0, spot_multiplier=mult, base_demand=4,
                              diurnal_amplitude=0, num_orgs=4, weekly_dip=0)
        return sum(1 for t in generate_synthetic(cfg)[0] if not t.is_hp)
    ratio = spot_count(2) / spot_count(1)
    assert abs(ratio - 2.0) <= 0.1


def test_weekend_dip_in_profile():
    cfg = SyntheticConfig(num_orgs=1, base_demand=40, diurnal_amplitude=10, weekly_dip=0.357, noise_std=1.0,
                          history_days=28, horizon_days=0.5, seed=5)
    s = demand_profile(cfg)[0]
    t = s.bucket_times()
    weekend = s.values[is_weekend(t)].mean()
    weekday = s.values[~is_weekend(t)].mean()
    assert weekend / weekday == pytest.approx(0.643, abs=0.02)


def test_profile_clamped_to_capacity():
    cfg = SyntheticConfig(num_orgs=2, base_demand=(100, 100), diurnal_amplitude=(50, 50), weekly_dip=0, capacity_gpus=128,
                          history_days=2, horizon_days=1)
    total = sum(s.values for s in demand_profile(cfg))
    assert total.max() <= 128 + 1e-9 and total.min() >= 0


def test_diurnal_peak_in_busy_window():
    cfg = SyntheticConfig(num_orgs=1, base_demand=40, diurnal_amplitude=10, weekly_dip=0, noise_std=0,
                          history_days=7, horizon_days=0.5)
    s = demand_profile(cfg)[0]
    hours = (s.bucket_times() // HOUR) % 24
    peak_hour = hours[np.argmax(s.values)]
    assert 10 <= peak_hour < 24


@pytest.mark.parametrize("kwargs", [dict(spot_multiplier=3), dict(base_demand=1, diurnal_amplitude=5),
                                    dict(weekly_dip=1.2), dict(num_orgs=0)])
def test_config_errors(kwargs):
    with pytest.raises(ConfigError):
        generate_synthetic(SyntheticConfig(history_days=1, horizon_days=1, **kwargs))
