from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from gfsim.cli import (EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, ConfigFileError, RunConfig, dump_config, load_config,
                       main, parse_config)
from gfsim.sim import ABLATION_VARIANTS, METRICS_HEADER


def test_defaults():
    cfg = RunConfig()
    assert (cfg.alpha, cfg.beta, cfg.p, cfg.theta, cfg.gamma, cfg.m, cfg.H, cfg.update_interval) == (
        0.5, 0.5, 0.9, 3600.0, 0.8, 3.0, 1, 300)
    assert cfg.grace == 30


def test_sub_seeds_are_named_and_stable():
    cfg = RunConfig(seed=3)
    names = ("trace", "scheduler", "forecaster")
    seeds = [cfg.sub_seed(n) for n in names]
    assert len(set(seeds)) == 3
    assert seeds == [RunConfig(seed=3).sub_seed(n) for n in names]
    assert seeds != [RunConfig(seed=4).sub_seed(n) for n in names]


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), alpha=st.floats(0, 1), eta_max=st.one_of(st.none(), st.floats(1, 100)),
       variants=st.lists(st.sampled_from(ABLATION_VARIANTS), min_size=1, max_size=4, unique=True),
       nodes=st.integers(1, 64))
def test_config_round_trip(seed, alpha, eta_max, variants, nodes):
    cfg = RunConfig(seed=seed, alpha=alpha, eta_max=eta_max, variants=tuple(variants), num_nodes=nodes)
    text = dump_config(cfg)
    back = parse_config(text)
    assert back == cfg
    assert dump_config(back) == text


def test_partial_config_keeps_defaults():
    cfg = parse_config("[quota]\np = 0.8\n[policy]\nvariant = BestFit\n")
    assert cfg.p == 0.8 and cfg.variant == "BestFit" and cfg.theta == 3600.0


@pytest.mark.parametrize("text", ["[nope]\na = 1\n", "[quota]\nfoo = 1\n", "[quota]\np = abc\n",
                                  "[policy]\nvariant = Magic\n", "p = 1\n"])
def test_bad_config(text):
    with pytest.raises(ConfigFileError):
        parse_config(text)


def test_demo_config_loads():
    cfg = load_config(None)
    assert cfg.trace and cfg.resolve(cfg.trace).exists()


def test_simulate_demo(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["simulate", "--out", str(out)]) == EXIT_OK
    metrics = (out / "metrics_GFS.csv").read_text().splitlines()
    assert metrics[0] == METRICS_HEADER and len(metrics) == 3
    cfg = parse_config((out / "config.cfg").read_text())
    first = (out / "simlog_GFS.csv").read_text().splitlines()[0]
    assert first.endswith(f"config_hash={cfg.config_hash}")


def test_simulate_with_config_file(tmp_path):
    demo = load_config(None)
    cfg_path = tmp_path / "c.cfg"
    cfg = replace(demo, variant="BestFit", trace=str(demo.resolve(demo.trace)),
                  nodes=str(demo.resolve(demo.nodes)), usage=str(demo.resolve(demo.usage)))
    cfg_path.write_text(dump_config(cfg))
    assert main(["simulate", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) == EXIT_OK
    assert (tmp_path / "o" / "metrics_BestFit.csv").exists()


def test_unknown_flag_is_usage_error(tmp_path, capsys):
    assert main(["simulate", "--bogus", "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert "usage" in capsys.readouterr().err
    assert main([]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE


def test_runtime_error_removes_partial_outputs(tmp_path, capsys, monkeypatch):
    import gfsim.cli as cli

    def boom(*a, **k):
        raise RuntimeError("metrics exploded\nsecond line")

    monkeypatch.setattr(cli, "metrics_csv", boom)
    out = tmp_path / "o"
    assert main(["simulate", "--out", str(out)]) == EXIT_RUNTIME
    err = capsys.readouterr().err.strip().splitlines()
    assert err == ["gfsim: error: metrics exploded"]
    assert not out.exists()


def test_missing_config_is_runtime_error(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "none.cfg"), "--out", str(tmp_path / "o")]) == EXIT_RUNTIME


def test_ablate_one_row_per_variant(tmp_path, monkeypatch):
    monkeypatch.setenv("GFS_SIM_THREADS", "2")
    out = tmp_path / "o"
    assert main(["ablate", "--variants", "GFS,BestFit,FirstFit", "--out", str(out)]) == EXIT_OK
    rows = (out / "ablation.csv").read_text().splitlines()[1:]
    assert [r.split(",")[0] for r in rows] == ["GFS", "BestFit", "FirstFit"]
    assert len((out / "metrics.csv").read_text().splitlines()) == 1 + 2 * 3
    for v in ("GFS", "BestFit", "FirstFit"):
        assert (out / v / "simlog.csv").exists()


def test_ablate_parallel_matches_serial(tmp_path, monkeypatch):
    args = ["ablate", "--variants", "GFS,GFS-e,BestFit"]
    monkeypatch.setenv("GFS_SIM_THREADS", "1")
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    monkeypatch.setenv("GFS_SIM_THREADS", "3")
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_bad_thread_env(tmp_path, monkeypatch):
    monkeypatch.setenv("GFS_SIM_THREADS", "many")
    assert main(["ablate", "--out", str(tmp_path / "o")]) == EXIT_RUNTIME
    assert not (tmp_path / "o").exists()


def test_gen_trace_and_replay(tmp_path):
    cfg = RunConfig(seed=1, num_nodes=4, horizon_days=0.25, history_days=8)
    (tmp_path / "g.cfg").write_text(dump_config(cfg))
    assert main(["gen-trace", "--config", str(tmp_path / "g.cfg"), "--out", str(tmp_path / "t")]) == EXIT_OK
    for name in ("trace.csv", "usage.csv", "nodes.csv"):
        assert (tmp_path / "t" / name).exists()
    replay = replace(cfg, trace="t/trace.csv", nodes="t/nodes.csv", usage="t/usage.csv", variant="BestFit")
    (tmp_path / "r.cfg").write_text(dump_config(replay))
    assert main(["simulate", "--config", str(tmp_path / "r.cfg"), "--out", str(tmp_path / "s")]) == EXIT_OK


def test_forecast_train_then_eval(tmp_path):
    out = tmp_path / "f"
    assert main(["forecast-train", "--out", str(out)]) == EXIT_OK
    assert (out / "orglinear.npz").exists()
    assert main(["forecast-eval", "--model", str(out / "orglinear.npz"), "--out", str(out)]) == EXIT_OK
    lines = (out / "forecast_metrics.csv").read_text().splitlines()
    assert lines[0] == "model,MAE,MSE,RMSE,MAPE,MAQE,coverage"
    assert [l.split(",")[0] for l in lines[1:]] == ["OrgLinear", "NaivePeak"]


def test_report_merges(tmp_path):
    a = tmp_path / "a.csv"
    a.write_text(METRICS_HEADER + "\nGFS,hp,1,2,3,0,0.5,0\nGFS,spot,4,5,6,0.1,0.5,0\n")
    b = tmp_path / "b.csv"
    b.write_text(METRICS_HEADER + "\nBestFit,hp,1,2,3,0,0.5,0\nBestFit,spot,7,8,9,0.2,0.5,0\n")
    assert main(["report", str(a), str(b), "--out", str(tmp_path / "r")]) == EXIT_OK
    rows = (tmp_path / "r" / "report.csv").read_text().splitlines()
    assert rows[1:] == ["GFS,2,4,6,0.1,0.5", "BestFit,2,7,9,0.2,0.5"]


def test_report_rejects_other_csv(tmp_path):
    bad = tmp_path / "x.csv"
    bad.write_text("a,b\n1,2\n")
    assert main(["report", str(bad), "--out", str(tmp_path / "r")]) == EXIT_RUNTIME
