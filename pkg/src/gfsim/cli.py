"""Command-line experiment runner.

Every subcommand reads a flat ``key = value`` config with one section per
module and writes its artifacts under ``--out`` with fixed file names.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import io
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from .forecast import ForecastConfig, OrgLinear, OrgLinearForecaster, evaluate_forecasts
from .sim import ABLATION_VARIANTS, METRICS_HEADER, SimConfig, metrics_csv, run_variant, variant_spec
from .trace import (SyntheticConfig, UsageSeries, generate_synthetic, make_nodes, parse_nodes,
                    parse_trace, parse_usage, write_nodes, write_trace, write_usage)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
THREADS_ENV = "GFS_SIM_THREADS"

# field name -> config section
SECTIONS = {
    "run": ("seed",),
    "trace": ("trace", "nodes", "usage", "num_nodes", "spot_multiplier", "horizon_days", "history_days",
              "spot_checkpoint_prob"),
    "policy": ("variant", "variants", "alpha", "beta", "gamma", "m"),
    "quota": ("p", "theta", "H", "update_interval", "grace", "eta_max"),
    "forecast": ("history", "horizon", "embed_dim", "kernel_size", "learning_rate", "epochs"),
}


@dataclass
class RunConfig:
    """Everything one experiment needs; empty paths select the synthetic generator."""

    seed: int = 0
    trace: str = ""
    nodes: str = ""
    usage: str = ""
    num_nodes: int = 16
    spot_multiplier: int = 2
    horizon_days: float = 3.0
    history_days: float = 28.0
    spot_checkpoint_prob: float = 0.3
    variant: str = "GFS"
    variants: tuple = ABLATION_VARIANTS
    alpha: float = 0.5
    beta: float = 0.5
    gamma: float = 0.8
    m: float = 3.0
    p: float = 0.9
    theta: float = 3600.0
    H: int = 1
    update_interval: int = 300
    grace: int = 30
    eta_max: Optional[float] = None
    history: int = 168
    horizon: int = 24
    embed_dim: int = 8
    kernel_size: int = 25
    learning_rate: float = 5e-2
    epochs: int = 500
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        variant_spec(self.variant)
        for v in self.variants:
            variant_spec(v)

    def resolve(self, path: str) -> Path:
        return Path(self.base_dir, path) if path else Path()

    def sub_seed(self, name: str) -> int:
        """Independent seed for one consumer of randomness, derived from ``seed``."""
        digest = hashlib.sha256(f"{self.seed}:{name}".encode()).digest()
        return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(dump_config(self).encode()).hexdigest()[:16]

    def sim_config(self) -> SimConfig:
        return SimConfig(grace=self.grace, p=self.p, H=self.H, theta=self.theta,
                         update_interval=self.update_interval, eta_max=self.eta_max, alpha=self.alpha)

    def policy_params(self) -> dict:
        return {"gamma": self.gamma, "m": self.m, "beta": self.beta}

    def forecast_config(self) -> ForecastConfig:
        return ForecastConfig(history=self.history, horizon=self.horizon, embed_dim=self.embed_dim,
                              kernel_size=self.kernel_size, learning_rate=self.learning_rate,
                              epochs=self.epochs, seed=self.sub_seed("forecaster"))

    def synthetic_config(self) -> SyntheticConfig:
        return SyntheticConfig(seed=self.sub_seed("trace"), spot_multiplier=self.spot_multiplier,
                               horizon_days=self.horizon_days, history_days=self.history_days,
                               capacity_gpus=8 * self.num_nodes, spot_checkpoint_prob=self.spot_checkpoint_prob)


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


def _parse_value(name: str, text: str):
    kind = {f.name: f.default for f in fields(RunConfig)}[name]
    text = text.strip()
    if name == "eta_max":
        return None if text.lower() in ("", "none") else float(text)
    if isinstance(kind, tuple):
        return tuple(v.strip() for v in text.split(",") if v.strip())
    if isinstance(kind, bool):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(kind, int):
        return int(text)
    if isinstance(kind, float):
        return float(text)
    return text


class ConfigFileError(ValueError):
    pass


def parse_config(text: str, base_dir: str = ".") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigFileError(str(exc).splitlines()[0]) from None
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigFileError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigFileError(f"unknown key {key!r} in [{section}]")
            try:
                values[key] = _parse_value(key, raw)
            except ValueError:
                raise ConfigFileError(f"bad value for {key}: {raw!r}") from None
    try:
        return RunConfig(base_dir=base_dir, **values)
    except ValueError as exc:
        raise ConfigFileError(str(exc)) from None


def dump_config(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for section, names in SECTIONS.items():
        parser[section] = {n: _format_value(getattr(cfg, n)) for n in names}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        path = str(demo_path("demo.cfg"))
    p = Path(path)
    return parse_config(p.read_text(), str(p.parent))


def demo_path(name: str) -> Path:
    return Path(str(resources.files("gfsim") / "data" / name))


# ---------------------------------------------------------------- inputs


def _with_attributes(series: list[UsageSeries]) -> list[UsageSeries]:
    # usage files carry no org attributes; fall back to the org's position
    if all(s.attributes for s in series):
        return series
    return [replace(s, attributes=(i,)) for i, s in enumerate(sorted(series, key=lambda s: s.org_id))]


def load_inputs(cfg: RunConfig):
    """Return ``(tasks, nodes, usage)`` from files, or from the synthetic generator."""
    if cfg.trace:
        tasks = parse_trace(cfg.resolve(cfg.trace))
        usage = _with_attributes(parse_usage(cfg.resolve(cfg.usage))) if cfg.usage else []
    else:
        tasks, usage = generate_synthetic(cfg.synthetic_config())
    nodes = parse_nodes(cfg.resolve(cfg.nodes)) if cfg.nodes else make_nodes(cfg.num_nodes)
    return tasks, nodes, usage


def load_usage(cfg: RunConfig) -> list[UsageSeries]:
    if cfg.usage:
        return _with_attributes(parse_usage(cfg.resolve(cfg.usage)))
    return generate_synthetic(cfg.synthetic_config())[1]


# ---------------------------------------------------------------- outputs


class Outputs:
    """Tracks files written by one command so a failure can remove them."""

    def __init__(self, root: str):
        self.root = Path(root)
        self.created_root = not self.root.exists()
        self.written: list[Path] = []
        self.dirs: list[Path] = []

    def path(self, *parts: str) -> Path:
        target = self.root.joinpath(*parts)
        for parent in reversed(target.relative_to(self.root).parents):
            d = self.root / parent
            if not d.exists():
                d.mkdir(parents=True)
                self.dirs.append(d)
        self.written.append(target)
        return target

    def write(self, text: str, *parts: str) -> Path:
        target = self.path(*parts)
        target.write_text(text)
        return target

    def discard(self):
        for f in self.written:
            f.unlink(missing_ok=True)
        for d in sorted(self.dirs, key=lambda d: len(d.parts), reverse=True):
            if d.exists() and not any(d.iterdir()):
                d.rmdir()
        if self.created_root and self.root.exists() and not any(self.root.iterdir()):
            self.root.rmdir()


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(int(raw), 1)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None


def summary_csv(reports) -> str:
    rows = ["variant,hp_jct_p99_s,spot_jct_mean_s,spot_jqt_mean_s,spot_eviction_rate,allocation_rate,objective"]
    for r in reports:
        vals = (r.hp.jct_p99, r.spot.jct_mean, r.spot.jqt_mean, r.spot.eviction_rate, r.allocation_rate, r.objective)
        rows.append(r.variant + "," + ",".join(f"{v:.6g}" for v in vals))
    return "\n".join(rows) + "\n"


def _fitted_orglinear(cfg: RunConfig, usage) -> Optional[OrgLinearForecaster]:
    if not usage:
        return None
    return OrgLinearForecaster(cfg.forecast_config()).fit(usage, end=0)


def _run_one(cfg: RunConfig, label: str, tasks, nodes, usage, forecasters: dict):
    return run_variant(label, tasks, nodes, cfg.sub_seed("scheduler"), cfg.sim_config(), cfg.policy_params(),
                       usage, forecasters, config_hash=cfg.config_hash)


def _ablate_job(args):
    cfg, label, tasks, nodes, usage, forecasters = args
    log, report = _run_one(cfg, label, tasks, nodes, usage, forecasters)
    return label, log.serialize(), report


# ---------------------------------------------------------------- commands


def cmd_simulate(args, cfg: RunConfig, out: Outputs):
    label = args.variant or cfg.variant
    tasks, nodes, usage = load_inputs(cfg)
    forecasters = {}
    if variant_spec(label).forecaster == "orglinear":
        fc = _fitted_orglinear(cfg, usage)
        if fc is not None:
            forecasters["orglinear"] = fc
    log, report = _run_one(cfg, label, tasks, nodes, usage, forecasters)
    out.write(dump_config(cfg), "config.cfg")
    out.write(log.serialize(), f"simlog_{label}.csv")
    out.write(log.quota_csv(), f"quota_{label}.csv")
    out.write(metrics_csv([report]), f"metrics_{label}.csv")
    print(summary_csv([report]), end="")


def cmd_ablate(args, cfg: RunConfig, out: Outputs):
    variants = tuple(args.variants.split(",")) if args.variants else cfg.variants
    for v in variants:
        variant_spec(v)
    tasks, nodes, usage = load_inputs(cfg)
    forecasters = {}
    if any(variant_spec(v).forecaster == "orglinear" for v in variants):
        fc = _fitted_orglinear(cfg, usage)
        if fc is not None:
            forecasters["orglinear"] = fc
    jobs = [(cfg, v, tasks, nodes, usage, forecasters) for v in variants]
    workers = min(_threads(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_ablate_job, jobs))
    else:
        results = [_ablate_job(j) for j in jobs]
    out.write(dump_config(cfg), "config.cfg")
    reports = []
    for label, log_text, report in results:
        out.write(log_text, label, "simlog.csv")
        out.write(metrics_csv([report]), label, "metrics.csv")
        reports.append(report)
    out.write(metrics_csv(reports), "metrics.csv")
    out.write(summary_csv(reports), "ablation.csv")
    print(summary_csv(reports), end="")


def cmd_gen_trace(args, cfg: RunConfig, out: Outputs):
    tasks, usage = generate_synthetic(cfg.synthetic_config())
    write_trace(tasks, out.path("trace.csv"))
    write_usage(usage, out.path("usage.csv"))
    write_nodes(make_nodes(cfg.num_nodes), out.path("nodes.csv"))
    print(f"{len(tasks)} tasks, {len(usage)} organizations")


def cmd_forecast_train(args, cfg: RunConfig, out: Outputs):
    usage = load_usage(cfg)
    fc = OrgLinearForecaster(cfg.forecast_config()).fit(usage, end=0)
    fc.model.save(out.path("orglinear.npz"))
    losses = "epoch,nll\n" + "".join(f"{k},{v:.9g}\n" for k, v in enumerate(fc.losses))
    out.write(losses, "train_losses.csv")
    print(f"final nll {fc.losses[-1]:.6f}")


def cmd_forecast_eval(args, cfg: RunConfig, out: Outputs):
    usage = load_usage(cfg)
    if args.model:
        fc = OrgLinearForecaster(model=OrgLinear.load(args.model))
    else:
        fc = OrgLinearForecaster(cfg.forecast_config()).fit(usage, end=0)
    end = min(int(s.bucket_times()[-1]) + s.granularity for s in usage)
    ev = evaluate_forecasts(fc, usage, 0, end, p=cfg.p)
    names = ("MAE", "MSE", "RMSE", "MAPE", "MAQE")
    rows = ["model," + ",".join(names) + ",coverage"]
    rows.append("OrgLinear," + ",".join(f"{ev.metrics[n]:.6g}" for n in names) + f",{ev.coverage:.6g}")
    rows.append("NaivePeak," + ",".join(f"{ev.naive_metrics[n]:.6g}" for n in names) + f",{ev.naive_coverage:.6g}")
    text = "\n".join(rows) + "\n"
    out.write(text, "forecast_metrics.csv")
    print(text, end="")


def cmd_report(args, cfg: RunConfig, out: Outputs):
    merged: dict[str, dict[str, list[str]]] = {}
    header = METRICS_HEADER.split(",")
    for path in args.metrics:
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != METRICS_HEADER:
            raise ValueError(f"{path}: not a metrics CSV")
        for line in lines[1:]:
            row = dict(zip(header, line.split(",")))
            merged.setdefault(row["variant"], {})[row["class"]] = row
    cols = ["variant", "hp_jct_p99_s", "spot_jct_mean_s", "spot_jqt_mean_s", "spot_eviction_rate",
            "allocation_rate"]
    rows = [",".join(cols)]
    for variant, by_class in merged.items():
        hp, spot = by_class.get("hp", {}), by_class.get("spot", {})
        rows.append(",".join([variant, hp.get("jct_p99_s", ""), spot.get("jct_mean_s", ""),
                              spot.get("jqt_mean_s", ""), spot.get("eviction_rate", ""),
                              spot.get("allocation_rate", "")]))
    text = "\n".join(rows) + "\n"
    out.write(text, "report.csv")
    widths = [max(len(r.split(",")[k]) for r in rows) for k in range(len(cols))]
    for r in rows:
        print("  ".join(c.rjust(w) for c, w in zip(r.split(","), widths)))


COMMANDS = {
    "simulate": (cmd_simulate, "replay a trace under one policy"),
    "ablate": (cmd_ablate, "run the variant matrix on one trace"),
    "gen-trace": (cmd_gen_trace, "write a synthetic trace, usage history and node file"),
    "forecast-train": (cmd_forecast_train, "train the OrgLinear demand forecaster"),
    "forecast-eval": (cmd_forecast_eval, "score OrgLinear against the naive peak baseline"),
    "report": (cmd_report, "merge metrics CSVs into one comparison table"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gfsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="run config file (default: bundled demo)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, help="override the top-level seed")
        if name == "simulate":
            p.add_argument("--variant", help="policy variant label, e.g. GFS or BestFit")
        if name == "ablate":
            p.add_argument("--variants", help="comma-separated variant labels")
        if name == "forecast-eval":
            p.add_argument("--model", help="checkpoint written by forecast-train")
        if name == "report":
            p.add_argument("metrics", nargs="+", help="metrics CSV files")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    out = Outputs(args.out)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        COMMANDS[args.command][0](args, cfg, out)
    except Exception as exc:  # noqa: BLE001 - one-line diagnostic for any failure
        out.discard()
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"gfsim: error: {msg}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
