"""Command-line interface: ``anomver {solve,bounds,simulate,calibrate,sweep,oracle}``.

All subcommands read a model file (``--config``) and write CSV (default) or
JSON to stdout or ``--output``. Run parameters may also be given in the model
file under a ``"run"`` key; command-line flags take precedence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import secrets
import sys
from dataclasses import dataclass, field, fields, is_dataclass
from typing import Any

from . import bounds, sim
from .channels import ModelError, SystemModel, model_from_dict
from .divergence import max_min_divergence, per_component_divergence
from .strategies import STRATEGY_NAMES, AlwaysSafe, Threshold, make_strategy, parse_rule

SUBCOMMANDS = ("solve", "bounds", "simulate", "calibrate", "sweep", "oracle")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class RunConfig:
    command: str
    model: SystemModel
    config_path: str | None = None
    n_values: list = field(default_factory=lambda: [100])
    epsilon: Any = 0.1
    eta: float = 10.0
    delta: float | None = None
    trials: int = 10_000
    seed: int | None = None
    strategies: list = field(default_factory=lambda: ["das"])
    rule: str = "calibrated"
    phi_method: str = "direct"
    threads: int = 1
    format: str = "csv"
    output: str | None = None

    def normalized(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "model"}
        out["model"] = self.model.to_dict()
        return out


def parse_n(text) -> list[int]:
    """``"100"``, ``"20,50,100"`` or ``"20:200:20"`` (inclusive) to a list of horizons."""
    if isinstance(text, int):
        values = [text]
    elif isinstance(text, list):
        values = [int(v) for v in text]
    else:
        text = str(text).strip()
        if ":" in text:
            parts = [int(p) for p in text.split(":")]
            if len(parts) == 2:
                parts.append(1)
            if len(parts) != 3 or parts[2] <= 0:
                raise ConfigError("n", f"bad range {text!r}; use start:stop[:step]")
            values = list(range(parts[0], parts[1] + 1, parts[2]))
        else:
            values = [int(v) for v in text.split(",") if v.strip()]
    if not values or any(v < 1 for v in values):
        raise ConfigError("n", "horizons must be integers >= 1")
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anomver", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="model JSON file")
        p.add_argument("--format", choices=("csv", "json"))
        p.add_argument("--output", help="write here instead of stdout")
        if name == "solve":
            continue
        p.add_argument("--n", help="horizon: N, N1,N2,... or start:stop[:step]")
        p.add_argument("--epsilon", help="float in (0,1) or a schedule such as 1/n")
        if name in ("bounds", "sweep", "simulate", "calibrate"):
            p.add_argument("--eta", type=float)
        if name in ("bounds", "sweep"):
            p.add_argument("--delta", type=float)
        if name in ("simulate", "calibrate", "sweep"):
            p.add_argument("--strategy", help=f"comma list of {', '.join(STRATEGY_NAMES)}")
            p.add_argument("--trials", type=int)
            p.add_argument("--seed", type=int)
            p.add_argument("--threads", type=int)
        if name in ("simulate", "sweep"):
            p.add_argument("--phi-method", dest="phi_method",
                           choices=("direct", "likelihood_ratio", "lr"))
        if name == "simulate":
            p.add_argument("--rule", help="threshold:<value>, calibrated or always_safe")
    return parser


def _check_epsilon(value, allow_schedule: bool):
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            if not allow_schedule:
                raise ConfigError("epsilon", f"expected a number, got {value!r}") from None
            try:
                sim.epsilon_schedule(value)
            except ValueError as exc:
                raise ConfigError("epsilon", str(exc)) from None
            return value
    value = float(value)
    if not 0 < value < 1:
        raise ConfigError("epsilon", f"must lie strictly between 0 and 1, got {value}")
    return value


def parse_config(args: list[str], file: bytes | None = None) -> RunConfig:
    """Merge command-line flags over the ``run`` section of the model file and validate."""
    ns = _build_parser().parse_args(args)
    if file is None:
        try:
            with open(ns.config, "rb") as fh:
                file = fh.read()
        except OSError as exc:
            raise ConfigError("config", str(exc)) from None
    try:
        data = json.loads(file)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError("config", f"malformed model file ({exc})") from None
    try:
        model = model_from_dict(data)
    except ModelError as exc:
        raise ConfigError("model", str(exc)) from None
    run = data.get("run", {}) or {}
    if not isinstance(run, dict):
        raise ConfigError("run", "must be an object")
    unknown = set(run) - {f.name for f in fields(RunConfig)} - {"n", "strategy"}
    if unknown:
        raise ConfigError("run", f"unknown keys {sorted(unknown)}")

    def pick(name, default=None, key=None):
        value = getattr(ns, name, None)
        if value is None:
            value = run.get(key or name, default)
        return value

    cfg = RunConfig(command=ns.command, model=model, config_path=ns.config)
    cfg.format = pick("format", "json" if ns.command == "solve" else "csv")
    cfg.output = pick("output")
    if ns.command == "solve":
        return cfg
    cfg.n_values = parse_n(pick("n", 100))
    cfg.epsilon = _check_epsilon(pick("epsilon", 0.1), allow_schedule=True)
    cfg.eta = float(pick("eta", 10.0))
    if not cfg.eta > 1:
        raise ConfigError("eta", f"must be greater than 1, got {cfg.eta}")
    delta = pick("delta")
    cfg.delta = None if delta is None else float(delta)
    if cfg.delta is not None and model.M >= 2 and not 0 <= cfg.delta < 1 / (model.M - 1):
        raise ConfigError("delta", f"must lie in [0, 1/(M-1)), got {cfg.delta}")
    cfg.trials = int(pick("trials", 10_000))
    if cfg.trials < 1:
        raise ConfigError("trials", "must be at least 1")
    seed = pick("seed")
    cfg.seed = None if seed is None else int(seed)
    if cfg.seed is not None and cfg.seed < 0:
        raise ConfigError("seed", "must be nonnegative")
    cfg.threads = int(pick("threads", 1))
    if cfg.threads < 1:
        raise ConfigError("threads", "must be at least 1")
    strategies = pick("strategy", "das", key="strategy")
    if isinstance(strategies, str):
        strategies = [s.strip() for s in strategies.split(",") if s.strip()]
    for s in strategies:
        if s.lower().replace("-", "_") not in STRATEGY_NAMES + ("rr", "roundrobin"):
            raise ConfigError("strategy", f"unknown strategy {s!r}")
    cfg.strategies = strategies
    cfg.rule = pick("rule", "calibrated")
    try:
        parse_rule(cfg.rule)
    except ValueError as exc:
        raise ConfigError("rule", str(exc)) from None
    cfg.phi_method = pick("phi_method", "direct")
    if cfg.phi_method == "lr":
        cfg.phi_method = "likelihood_ratio"
    if cfg.phi_method not in sim.PHI_METHODS:
        raise ConfigError("phi_method", f"unknown method {cfg.phi_method!r}")
    return cfg


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "" if math.isnan(value) else format(value, ".9g")
    if isinstance(value, (list, tuple)):
        return ";".join(_fmt(v) for v in value)
    return str(value)


def _jsonable(value):
    if isinstance(value, float) and math.isnan(value):
        return None
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    if hasattr(value, "tolist"):
        return value.tolist()
    return value


def _row(record) -> dict:
    if isinstance(record, dict):
        return record
    if is_dataclass(record):
        return {f.name: getattr(record, f.name) for f in fields(record)}
    raise TypeError(f"cannot emit {type(record).__name__}")


def emit(records, format: str = "csv", sink=None, columns=None) -> None:
    """Write records as CSV (9 significant digits) or a JSON array.

    ``columns`` fixes the CSV header; by default it comes from the first
    record, so pass it explicitly when the list may be empty.
    """
    sink = sys.stdout if sink is None else sink
    rows = [_row(r) for r in records]
    if columns is None:
        columns = list(rows[0]) if rows else []
    if format == "json":
        payload = [{c: _jsonable(r.get(c)) for c in columns} for r in rows]
        sink.write(json.dumps(payload, indent=2, allow_nan=False) + "\n")
        return
    if format != "csv":
        raise ValueError(f"unknown format {format!r}")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in rows:
        writer.writerow([_fmt(r.get(c)) for c in columns])
    sink.write(buf.getvalue())


def _seed(cfg: RunConfig) -> int:
    if cfg.seed is None:
        cfg.seed = secrets.randbelow(2**32)
        print(f"seed: {cfg.seed}", file=sys.stderr)
    return cfg.seed


def _eps(cfg: RunConfig, n: int) -> float:
    return float(sim.epsilon_schedule(cfg.epsilon)(n))


def _run(cfg: RunConfig):
    """Returns (records, columns) for the configured subcommand."""
    model = cfg.model
    solution = max_min_divergence(model)
    if cfg.command == "solve":
        row = solution.to_dict()
        row["per_component_divergence"] = per_component_divergence(model).tolist()
        return [row], ["d_star", "alpha_star", "beta_star", "per_component_divergence"]
    if cfg.command == "bounds":
        recs = [bounds.bound_report(model, solution, n, _eps(cfg, n), cfg.eta, cfg.delta)
                for n in cfg.n_values]
        return recs, list(bounds.BoundReport.COLUMNS)
    if cfg.command == "oracle":
        rows = []
        for n in cfg.n_values:
            res = sim.brute_force_small(model, n, _eps(cfg, n))
            rows.append({"n": n, "epsilon": res.epsilon, "phi_opt": res.phi_opt,
                         "phi_hull": res.phi_hull, "trees_searched": res.trees_searched,
                         "best_tree": res.best_tree})
        return rows, ["n", "epsilon", "phi_opt", "phi_hull", "trees_searched", "best_tree"]
    seed = _seed(cfg)
    if cfg.command == "sweep":
        recs = sim.sweep(model, solution, cfg.strategies, cfg.n_values, cfg.epsilon, cfg.trials,
                         seed, cfg.eta, cfg.delta, cfg.phi_method, cfg.threads)
        return recs, list(sim.SWEEP_COLUMNS)
    rows = []
    for name in cfg.strategies:
        strategy = make_strategy(name, solution)
        for n in cfg.n_values:
            eps = _eps(cfg, n)
            if cfg.command == "calibrate":
                theta = sim.calibrate_threshold(model, solution, strategy, n, eps, cfg.trials,
                                                seed, cfg.threads)
                rows.append({"strategy": strategy.name, "n": n, "epsilon": eps, "theta": theta,
                             "trials": cfg.trials, "seed": seed})
                continue
            rule = parse_rule(cfg.rule)
            if rule == "calibrated":
                rule = Threshold(sim.calibrate_threshold(model, solution, strategy, n, eps,
                                                         cfg.trials, seed, cfg.threads))
            est = sim.estimate(model, solution, strategy, rule, n, cfg.trials, seed,
                               cfg.phi_method, cfg.threads)
            theta = -math.inf if isinstance(rule, AlwaysSafe) else rule.theta
            row = {"strategy": strategy.name, "n": n, "epsilon": eps, "theta": theta}
            row.update(_row(est))
            rows.append(row)
    if cfg.command == "calibrate":
        return rows, ["strategy", "n", "epsilon", "theta", "trials", "seed"]
    return rows, ["strategy", "n", "epsilon", "theta", "psi_hat", "psi_ci", "phi_hat", "phi_ci",
                  "trials", "seed", "method"]


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_config(argv)
        records, columns = _run(cfg)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (ConfigError, ValueError, NotImplementedError, MemoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if cfg.output:
        with open(cfg.output, "w", newline="") as fh:
            _write(cfg, records, columns, fh)
    else:
        _write(cfg, records, columns, sys.stdout)
    return 0


def _write(cfg: RunConfig, records, columns, sink) -> None:
    if cfg.command == "solve" and cfg.format == "json":
        # a single document rather than a one-element array
        sink.write(json.dumps(records[0], indent=2) + "\n")
    else:
        emit(records, cfg.format, sink, columns)


if __name__ == "__main__":
    sys.exit(main())
