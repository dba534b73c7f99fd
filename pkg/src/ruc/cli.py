"""Command-line front door: ``ruc <subcommand> --config run.yaml [--set key=value ...]``.

Exit codes: 0 success, 1 domain error (error class name on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import ConfigError, ParseError, RucError
from .evaluator import Evaluator
from .grammar import DEFAULT_WINDOWS, Grammar, parse
from .panel import PanelFrame, load_csv, write_matrix_csv
from .profiler import profile, suggest_windows
from .safeguards import (NestedCvConfig, StressConfig, load_stress_windows, nested_cv,
                         parse_stress_windows, stress_test, vif, vif_filter)
from .search import SearchConfig, random_search_baseline, run_search
from .stats import LOSSES, diebold_mariano
from .surrogate import SplitConfig

SUBCOMMANDS = ("profile", "search", "baseline", "evaluate", "vif", "cv", "stress", "compare")
TOP_N = 10

DEFAULT_CONFIG = {
    "data": {"path": None, "layout": "wide"},
    "target": None,
    "horizon": 1,
    "grammar": {
        "variables": None,          # default: every non-target variable
        "windows": list(DEFAULT_WINDOWS),  # or "auto" (profiler rule)
        "max_depth": 4,
        "families": None,
        "exclude": [],
    },
    "search": {
        "K": 200, "N": 20, "max_evaluations": 5000, "T0": 1.0, "cooling": 0.95,
        "seed": 0, "objective": "mean_oos_r2", "model": "ols", "structural_rate": 0.8,
        "initial_train_fraction": 0.5, "test_len": None, "step": None, "min_rows": 30,
    },
    "safeguards": {
        "vif_threshold": 5.0, "cv_folds": 4, "stress_windows": None, "rho": 0.25,
        "finalists": 10,
    },
    "output": "runs",
}


class UsageError(Exception):
    pass


# -- config ---------------------------------------------------------------------

def _merge(base, override, prefix=""):
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {prefix + key!r}")
        if isinstance(base[key], dict) and value is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {prefix + key!r} must be a mapping")
            _merge(base[key], value, prefix + key + ".")
        else:
            base[key] = value
    return base


def _set_dotted(config, assignment):
    if "=" not in assignment:
        raise UsageError(f"--set expects key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = config
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config key {key!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = yaml.safe_load(raw) if raw.strip() else None


def load_config(path=None, sets=(), seed=None) -> dict:
    """Defaults, then the YAML file, then ``--set`` overrides, then ``--seed``."""
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
        _merge(config, data)
        data_path = config["data"]["path"]
        if data_path and not os.path.isabs(data_path):
            config["data"]["path"] = str(Path(path).parent / data_path)
    for s in sets:
        _set_dotted(config, s)
    if seed is not None:
        config["search"]["seed"] = seed
    return config


def _frame(config) -> PanelFrame:
    path = config["data"]["path"]
    if not path:
        raise ConfigError("data.path is required")
    return load_csv(path, config["data"]["layout"])


def _target(config, frame):
    target = config["target"]
    if target is None:
        raise ConfigError("target is required")
    if target not in frame.variables:
        raise ConfigError(f"target {target!r} is not a variable of the data")
    return target


def _grammar(config, frame, target) -> Grammar:
    g = config["grammar"]
    variables = g["variables"] or [v for v in frame.variables if v != target]
    missing = [v for v in variables if v not in frame.variables]
    if missing:
        raise ConfigError(f"grammar variables not in data: {missing}")
    windows = g["windows"]
    if windows == "auto":
        suggested = suggest_windows(profile(frame))
        windows = sorted(set().union(*(suggested[v] for v in variables)))
    try:
        return Grammar.default(variables, tuple(int(w) for w in windows), int(g["max_depth"]),
                               g["families"], tuple(g["exclude"] or ()))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _split(config) -> SplitConfig:
    s = config["search"]
    try:
        return SplitConfig(s["initial_train_fraction"], s["test_len"], s["step"], s["model"],
                           s["objective"], int(config["horizon"]), int(s["min_rows"]))
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def _search_config(config, grammar, threads) -> SearchConfig:
    s = config["search"]
    try:
        return SearchConfig(grammar=grammar, K=int(s["K"]), N=int(s["N"]),
                            max_evaluations=int(s["max_evaluations"]), T0=float(s["T0"]),
                            cooling=float(s["cooling"]), seed=int(s["seed"]),
                            split=_split(config), threads=threads,
                            structural_rate=float(s["structural_rate"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _threads(arg):
    if arg is not None:
        n = arg
    elif os.environ.get("RUC_THREADS"):
        try:
            n = int(os.environ["RUC_THREADS"])
        except ValueError:
            raise UsageError("RUC_THREADS must be an integer") from None
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise UsageError("--threads must be >= 1")
    return n


def _out_dir(args, config, name) -> Path:
    out = Path(args.out) if args.out else Path(config["output"]) / name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, obj):
    def default(o):
        if hasattr(o, "isoformat"):
            return o.isoformat()
        if isinstance(o, np.generic):
            return o.item()
        raise TypeError(type(o).__name__)

    def clean(v):
        if isinstance(v, float) and not np.isfinite(v):
            return repr(v)
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        return v

    with open(path, "w", encoding="utf-8") as fh:
        json.dump(clean(obj), fh, indent=2, default=default)
        fh.write("\n")


def _write_meta(out, config, command):
    """Effective config (after overrides) plus versions: enough to replay the run."""
    _write_json(out / "meta.json", {"command": command, "run_config": config,
                                    "versions": {"ruc": __version__, "numpy": np.__version__}})


# -- program lists ----------------------------------------------------------------

def _programs(args, config, grammar):
    texts = list(args.program or [])
    if args.from_run:
        with open(Path(args.from_run) / "ranked.csv", newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        texts += [r["program"] for r in rows[:int(config["safeguards"]["finalists"])]]
    if not texts:
        raise UsageError("give --program (repeatable) or --from-run")
    return [parse(t, grammar) for t in texts]


# -- subcommands --------------------------------------------------------------------

def cmd_profile(args, config):
    frame = _frame(config)
    prof = profile(frame)
    out = _out_dir(args, config, "profile")
    (out / "profile.txt").write_text(prof.to_text(), encoding="utf-8")
    windows = suggest_windows(prof)
    with open(out / "windows.txt", "w", encoding="utf-8") as fh:
        for v, ws in windows.items():
            fh.write(f"{v}={','.join(str(w) for w in ws)}\n")
    _write_meta(out, config, "profile")
    print(f"profiled {len(prof.records)} series -> {out / 'profile.txt'}")


def _run(args, config, kind):
    frame = _frame(config)
    target = _target(config, frame)
    grammar = _grammar(config, frame, target)
    cfg = _search_config(config, grammar, _threads(args.threads))
    fn = run_search if kind == "search" else random_search_baseline
    artifact = fn(cfg, frame, target)
    artifact.meta["run_config"] = config
    out = artifact.write(_out_dir(args, config, kind))
    for row in list(artifact.ranked_rows())[:TOP_N]:
        print(f"{row[0]:>3}  {float(row[2]):.6f}  {row[1]}")
    print(f"artifact: {out}", file=sys.stderr)


def cmd_search(args, config):
    _run(args, config, "search")


def cmd_baseline(args, config):
    _run(args, config, "baseline")


def cmd_evaluate(args, config):
    frame = _frame(config)
    target = config["target"]
    grammar = _grammar(config, frame, target)
    if not args.program or len(args.program) != 1:
        raise UsageError("evaluate takes exactly one --program")
    program = parse(args.program[0], grammar)
    fm = Evaluator(frame).evaluate(program)
    out = _out_dir(args, config, "evaluate")
    write_matrix_csv(fm.timestamps, fm.entities, "feature", fm.values, out / "feature.csv")
    (out / "program.txt").write_text(fm.provenance + "\n", encoding="utf-8")
    _write_meta(out, config, "evaluate")
    print(f"{fm.provenance} -> {out / 'feature.csv'}")


def cmd_vif(args, config):
    frame = _frame(config)
    target = _target(config, frame)
    grammar = _grammar(config, frame, target)
    programs = _programs(args, config, grammar)
    ev = Evaluator(frame)
    features = [ev.evaluate(p) for p in programs]
    values = vif(features, frame)
    kept = {f.provenance for f in vif_filter(features, frame,
                                             float(config["safeguards"]["vif_threshold"]))}
    out = _out_dir(args, config, "vif")
    with open(out / "vif.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["program", "vif", "retained"])
        for f, v in zip(features, values):
            w.writerow([f.provenance, repr(float(v)), int(f.provenance in kept)])
            print(f"{v:12.4f}  {'keep' if f.provenance in kept else 'drop'}  {f.provenance}")
    _write_meta(out, config, "vif")


def cmd_cv(args, config):
    frame = _frame(config)
    target = _target(config, frame)
    grammar = _grammar(config, frame, target)
    programs = _programs(args, config, grammar)
    cfg = NestedCvConfig(int(config["safeguards"]["cv_folds"]),
                         float(config["search"]["initial_train_fraction"]), _split(config))
    report = nested_cv(programs, frame, target, cfg)
    out = _out_dir(args, config, "cv")
    _write_json(out / "cv.json", asdict(report) | {"audit_ok": report.audit()})
    _write_meta(out, config, "cv")
    print(f"stability {report.stability:.3f}  modal {report.modal_program}  "
          f"mean_oos_r2 {report.mean_oos_r2:.6f}  audit {'ok' if report.audit() else 'FAILED'}")


def cmd_stress(args, config):
    frame = _frame(config)
    target = _target(config, frame)
    grammar = _grammar(config, frame, target)
    if not args.program or len(args.program) != 1:
        raise UsageError("stress takes exactly one --program")
    program = parse(args.program[0], grammar)
    spec = config["safeguards"]["stress_windows"]
    if spec is None or isinstance(spec, str):
        windows = load_stress_windows(spec)
    else:
        windows = parse_stress_windows(spec)
    report = stress_test(program, frame, target, windows,
                         StressConfig(float(config["safeguards"]["rho"]), _split(config)))
    out = _out_dir(args, config, "stress")
    _write_json(out / "stress.json", asdict(report) | {"passed": report.passed})
    with open(out / "stress.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "start", "end", "oos_r2", "oos_mae", "n_obs", "pass"])
        for r in report.windows:
            w.writerow([r.name, r.date_range[0].isoformat(), r.date_range[1].isoformat(),
                        repr(r.oos_r2), repr(r.oos_mae), r.n_obs, int(r.passed)])
    _write_meta(out, config, "stress")
    for r in report.windows:
        print(f"{r.name:<16} r2 {r.oos_r2:.4f}  {'pass' if r.passed else 'FAIL'}")


def _read_errors(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip().lower() for h in rows[0]] != ["timestamp", "error"]:
        raise ParseError(f"{path}: expected header timestamp,error")
    stamps = [r[0].strip() for r in rows[1:] if r]
    try:
        errors = np.array([float(r[1]) for r in rows[1:] if r])
    except (ValueError, IndexError):
        raise ParseError(f"{path}: non-numeric error value") from None
    return stamps, errors


def cmd_compare(args, config):
    s1, e1 = _read_errors(args.errors[0])
    s2, e2 = _read_errors(args.errors[1])
    if len(s1) == len(s2) and s1 != s2:
        raise ParseError("error files have different timestamps")
    result = diebold_mariano(e1, e2, args.horizon, args.loss)
    print(f"DM statistic {result.statistic:.6f}  p-value {result.p_value:.6g}  "
          f"n {result.n}  h {result.h}  loss {result.loss}")


COMMANDS = {
    "profile": cmd_profile, "search": cmd_search, "baseline": cmd_baseline,
    "evaluate": cmd_evaluate, "vif": cmd_vif, "cv": cmd_cv, "stress": cmd_stress,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ruc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        if name == "compare":
            p.add_argument("errors", nargs=2, metavar="ERRORS_CSV")
            p.add_argument("--horizon", type=int, default=1)
            p.add_argument("--loss", choices=LOSSES, default="squared")
            continue
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a dotted config key (repeatable)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory (default: <output>/<subcommand>)")
        if name in ("search", "baseline"):
            p.add_argument("--threads", type=int,
                           help="scoring workers (default: $RUC_THREADS or CPU count)")
        if name in ("evaluate", "vif", "cv", "stress"):
            p.add_argument("--program", action="append", help="program text (repeatable)")
        if name in ("vif", "cv"):
            p.add_argument("--from-run", help="search artifact dir; uses its top finalists")
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        config = {} if args.command == "compare" else \
            load_config(args.config, args.set, args.seed)
        COMMANDS[args.command](args, config)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ruc: error: {exc}", file=sys.stderr)
        return 2
    except (RucError, OSError, yaml.YAMLError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
