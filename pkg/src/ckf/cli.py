"""Command-line front end.

    ckf exp1 --seed 42 --out trace.csv --metrics metrics.csv
    ckf exp2 --seeds 0..9 --methods project,restrict-gain --metrics m.csv
    ckf run --config configs/exp1.yaml

Exit status is 0 on success, 1 on a usage or configuration error and 2 when
a filter fails numerically (the step and method are reported).
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np
import yaml

from .errors import ConstrainedFilterError
from .experiments import METHODS, RunTrace, ScenarioConfig, StepFailure, build_scenario, run_scenario
from .prediction import STRATEGIES

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2

_MATRIX_SECTIONS = ("model", "truth", "constraints")
_TRUTH_KEYS = {"Q": "truth_Q", "x0": "truth_x0"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "%.17g" % float(value)


def trace_header(trace: RunTrace) -> list:
    first = trace.records[0]
    cols = ["step", "time"]
    cols += [f"truth_{i + 1}" for i in range(first.truth.size)]
    cols += [f"z_{j + 1}" for j in range(first.measurement.size)]
    for name in trace.config.methods:
        n = first.estimates[name].mean.size
        cols += [f"{name}_mean_{i + 1}" for i in range(n)]
        cols += [f"{name}_trP", f"{name}_feasible", f"{name}_iters"]
    return cols


def trace_rows(trace: RunTrace):
    for rec in trace.records:
        row = [rec.step, rec.time, *rec.truth, *rec.measurement]
        for name in trace.config.methods:
            est = rec.estimates[name]
            row += [*est.mean, est.cov_trace, bool(est.feasible), int(est.iterations)]
        yield [_fmt(v) for v in row]


def write_trace(trace: RunTrace, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(trace_header(trace))
    writer.writerows(trace_rows(trace))


def write_metrics(traces: list, stream, with_seed: bool = False) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    head = ["method", "rmse", "violations", "max_violation", "wall_ms"]
    writer.writerow(["seed", *head] if with_seed else head)
    for trace in traces:
        for name in trace.config.methods:
            met = trace.metrics[name]
            row = [name, _fmt(met.rmse), str(met.violations), _fmt(met.max_violation), _fmt(met.wall_ms)]
            writer.writerow([str(trace.config.seed), *row] if with_seed else row)


# -- config files ------------------------------------------------------------


def _expected_shapes(n: int, m: int) -> dict:
    return {
        "F": (n, n), "H": (m, n), "Q": (n, n), "R": (m, m), "x0": (n,), "P0": (n, n),
        "truth_Q": (n, n), "truth_x0": (n,),
    }


def load_config(path) -> ScenarioConfig:
    """Read a YAML scenario file into a :class:`ScenarioConfig`.

    Top-level keys are :class:`ScenarioConfig` fields. Matrices go in the
    ``model`` (``F``, ``H``, ``Q``, ``R``, ``x0``, ``P0``), ``truth``
    (``Q``, ``x0``) and ``constraints`` (``A``, ``b``, ``C``, ``d``)
    sections as nested lists. An optional ``dims: {n: .., m: ..}`` section
    declares the sizes the linear-model matrices are checked against.
    """
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise UsageError(f"config {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError(f"config {path} must be a mapping")
    raw = dict(raw)
    overrides = {}
    for section in _MATRIX_SECTIONS:
        block = raw.pop(section, None) or {}
        if not isinstance(block, dict):
            raise UsageError(f"section {section!r} must be a mapping")
        for key, val in block.items():
            name = _TRUTH_KEYS.get(key, key) if section == "truth" else key
            overrides[name] = val
    dims = raw.pop("dims", None)
    known = {f.name for f in fields(ScenarioConfig)} - {"overrides"}
    unknown = set(raw) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    if dims is not None:
        try:
            shapes = _expected_shapes(int(dims["n"]), int(dims["m"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError("dims must give integer n and m") from exc
        for key, shape in shapes.items():
            if key in overrides:
                got = np.asarray(overrides[key], dtype=float)
                got_shape = got.shape if len(shape) == 2 else (got.size,)
                if got_shape != shape:
                    raise UsageError(f"{key} has shape {got.shape}, expected {shape}")
    if "methods" in raw and isinstance(raw["methods"], str):
        raw["methods"] = [m.strip() for m in raw["methods"].split(",")]
    if "tracked" in raw and raw["tracked"] is not None:
        raw["tracked"] = tuple(raw["tracked"])
    try:
        cfg = ScenarioConfig(overrides=overrides, **raw)
        build_scenario(replace(cfg, steps=1))
    except (TypeError, ValueError, ConstrainedFilterError) as exc:
        raise UsageError(f"invalid config {path}: {exc}") from exc
    return cfg


# -- argument handling -------------------------------------------------------


def _seed_range(text: str) -> list:
    try:
        lo, hi = (int(t) for t in text.split(".."))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a..b, got {text!r}") from exc
    if lo < 0 or hi < lo:
        raise argparse.ArgumentTypeError(f"empty or negative seed range {text!r}")
    return list(range(lo, hi + 1))


def _seed(text: str) -> int:
    try:
        val = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from exc
    if not 0 <= val < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return val


def _methods(text: str) -> tuple:
    names = tuple(t.strip() for t in text.split(",") if t.strip())
    bad = [n for n in names if n not in METHODS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"methods must be drawn from {','.join(METHODS)}, got {text!r}")
    return names


def _positive(text: str) -> int:
    try:
        val = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from exc
    if val < 1:
        raise argparse.ArgumentTypeError("steps must be >= 1")
    return val


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    seeds = common.add_mutually_exclusive_group()
    seeds.add_argument("--seed", type=_seed, default=None, help="noise seed (default 0)")
    seeds.add_argument("--seeds", type=_seed_range, default=None, help="seed range a..b, inclusive")
    common.add_argument("--methods", type=_methods, default=None)
    common.add_argument("--weighting", choices=("identity", "inv-cov"), default=None)
    common.add_argument("--constrain-prediction", choices=STRATEGIES, default=None)
    common.add_argument("--steps", type=_positive, default=None)
    common.add_argument("--out", default=None, help="trace CSV path (stdout when omitted)")
    common.add_argument("--metrics", default=None, help="metrics CSV path")
    common.add_argument("--quiet", action="store_true")

    parser = _Parser(prog="ckf", description="Constrained Kalman filter experiments")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    sub.add_parser("exp1", parents=[common], help="sine tracking with the sine EKF")
    sub.add_parser("exp2", parents=[common], help="sine tracking with the AR(6) EKF")
    run = sub.add_parser("run", parents=[common], help="custom scenario from a YAML file")
    run.add_argument("--config", required=True)
    return parser


def _config_from(ns) -> ScenarioConfig:
    if ns.command == "run":
        cfg = load_config(ns.config)
    else:
        cfg = ScenarioConfig(kind="sine-tracking" if ns.command == "exp1" else "ar6")
    changes = {}
    if ns.seed is not None:
        changes["seed"] = ns.seed
    if ns.methods is not None:
        changes["methods"] = ns.methods
    if ns.weighting is not None:
        changes["weighting"] = ns.weighting
    if ns.constrain_prediction is not None:
        changes["constrain_prediction"] = ns.constrain_prediction
    if ns.steps is not None:
        changes["steps"] = ns.steps
    return replace(cfg, **changes)


def _seed_path(path: str, seed: int) -> Path:
    p = Path(path)
    return p.with_name(f"{p.stem}_seed{seed}{p.suffix}")


def _summary(trace: RunTrace) -> str:
    parts = [
        f"{name}: rmse={trace.metrics[name].rmse:.4f} violations={trace.metrics[name].violations}"
        for name in trace.config.methods
    ]
    return f"seed {trace.config.seed}  " + "  ".join(parts)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        cfg = _config_from(ns)
    except UsageError as exc:
        print(f"ckf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # --help
        return EXIT_OK if not exc.code else EXIT_USAGE

    seeds = ns.seeds if ns.seeds is not None else [cfg.seed]
    traces = []
    for seed in seeds:
        try:
            trace = run_scenario(replace(cfg, seed=seed))
        except StepFailure as exc:
            print(
                f"ckf: numerical failure at step {exc.step} in method {exc.method}: {exc.cause}",
                file=sys.stderr,
            )
            return EXIT_NUMERICAL
        except ConstrainedFilterError as exc:
            print(f"ckf: numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERICAL
        traces.append(trace)
        if ns.out is None:
            buf = io.StringIO()
            write_trace(trace, buf)
            sys.stdout.write(buf.getvalue())
        else:
            out = Path(ns.out) if ns.seeds is None else _seed_path(ns.out, seed)
            with open(out, "w", newline="") as fh:
                write_trace(trace, fh)
        if not ns.quiet:
            print(_summary(trace), file=sys.stderr)

    if ns.metrics is not None:
        with open(ns.metrics, "w", newline="") as fh:
            write_metrics(traces, fh, with_seed=ns.seeds is not None)
    return EXIT_OK


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
