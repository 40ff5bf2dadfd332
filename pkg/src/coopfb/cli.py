"""Command-line front end.

Subcommands::

    coopfb run --config FILE [--out PATH] [--format csv|json] [--seed N] [--trials N] [--parallel N]
    coopfb preset NAME [key=value ...] [same output options]
    coopfb bounds --grid "n_t=16;k_users=2,3;b_f=4,6,8;b_c=16,inf;rho=1"
    coopfb partition --config FILE

Exit status is 0 on success, 1 for configuration or usage errors, 2 for
numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import math
import sys

import numpy as np

from coopfb import analysis
from coopfb.bitpartition import round_half_even
from coopfb.config import (
    PRESET_NAMES,
    ExperimentPreset,
    apply_overrides,
    parse_config,
    preset,
)
from coopfb.errors import (
    CapacityError,
    ConfigError,
    CoopFeedbackError,
    InvalidInputError,
)
from coopfb.sim import build_scenario, default_workers, run_experiment

__all__ = ["run_cli", "main", "SWEEP_HEADER", "TABLE1_HEADER", "BOUNDS_HEADER", "VALIDATE_HEADER"]

SWEEP_HEADER = ("sweep_parameter", "sweep_value", "scheme", "trials", "skipped",
                "sum_rate", "sum_rate_ci95", "leakage", "leakage_ci95")
TABLE1_HEADER = ("blockage_db", "bits_user1", "bits_user2")
BOUNDS_HEADER = ("n_t", "k_users", "b_f", "b_c", "rho", "bound", "value")
VALIDATE_HEADER = ("b_c", "trials", "mc_leakage", "mc_leakage_ci95", "two_user_bound", "within_bound")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def fmt(value) -> str:
    """Six significant digits; integers and labels pass through."""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{float(value):.6g}"
    return str(value)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def _json(obj) -> str:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, np.generic):
            return o.item()
        raise TypeError(type(o).__name__)
    return json.dumps(obj, indent=2, sort_keys=True, default=default) + "\n"


def _sweep_rows(points):
    rows = []
    for param, value, res in points:
        for s in res.config.schemes:
            if s not in res.mean:
                continue
            m, c = res.mean[s], res.ci[s]
            rows.append((param, value, s, res.trials, res.skipped, m["sum_rate"], c["sum_rate"],
                         m["leakage"], c["leakage"]))
    return rows


def _run_points(obj, workers):
    if isinstance(obj, ExperimentPreset):
        return [(obj.parameter, v, run_experiment(cfg, workers)) for v, cfg in obj.points()]
    return [("", "", run_experiment(obj, workers))]


def _emit_sweep(obj, points, out_format):
    if out_format == "json":
        doc = {"points": [{"sweep_parameter": p, "sweep_value": v, "result": r.to_dict()}
                          for p, v, r in points]}
        if isinstance(obj, ExperimentPreset):
            doc.update(preset=obj.name, sweep_parameter=obj.parameter,
                       values=[fmt(v) for v in obj.values], config=obj.base.to_dict())
        else:
            doc["config"] = obj.to_dict()
        return _json(doc)
    return _csv(SWEEP_HEADER, _sweep_rows(points))


def _table1(obj: ExperimentPreset, out_format):
    rows, sols = [], []
    for value, cfg in obj.points():
        spec = build_scenario(cfg.replace(schemes=("precoder-adaptive",))).adaptive
        bits = round_half_even(spec.bits)
        rows.append((value, bits[0, 1], bits[1, 0]))
        sols.append({"blockage_db": value, "bits": spec.bits, **(spec.partition.to_dict()
                                                                  if spec.partition else {})})
    if out_format == "json":
        return _json({"preset": obj.name, "config": obj.base.to_dict(), "points": sols})
    return _csv(TABLE1_HEADER, rows)


def _bound_rows(n_ts, ks, b_fs, b_cs, rhos):
    rows = []
    for n_t, k, b_f, b_c, rho in itertools.product(n_ts, ks, b_fs, b_cs, rhos):
        p = analysis.BoundInputs(int(n_t), int(k), b_f, b_c, rho)
        lo, hi = analysis.csi_feedback_bounds(p)
        values = [("leakage_upper_bound", analysis.leakage_upper_bound(p))]
        if p.k_users == 2:
            values.append(("two_user_bound", analysis.two_user_bound(p)))
        values += [("csi_feedback_lower", lo), ("csi_feedback_upper", hi),
                   ("k_user_leakage", analysis.k_user_leakage(p)),
                   ("k_user_leakage_approx", analysis.k_user_leakage(p, use_approx=True)),
                   ("beta_min_mean", analysis.beta_min_mean(p.n_t, p.b_f))]
        rows += [(p.n_t, p.k_users, p.b_f, p.b_c, p.rho, name, v) for name, v in values]
    return rows


def parse_grid(spec: str) -> dict:
    """``"n_t=16;b_f=4,6;b_c=16,inf"`` -> dict of value lists."""
    allowed = {"n_t", "k_users", "b_f", "b_c", "rho"}
    grid = {"n_t": [16.0], "k_users": [2.0], "b_f": [6.0], "b_c": [math.inf], "rho": [1.0]}
    for part in filter(None, (p.strip() for p in spec.split(";"))):
        key, sep, raw = part.partition("=")
        key = key.strip()
        if not sep or key not in allowed:
            raise ConfigError(f"grid entries must be one of {sorted(allowed)} as key=v1,v2", key=key)
        try:
            grid[key] = [float(v) for v in raw.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"non-numeric value in {raw!r}", key=key) from exc
        if not grid[key]:
            raise ConfigError("needs at least one value", key=key)
    return grid


def _bounds_from_preset(obj: ExperimentPreset):
    b = obj.base
    return _bound_rows([b.n_t], [b.k_users, 3], [4, 6, 8, 10], list(obj.values), [b.rho])


def _validate(obj: ExperimentPreset, workers, out_format):
    rows, points = [], []
    for value, cfg in obj.points():
        res = run_experiment(cfg, workers)
        bound = analysis.two_user_bound(analysis.BoundInputs(cfg.n_t, 2, cfg.b_f, cfg.b_c, cfg.rho))
        m = res.mean["precoder-rvq"]["leakage"]
        c = res.ci["precoder-rvq"]["leakage"]
        rows.append((value, res.trials, m, c, bound, bool(m <= bound)))
        points.append({"b_c": value, "result": res.to_dict(), "two_user_bound": bound})
    if out_format == "json":
        return _json({"preset": obj.name, "config": obj.base.to_dict(), "points": points})
    return _csv(VALIDATE_HEADER, rows)


def _write(text, out):
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _overrides(obj, args):
    overrides = {}
    for tok in getattr(args, "overrides", []) or []:
        key, sep, value = tok.partition("=")
        if not sep:
            raise ConfigError("overrides must look like key=value", key=tok)
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.trials is not None:
        overrides["trials"] = str(args.trials)
    return apply_overrides(obj, overrides)


def _build_parser():
    p = _Parser(prog="coopfb", description="Cooperative precoder feedback experiments")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def output_opts(sp):
        sp.add_argument("--out", help="output file (default: stdout)")
        sp.add_argument("--format", choices=("csv", "json"), default="csv")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--trials", type=int)
        sp.add_argument("--parallel", type=int, help="worker processes (default from COOPFB_PARALLEL)")

    r = sub.add_parser("run", help="run a config file")
    r.add_argument("--config", required=True)
    output_opts(r)
    pr = sub.add_parser("preset", help="run a built-in experiment")
    pr.add_argument("name", choices=PRESET_NAMES)
    pr.add_argument("overrides", nargs="*", help="key=value config overrides")
    output_opts(pr)
    b = sub.add_parser("bounds", help="evaluate the closed-form bounds on a grid")
    b.add_argument("--grid", default="")
    b.add_argument("--out")
    pa = sub.add_parser("partition", help="print the optimal bit partition for a config")
    pa.add_argument("--config", required=True)
    return p


def run_cli(argv=None) -> int:
    try:
        parser = _build_parser()
        args, extra = parser.parse_known_args(argv)
        bad = [t for t in extra if args.command != "preset" or "=" not in t or t.startswith("-")]
        if bad:
            parser.error(f"unrecognized arguments: {' '.join(bad)}")
        if args.command == "preset":
            args.overrides = list(args.overrides) + extra
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        if args.command == "bounds":
            g = parse_grid(args.grid)
            _write(_csv(BOUNDS_HEADER, _bound_rows(g["n_t"], g["k_users"], g["b_f"], g["b_c"],
                                                   g["rho"])), args.out)
            return EXIT_OK
        if args.command == "partition":
            obj = parse_config(args.config)
            cfg = obj.base if isinstance(obj, ExperimentPreset) else obj
            spec = build_scenario(cfg.replace(schemes=("precoder-adaptive",))).adaptive
            if spec.partition is None:
                raise InvalidInputError("no user pair needs CSI exchange")
            doc = {**spec.partition.to_dict(), "rounded_bits": round_half_even(spec.bits),
                   "dims": [[b.effective_dim if b is not None else 0 for b in row]
                            for row in spec.bases]}
            _write(_json(doc), None)
            return EXIT_OK
        workers = args.parallel or default_workers()
        if args.command == "run":
            obj = _overrides(parse_config(args.config), args)
            _write(_emit_sweep(obj, _run_points(obj, workers), args.format), args.out)
            return EXIT_OK
        obj = _overrides(preset(args.name), args)
        if obj.name == "table1":
            text = _table1(obj, args.format)
        elif obj.name == "bounds":
            text = _csv(BOUNDS_HEADER, _bounds_from_preset(obj))
        elif obj.name == "validate":
            text = _validate(obj, workers, args.format)
        else:
            text = _emit_sweep(obj, _run_points(obj, workers), args.format)
        _write(text, args.out)
        return EXIT_OK
    except (ConfigError, CapacityError, InvalidInputError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CoopFeedbackError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main():
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
