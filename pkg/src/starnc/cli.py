"""Command line front end: overhead tables, optimizer sweeps, throughput
ratios and simulator validation.

Every subcommand writes one table as CSV (``#`` metadata lines, then a
header row) or JSON. Exit codes: 0 success, 1 usage or I/O error,
2 model-domain error, 3 validation failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache

import numpy as np

from . import __version__
from . import netsim as ns
from . import optimizer as op
from . import overhead as ovh
from . import throughput as tp
from .channel import CodingModel
from .errors import ConfigurationError, ModelDomainError
from .throughput import NetworkParams

log = logging.getLogger("starnc")

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN, EXIT_VALIDATION = 0, 1, 2, 3

AXES = ("K", "q", "Y", "h", "p", "m", "R")
INT_AXES = {"K", "q", "Y", "h", "m"}
DEFAULTS = {"K": 1000, "q": 4, "Y": 6, "h": 16, "p": 0.04, "p_mac": None, "p_br": None,
            "m": 1, "R": None, "model": "ee", "seed": 0, "trials": None,
            "divisibility": "relaxed"}
TOLERANCES = {"golden_section": op.GOLDEN_TOL, "series_term": tp.TAIL_TERM_TOL,
              "series_tail": tp.TAIL_BOUND_TOL, "overhead_series": ovh.SERIES_TOL,
              "eps_ceiling": op.EPS_CEILING, "z_flag": ns.Z_FLAG}

OVERHEAD_COLUMNS = ["m", "q", "Y", "exact", "lower", "upper", "sim_mean", "sim_ci95"]
OPTIMIZE_COLUMNS = ["K", "q", "Y", "h", "p_mac", "p_br", "m_opt", "R_opt", "R_over_R0",
                    "blocks", "bits", "throughput", "certificate", "error"]
RATIO_COLUMNS = ["K", "q", "Y", "h", "p_mac", "p_br", "ratio", "asymptote", "m_rlnc",
                 "R_rlnc", "m_tdma", "R_tdma", "error"]
VALIDATE_COLUMNS = ["label", "mode", "m", "R", "analytic", "simulated", "se", "z", "flagged"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for model errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# sweep specs

def parse_values(axis: str, text: str) -> list:
    """``a,b,c`` lists values; ``start:stop:num`` or ``start:stop:num:log``
    spaces num points linearly or geometrically, both ends included."""
    if axis not in AXES:
        raise UsageError(f"unknown sweep axis {axis!r}; choose from {', '.join(AXES)}")
    cast = int if axis in INT_AXES else float
    try:
        if ":" in text:
            parts = text.split(":")
            if len(parts) not in (3, 4) or (len(parts) == 4 and parts[3] != "log"):
                raise ValueError
            lo, hi, num = float(parts[0]), float(parts[1]), int(parts[2])
            if num < 1:
                raise ValueError
            space = np.geomspace if len(parts) == 4 else np.linspace
            raw = space(lo, hi, num)
            vals = [cast(round(v)) if cast is int else float(v) for v in raw]
        else:
            vals = [cast(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"cannot parse sweep values {text!r} for {axis}") from None
    vals = list(dict.fromkeys(vals))
    if not vals:
        raise UsageError(f"empty sweep for {axis}")
    for v in vals:
        check_value(axis, v)
    return vals


def check_value(axis: str, v) -> None:
    bad = {
        "K": lambda x: x < 1,
        "Y": lambda x: x < 1,
        "h": lambda x: x < 0,
        "m": lambda x: x < 1,
        "q": lambda x: x < 2 or x & (x - 1) or x > 2**16,
        "p": lambda x: not 0 <= x < 0.5,
        "R": lambda x: not 0 < x <= 1,
    }[axis]
    if bad(v):
        raise UsageError(f"{axis}={v} is outside its domain")


def parse_sweep(spec: str | None):
    if spec is None:
        return None
    if "=" not in spec:
        raise UsageError(f"sweep must look like AXIS=values, got {spec!r}")
    axis, text = spec.split("=", 1)
    return axis.strip(), parse_values(axis.strip(), text.strip())


# settings

def settings(args) -> dict:
    """Defaults, then the config file, then command-line flags."""
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from None
        unknown = set(loaded) - set(DEFAULTS) - {"sweep"}
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update(loaded)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if args.strict_divisibility:
        cfg["divisibility"] = "strict"
    if args.sweep is None and "sweep" in cfg:
        args.sweep = cfg["sweep"]
    for axis in ("K", "q", "Y", "h", "m"):
        check_value(axis, cfg[axis])
    for key in ("p", "p_mac", "p_br"):
        if cfg[key] is not None:
            check_value("p", cfg[key])
    if cfg["R"] is not None:
        check_value("R", cfg["R"])
    try:
        CodingModel.parse(cfg["model"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not 0 <= int(cfg["seed"]) < 2**64:
        raise UsageError("seed must fit in 64 bits")
    return cfg


def base_params(cfg: dict) -> NetworkParams:
    p = cfg["p"]
    return NetworkParams(
        Y=int(cfg["Y"]), K=int(cfg["K"]), h=int(cfg["h"]), q=int(cfg["q"]), m=int(cfg["m"]),
        p_mac=p if cfg["p_mac"] is None else cfg["p_mac"],
        p_br=p if cfg["p_br"] is None else cfg["p_br"],
        R=1.0 if cfg["R"] is None else cfg["R"],
        model=cfg["model"], divisibility=cfg["divisibility"])


def apply_axis(params: NetworkParams, axis: str, value) -> NetworkParams:
    if axis == "p":
        return params.replace(p_mac=value, p_br=value)
    return params.replace(**{axis: value})


def grid(cfg: dict, sweep, default_axis=None, default_values=None) -> list:
    base = base_params(cfg)
    if sweep is None and default_axis:
        sweep = (default_axis, default_values)
    if sweep is None:
        return [base]
    axis, values = sweep
    return [apply_axis(base, axis, v) for v in values]


# output

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return str(v)


def metadata(command: str, cfg: dict, sweep, extra=None) -> dict:
    meta = {"tool": "starnc", "version": __version__, "command": command,
            "model": CodingModel.parse(cfg["model"]).value, "seed": int(cfg["seed"]),
            "divisibility": cfg["divisibility"], "tolerances": TOLERANCES,
            "params": {k: cfg[k] for k in DEFAULTS if k not in ("model", "seed", "divisibility")}}
    if sweep is not None:
        meta["sweep"] = {"axis": sweep[0], "values": sweep[1]}
    if extra:
        meta.update(extra)
    return meta


def render(rows: list, columns: list, meta: dict, fmt: str, notes=None) -> str:
    if fmt == "json":
        out = {"metadata": meta, "columns": columns, "rows": rows}
        if notes is not None:
            out.update(notes)
        return json.dumps(out, indent=2, default=_json_default) + "\n"
    buf = io.StringIO()
    for key, val in meta.items():
        text = val if isinstance(val, str) else json.dumps(val, sort_keys=True,
                                                          default=_json_default)
        buf.write(f"# {key}: {text}\n")
    for key, val in (notes or {}).items():
        buf.write(f"# {key}: {json.dumps(val, default=_json_default)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def emit(text: str, path: str | None) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def pmap(fn, items, jobs: int) -> list:
    """Map preserving input order, optionally over a process pool."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _point_columns(p: NetworkParams) -> dict:
    return {"K": p.K, "q": p.q, "Y": p.Y, "h": p.h, "p_mac": p.p_mac, "p_br": p.p_br}


# overhead

def _overhead_row(job) -> dict:
    m, q, Y, trials, seed = job
    row = {"m": m, "q": q, "Y": Y,
           "exact": ovh.expected_star_overhead(m, q, Y),
           "lower": ovh.overhead_lower(q, Y),
           "upper": ovh.overhead_upper(q, Y)}
    if trials:
        s = ns.simulate_overhead(m, q, Y, trials, seed)
        row["sim_mean"] = s.overhead.mean
        row["sim_ci95"] = s.overhead.ci95
    return row


def cmd_overhead(args, cfg) -> int:
    sweep = parse_sweep(args.sweep)
    if sweep and sweep[0] not in ("m", "q", "Y"):
        raise UsageError("overhead sweeps one of m, q, Y")
    axis, values = sweep or ("m", list(range(1, 17)))
    base = {"m": int(cfg["m"]), "q": int(cfg["q"]), "Y": int(cfg["Y"])}
    jobs = []
    for v in values:
        pt = dict(base, **{axis: v})
        jobs.append((pt["m"], pt["q"], pt["Y"], int(cfg["trials"] or 0), int(cfg["seed"])))
    rows = pmap(_overhead_row, jobs, args.jobs)
    meta = metadata("overhead", cfg, (axis, values))
    emit(render(rows, OVERHEAD_COLUMNS, meta, args.format), args.out)
    return EXIT_OK


# optimize

def _optimize_row(job) -> dict:
    params, scheme, phase, exhaustive, m_max = job
    row = _point_columns(params)
    try:
        res = op.optimize(params, scheme, phase, exhaustive=exhaustive, m_max=m_max)
    except (ModelDomainError, ConfigurationError, ArithmeticError) as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row
    row.update(res.as_row())
    return row


def cmd_optimize(args, cfg) -> int:
    sweep = parse_sweep(args.sweep)
    points = grid(cfg, sweep)
    jobs = [(p, args.scheme, args.phase, args.exhaustive, args.m_max) for p in points]
    rows = pmap(_optimize_row, jobs, args.jobs)
    meta = metadata(f"optimize {args.scheme} {args.phase}", cfg, sweep)
    emit(render(rows, OPTIMIZE_COLUMNS, meta, args.format), args.out)
    return EXIT_DOMAIN if any(r.get("error") for r in rows) else EXIT_OK


# ratio

def _ratio_row(params: NetworkParams) -> dict:
    row = _point_columns(params)
    row["asymptote"] = tp.asymptotic_ratio(params.Y) if params.Y > 1 else None
    try:
        ratio, rl, td = op.optimal_throughput_ratio(params)
    except (ModelDomainError, ConfigurationError, ArithmeticError) as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row
    row.update(ratio=ratio, m_rlnc=rl.m_opt, R_rlnc=rl.R_opt, m_tdma=td.m_opt, R_tdma=td.R_opt)
    return row


def ratio_crossings(base: NetworkParams, lo: int, hi: int) -> list:
    @lru_cache(maxsize=None)
    def f(K):
        return op.optimal_throughput_ratio(base.replace(K=K))[0]

    return op.find_crossings(f, lo, hi)


def cmd_ratio(args, cfg) -> int:
    sweep = parse_sweep(args.sweep)
    if sweep is None:
        sweep = ("K", parse_values("K", "100:100000:16:log"))
    points = grid(cfg, sweep)
    rows = pmap(_ratio_row, points, args.jobs)
    notes = None
    if sweep[0] == "K" and len(sweep[1]) > 1 and not args.no_crossings:
        Ks = sorted(sweep[1])
        notes = {"crossings": ratio_crossings(base_params(cfg), Ks[0], Ks[-1])}
    meta = metadata("ratio", cfg, sweep)
    emit(render(rows, RATIO_COLUMNS, meta, args.format, notes), args.out)
    return EXIT_DOMAIN if any(r.get("error") for r in rows) else EXIT_OK


# simulate

def simulate_points(args, cfg) -> list:
    if args.grid == "symmetric":
        return ns.symmetric_grid(model=cfg["model"], divisibility=cfg["divisibility"])
    if args.grid == "noiseless":
        return ns.noiseless_grid()
    sweep = parse_sweep(args.sweep)
    points = []
    for p in grid(cfg, sweep):
        label = "-".join(f"{k}{v}" for k, v in _point_columns(p).items()) + "-"
        if cfg["R"] is None:
            for pt in ns.optimized_points(p, label):
                if args.scheme in (None, pt.mode):
                    points.append(pt)
        else:
            for mode in ns.MODES:
                if args.scheme in (None, mode):
                    points.append(ns.ValidationPoint(p, mode, label + mode))
    return points


def _validate_point(job):
    pt, trials, seed, mutation, fidelity = job
    table = ns.validate([pt], trials, seed, mutation, fidelity)
    rep = ns.simulate(ns.TrialConfig(pt.params, trials, seed, pt.mode, fidelity))
    return table.rows[0], rep.to_dict()


def cmd_simulate(args, cfg) -> int:
    trials = int(cfg["trials"] or 10_000)
    seed = int(cfg["seed"])
    fidelity = "symbolic" if args.trace else args.fidelity
    points = simulate_points(args, cfg)
    if args.trace:
        if len(points) != 1:
            raise UsageError("--trace needs exactly one simulated point")
        rep = ns.simulate(ns.TrialConfig(points[0].params, trials, seed, points[0].mode,
                                         "symbolic", trace=points[0].mode == "rlnc"))
        ns.write_trace(args.trace, rep.trace or [])
    jobs = [(pt, trials, seed, args.mutation, fidelity) for pt in points]
    results = pmap(_validate_point, jobs, args.jobs)
    rows = []
    for vr, _ in results:
        rows.append({"label": vr.label, "mode": vr.mode, "m": vr.params["m"],
                     "R": vr.params["R"], "analytic": vr.analytic, "simulated": vr.simulated,
                     "se": vr.se, "z": vr.z, "flagged": vr.flagged})
    if args.report:
        doc = {"schema_version": ns.SCHEMA_VERSION, "reports": [r for _, r in results]}
        emit(json.dumps(doc, indent=2) + "\n", args.report)
    meta = metadata("simulate", cfg, parse_sweep(args.sweep),
                    {"trials": trials, "fidelity": fidelity, "mutation": args.mutation,
                     "grid": args.grid})
    emit(render(rows, VALIDATE_COLUMNS, meta, args.format), args.out)
    flagged = [r for r in rows if r["flagged"]]
    for r in flagged:
        print(f"validation failed: {r['label']} z={r['z']:.2f}", file=sys.stderr)
    return EXIT_VALIDATION if flagged else EXIT_OK


# parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("output and run control")
    g.add_argument("--out", help="output path (default stdout)")
    g.add_argument("--format", choices=("csv", "json"), default="csv")
    g.add_argument("--model", choices=("ee", "ppv"), help="block error model")
    g.add_argument("--seed", type=int, help="master seed for simulation")
    g.add_argument("--trials", type=int, help="Monte Carlo trials per point")
    g.add_argument("--strict-divisibility", action="store_true",
                   help="only allow m with m*log2(q) dividing K")
    g.add_argument("--config", help="JSON file of default parameters")
    g.add_argument("--jobs", type=int, default=1, help="worker processes")
    g.add_argument("--sweep", help="AXIS=v1,v2,... or AXIS=start:stop:num[:log]")
    g.add_argument("-v", "--verbose", action="store_true")
    pg = common.add_argument_group("scenario")
    pg.add_argument("--K", type=int, help="message bits per source")
    pg.add_argument("--q", type=int, help="field size (power of two)")
    pg.add_argument("--Y", type=int, help="number of sources")
    pg.add_argument("--h", type=int, help="header bits per block")
    pg.add_argument("--p", type=float, help="crossover probability of both channels")
    pg.add_argument("--p-mac", dest="p_mac", type=float)
    pg.add_argument("--p-br", dest="p_br", type=float)
    pg.add_argument("--m", type=int, help="blocks per message (overhead, simulate)")
    pg.add_argument("--R", type=float, help="channel code rate (simulate)")

    parser = _Parser(prog="starnc", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"starnc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("overhead", parents=[common], help="expected RLNC overhead and bounds")

    p = sub.add_parser("optimize", parents=[common], help="optimal (m, R) per grid point")
    p.add_argument("--phase", choices=op.PHASES, default="joint")
    p.add_argument("--scheme", choices=op.SCHEMES, default="rlnc")
    p.add_argument("--exhaustive", action="store_true", help="scan every admissible m")
    p.add_argument("--m-max", dest="m_max", type=int)

    p = sub.add_parser("ratio", parents=[common], help="RLNC/TDMA throughput ratio")
    p.add_argument("--no-crossings", action="store_true", help="skip the ratio=1 search")

    p = sub.add_parser("simulate", parents=[common], help="simulate and validate")
    p.add_argument("--grid", choices=("point", "symmetric", "noiseless"), default="point")
    p.add_argument("--scheme", choices=op.SCHEMES)
    p.add_argument("--fidelity", choices=ns.FIDELITIES, default="rank")
    p.add_argument("--mutation", type=float, default=1.0,
                   help="scale the analytic values (harness self-test)")
    p.add_argument("--report", help="write simulation reports as JSON here")
    p.add_argument("--trace", help="write an NDJSON event trace (one point only)")
    return parser


COMMANDS = {"overhead": cmd_overhead, "optimize": cmd_optimize, "ratio": cmd_ratio,
            "simulate": cmd_simulate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # usage errors and --help/--version; report the code instead of exiting
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        if args.trials is not None and args.trials < 1:
            raise UsageError("--trials must be >= 1")
        cfg = settings(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"starnc: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as exc:
        print(f"starnc: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ModelDomainError as exc:
        print(f"starnc: model domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"starnc: I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
