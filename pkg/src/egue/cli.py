"""Command line front end: JSON configs in, JSON/CSV tables out.

Every number written by this module goes through a fixed 17-significant-
digit formatter and every file uses LF line endings, so identical inputs
produce byte-identical outputs.  Exit codes: 0 success, 2 config or
argument validation failure, 3 infeasible spec, 4 verification failure
(anything else crashing out of the interpreter is the usual 1).
"""

from __future__ import annotations

import argparse
import json
import sys
from math import comb
from pathlib import Path

import jsonschema
import numpy as np

from egue import analytic, montecarlo
from egue.analytic import MOMENT_KEYS, GridSpec, MomentSet
from egue.ensembles import KINDS, ModelSpec
from egue.oracle import InfeasibleSpecError, OracleLimits, WickOracle, extract_racah

VERIFY_TOL = 1e-9


class VerificationFailure(Exception):
    pass


# config schemas ------------------------------------------------------------

def _int_field(minimum=0):
    return {"type": "integer", "minimum": minimum}


_POS_NUM = {"type": "number", "exclusiveMinimum": 0}

_SPEC_SCHEMAS = {
    "number_conserving": {
        "type": "object",
        "properties": {
            "kind": {"const": "number_conserving"},
            "N": _int_field(1), "m": _int_field(0),
            "k": _int_field(0), "t": _int_field(0),
            "v_h": _POS_NUM, "v_o": _POS_NUM,
        },
        "required": ["kind", "N", "m", "k", "t"],
        "additionalProperties": False,
    },
    "removal": {
        "type": "object",
        "properties": {
            "kind": {"const": "removal"},
            "N": _int_field(1), "m": _int_field(0),
            "k": _int_field(0), "k0": _int_field(0),
            "v_h": _POS_NUM, "v_o": _POS_NUM,
        },
        "required": ["kind", "N", "m", "k", "k0"],
        "additionalProperties": False,
    },
    "beta_decay": {
        "type": "object",
        "properties": {
            "kind": {"const": "beta_decay"},
            "N1": _int_field(1), "N2": _int_field(1),
            "m1": _int_field(0), "m2": _int_field(0),
            "k": _int_field(0), "k0": _int_field(0),
            "v_o": _POS_NUM,
            "v_h_ij": {
                "type": "array",
                "minItems": 1,
                "items": {
                    "type": "object",
                    "properties": {
                        "i": _int_field(0), "j": _int_field(0), "v": _POS_NUM,
                    },
                    "required": ["i", "j", "v"],
                    "additionalProperties": False,
                },
            },
        },
        "required": ["kind", "N1", "N2", "m1", "m2", "k", "k0", "v_h_ij"],
        "additionalProperties": False,
    },
}


def spec_from_config(cfg: dict) -> ModelSpec:
    """Validate a config dict against its kind's schema and build the spec."""
    if not isinstance(cfg, dict) or cfg.get("kind") not in KINDS:
        raise jsonschema.ValidationError(
            f"config must be an object with kind in {KINDS}"
        )
    kind = cfg["kind"]
    jsonschema.validate(cfg, _SPEC_SCHEMAS[kind])
    fields = dict(cfg)
    if kind == "beta_decay":
        fam = {}
        for row in fields.pop("v_h_ij"):
            key = (row["i"], row["j"])
            if key in fam:
                raise jsonschema.ValidationError(f"duplicate v_h_ij entry {key}")
            fam[key] = float(row["v"])
        fields["v_h_ij"] = fam
    spec = ModelSpec(**fields)
    try:
        spec.validate()
    except ValueError as e:
        raise jsonschema.ValidationError(str(e)) from e
    return spec


def spec_to_config(spec: ModelSpec) -> dict:
    """Inverse of spec_from_config: spec_from_config(spec_to_config(s)) == s."""
    cfg = {"kind": spec.kind}
    if spec.kind == "number_conserving":
        keys = ("N", "m", "k", "t")
    elif spec.kind == "removal":
        keys = ("N", "m", "k", "k0")
    else:
        keys = ("N1", "N2", "m1", "m2", "k", "k0")
    for key in keys:
        cfg[key] = getattr(spec, key)
    if spec.kind == "beta_decay":
        cfg["v_h_ij"] = [
            {"i": i, "j": j, "v": v}
            for (i, j), v in sorted(spec.v_h_ij.items())
        ]
    else:
        cfg["v_h"] = spec.v_h
    cfg["v_o"] = spec.v_o
    return cfg


# deterministic serialization ----------------------------------------------

def _fmt_num(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if x != x or x in (float("inf"), float("-inf")):
        return "null"
    return f"{x:.17g}"


def dumps(obj, indent: int = 0) -> str:
    """JSON with sorted keys and 17-significant-digit floats."""
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (bool, int, float)):
        return _fmt_num(obj)
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [inner + dumps(v, indent + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + pad + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [
            f"{inner}{json.dumps(str(k))}: {dumps(v, indent + 1)}"
            for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))
        ]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    raise TypeError(f"cannot serialize {type(obj)}")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return _fmt_num(v)
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def write_json(path: Path, obj) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps(obj) + "\n")


def _emit(result: dict, rows_header, rows, args, stem: str) -> None:
    """Send a result to stdout and/or files per --out and --format."""
    fmt = args.format
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if fmt in ("json", "both"):
            write_json(out / f"{stem}.json", result)
        if fmt in ("csv", "both") and rows_header is not None:
            write_csv(out / f"{stem}.csv", rows_header, rows)
    else:
        if fmt in ("json", "both"):
            sys.stdout.write(dumps(result) + "\n")
        if fmt in ("csv", "both") and rows_header is not None:
            sys.stdout.write(",".join(rows_header) + "\n")
            for row in rows:
                sys.stdout.write(",".join(_cell(v) for v in row) + "\n")


# shared result shaping ------------------------------------------------------

def _public_flags(ms_dict: dict) -> dict:
    """Rename the internal 'unavailable' flag to the CLI's 'oracle-only'."""
    out = {}
    for key, val in ms_dict.items():
        if isinstance(val, dict) and val.get("flag") == "unavailable":
            val = dict(val, flag="oracle-only")
        out[key] = val
    return out


def _moment_rows(ms: MomentSet, rename: bool = False):
    rows = []
    for key in MOMENT_KEYS:
        flag = ms.flags.get(key, "unavailable")
        if rename and flag == "unavailable":
            flag = "oracle-only"
        rows.append([key, ms.value(key), flag])
    return rows


def _cumulant_block(spec: ModelSpec, ms: MomentSet) -> dict:
    asym = None
    if spec.kind == "number_conserving":
        asym = analytic.asymptotics(spec.m, spec.k, spec.t)
    return analytic.cumulants(ms, asym).as_dict()


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise jsonschema.ValidationError(f"config is not valid JSON: {e}") from e
    except OSError as e:
        raise jsonschema.ValidationError(f"cannot read config: {e}") from e


# subcommands ---------------------------------------------------------------

def cmd_moments(args) -> int:
    spec = spec_from_config(load_config(args.config))
    ms = analytic.moments(spec)
    result = {
        "spec": spec_to_config(spec),
        "moments": _public_flags(ms.as_dict()),
        "cumulants": _cumulant_block(spec, ms),
    }
    header = ["moment", "value", "flag"]
    _emit(result, header, _moment_rows(ms, rename=True), args, "moments")
    return 0


def cmd_oracle(args) -> int:
    spec = spec_from_config(load_config(args.config))
    limits = OracleLimits()
    if args.max_dim:
        limits = OracleLimits(max_dim=args.max_dim)
    ms = WickOracle(spec, limits).moment_set()
    result = {
        "spec": spec_to_config(spec),
        "moments": ms.as_dict(),
        "cumulants": _cumulant_block(spec, ms),
    }
    if args.racah:
        if spec.kind != "number_conserving":
            raise jsonschema.ValidationError(
                "--racah applies to number_conserving specs only"
            )
        ex = extract_racah(spec.N, spec.m, spec.k, spec.t, limits)
        result["racah"] = {
            "term3": ex.term3,
            "w3": ex.w3,
            "table": {str(nu): v for nu, v in ex.table.items()},
            "implied_u2": ex.implied_u2,
        }
    header = ["moment", "value", "flag"]
    _emit(result, header, _moment_rows(ms), args, "oracle")
    return 0


def default_verify_grid() -> list[ModelSpec]:
    grid = []
    for N in range(5, 10):
        for m in range(2, min(4, N - 1) + 1):
            for k in range(1, min(3, m) + 1):
                for t in range(1, min(3, m) + 1):
                    grid.append(ModelSpec(
                        kind="number_conserving", N=N, m=m, k=k, t=t,
                        v_h=1.0, v_o=1.0,
                    ))
    return grid


def verify_spec(spec: ModelSpec, limits: OracleLimits) -> list[dict]:
    """Per-moment relative errors of the closed forms against the oracle."""
    oracle = WickOracle(spec, limits)
    ms = analytic.moments(spec)
    rows = []
    checks = {"M20": (2, 0), "M02": (0, 2), "M11": (1, 1),
              "M40": (4, 0), "M04": (0, 4), "M31": (3, 1)}
    for key, (p, q) in checks.items():
        exact = oracle.exact_moment(p, q)
        val = ms.value(key)
        rel = abs(val - exact) / max(abs(exact), 1e-300)
        rows.append({"moment": key, "analytic": val, "oracle": exact,
                     "rel_err": rel, "pass": rel <= VERIFY_TOL})
    # M22 closure: the two closed-form terms plus the oracle-extracted
    # third term must land back on the oracle value
    o22 = oracle.exact_moment(2, 2)
    partial, _ = analytic.m22(spec.N, spec.m, spec.k, spec.t, spec.v_h, spec.v_o)
    dim = comb(spec.N, spec.m)
    vv = spec.v_o * spec.v_h * spec.v_h
    w3 = (o22 - partial) * dim * dim / vv
    closed, _ = analytic.m22(spec.N, spec.m, spec.k, spec.t, spec.v_h, spec.v_o, w3)
    rel = abs(closed - o22) / max(abs(o22), 1e-300)
    rows.append({"moment": "M22", "analytic": closed, "oracle": o22,
                 "rel_err": rel, "pass": rel <= VERIFY_TOL})
    return rows


def cmd_verify(args) -> int:
    limits = OracleLimits()
    if args.max_dim:
        limits = OracleLimits(max_dim=args.max_dim)
    if args.config:
        cfg = load_config(args.config)
        if not isinstance(cfg, dict) or "grid" not in cfg or not isinstance(cfg["grid"], list):
            raise jsonschema.ValidationError('verify config must be {"grid": [spec, ...]}')
        extra = set(cfg) - {"grid"}
        if extra:
            raise jsonschema.ValidationError(f"unknown keys in verify config: {sorted(extra)}")
        grid = [spec_from_config(c) for c in cfg["grid"]]
    else:
        grid = default_verify_grid()

    entries = []
    n_fail = 0
    n_infeasible = 0
    for spec in grid:
        label = spec_to_config(spec)
        try:
            rows = verify_spec(spec, limits)
        except InfeasibleSpecError as e:
            entries.append({"spec": label, "status": "infeasible", "reason": str(e)})
            n_infeasible += 1
            continue
        bad = [r for r in rows if not r["pass"]]
        n_fail += len(bad)
        entries.append({
            "spec": label,
            "status": "pass" if not bad else "fail",
            "checks": rows,
        })

    result = {
        "tolerance": VERIFY_TOL,
        "n_specs": len(grid),
        "n_failures": n_fail,
        "n_infeasible": n_infeasible,
        "entries": entries,
    }
    header = ["kind", "N", "m", "k", "t", "moment", "analytic", "oracle", "rel_err", "status"]
    rows = []
    for e in entries:
        s = e["spec"]
        base = [s["kind"], s.get("N"), s.get("m"), s.get("k"), s.get("t")]
        if e["status"] == "infeasible":
            rows.append(base + ["", None, None, None, "infeasible"])
            continue
        for r in e["checks"]:
            rows.append(base + [r["moment"], r["analytic"], r["oracle"], r["rel_err"],
                                "pass" if r["pass"] else "fail"])
    _emit(result, header, rows, args, "verify")
    if n_fail:
        raise VerificationFailure(f"{n_fail} checks beyond tolerance {VERIFY_TOL}")
    if n_infeasible:
        raise InfeasibleSpecError(f"{n_infeasible} grid specs infeasible")
    return 0


def cmd_sample(args) -> int:
    spec = spec_from_config(load_config(args.config))
    max_dim = args.max_dim or montecarlo.MC_MAX_DIM
    n = args.samples
    seed = args.seed
    stats = montecarlo.run(spec, n, seed, max_dim)
    hist = montecarlo.strength_histogram(spec, n, seed, args.bins, max_dim)

    # predictions: the oracle covers every kind exactly when feasible,
    # the closed forms otherwise
    try:
        pred = WickOracle(spec).moment_set()
    except InfeasibleSpecError:
        pred = analytic.moments(spec)
    report = montecarlo.compare(stats, pred)

    sig_i = float(np.sqrt(stats.moments.m20 / stats.moments.m00))
    sig_f = float(np.sqrt(stats.moments.m02 / stats.moments.m00))
    dens = analytic.gaussian_density(
        sig_i, sig_f, stats.derived["xi"], hist.total_weight, GridSpec()
    )

    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    stats_doc = {
        "spec": spec_to_config(spec),
        "stats": stats.as_dict(),
        "compare": dict(report.as_dict(), prediction_provenance=pred.provenance),
        "histogram": {
            "bins": args.bins,
            "total_weight": hist.total_weight,
            "sum_rule_dev": hist.sum_rule_dev,
            "cloud": hist.moments(),
        },
        "gaussian": {
            "sigma_i": sig_i,
            "sigma_f": sig_f,
            "xi": stats.derived["xi"],
            "normalization": hist.total_weight,
        },
    }
    write_json(out / "stats.json", stats_doc)

    hrows = []
    for a, ei in enumerate(hist.ei_centers):
        for b, ef in enumerate(hist.ef_centers):
            hrows.append([float(ei), float(ef), float(hist.weights[a, b])])
    write_csv(out / "histogram.csv", ["ei_center", "ef_center", "weight"], hrows)

    grows = []
    for a, ei in enumerate(dens.ei_axis):
        for b, ef in enumerate(dens.ef_axis):
            grows.append([float(ei), float(ef), float(dens.values[a, b])])
    write_csv(out / "gaussian.csv", ["ei", "ef", "density"], grows)
    return 0


_SWEEP_SCHEMA = {
    "type": "object",
    "properties": {
        "vary": {"enum": ["N", "m"]},
        "values": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}},
    },
    "required": ["vary", "values"],
    "additionalProperties": False,
}


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if not isinstance(cfg, dict) or "sweep" not in cfg:
        raise jsonschema.ValidationError('sweep config needs a "sweep" section')
    sweep = cfg.pop("sweep")
    jsonschema.validate(sweep, _SWEEP_SCHEMA)
    vary, values = sweep["vary"], sweep["values"]
    if cfg.get("kind") != "number_conserving":
        raise jsonschema.ValidationError("sweep is defined for number_conserving specs")
    if vary in cfg:
        raise jsonschema.ValidationError(f"swept field {vary} must be absent from the spec")

    rows = []
    for value in values:
        spec = spec_from_config(dict(cfg, **{vary: value}))
        ms = analytic.moments(spec)
        asym = analytic.asymptotics(spec.m, spec.k, spec.t)
        rep = analytic.cumulants(ms, asym)
        mt20 = ms.m20 / ms.m00
        mt02 = ms.m02 / ms.m00
        mu22_partial = (ms.m22 / ms.m00) / (mt20 * mt02)
        k22_partial = None
        if rep.xi is not None:
            k22_partial = mu22_partial - 2.0 * rep.xi**2 - 1.0
        rows.append({
            "N": spec.N, "m": spec.m, "k": spec.k, "t": spec.t,
            "xi": rep.xi, "mu40": rep.mu40, "mu31": rep.mu31,
            "mu22_partial": mu22_partial,
            "k40": rep.k40, "k31": rep.k31, "k22_partial": k22_partial,
            "xi_inf": rep.xi_inf, "mu40_inf": rep.mu40_inf,
            "mu31_inf": rep.mu31_inf, "mu22_inf": rep.mu22_inf,
            "delta_xi": abs(rep.xi - rep.xi_inf) if rep.xi is not None else None,
            "delta_mu40": abs(rep.mu40 - rep.mu40_inf) if rep.mu40 is not None else None,
            "delta_mu31": abs(rep.mu31 - rep.mu31_inf) if rep.mu31 is not None else None,
        })
    result = {"vary": vary, "points": rows}
    header = list(rows[0].keys())
    _emit(result, header, [[r[h] for h in header] for r in rows], args, "sweep")
    return 0


# entry point ---------------------------------------------------------------

def _add_common(p, config_required=True):
    p.add_argument("--config", required=config_required, help="JSON config path")
    p.add_argument("--out", help="output directory (default: stdout for tables)")
    p.add_argument("--format", choices=["json", "csv", "both"], default="json")
    p.add_argument("--max-dim", type=int, dest="max_dim", help="sector dimension cap")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="egue",
        description="Finite-N moments of transition strength densities "
                    "for embedded Gaussian unitary ensembles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("moments", help="closed-form moments and cumulants")
    _add_common(p)
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("verify", help="analytic formulas against the contraction oracle")
    _add_common(p, config_required=False)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sample", help="Monte Carlo moments and strength histogram")
    _add_common(p)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=_u64, default=1)
    p.add_argument("--bins", type=int, default=25)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("sweep", help="finite-N convergence toward dilute-limit targets")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="exact ensemble-averaged moments by Wick contraction")
    _add_common(p)
    p.add_argument("--racah", action="store_true",
                   help="also extract the nu-resolved third M22 term (number_conserving)")
    p.set_defaults(func=cmd_oracle)
    return parser


def _u64(text: str) -> int:
    val = int(text)
    if not 0 <= val < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return val


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except jsonschema.ValidationError as e:
        print(f"config error: {e.message if hasattr(e, 'message') else e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return 2
    except InfeasibleSpecError as e:
        print(f"infeasible: {e}", file=sys.stderr)
        return 3
    except VerificationFailure as e:
        print(f"verification failed: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
