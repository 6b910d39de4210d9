"""Command-line interface.

Every command reads an optional JSON config (validated against a schema that
rejects unknown keys), computes its result in memory and only then writes
its output files atomically. Exit codes: 0 success, 1 usage or input error,
2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import jsonschema
import numpy as np

from spgarch import weights as wmod
from spgarch._io import atomic_write_text
from spgarch.diagnostics import morans_i, residual_heteroscedasticity_report
from spgarch.errors import (DegenerateInput, DegenerateWeights, DomainError, ParseError,
                            PipelineError, SpgarchError)
from spgarch.estimate import estimate_nls
from spgarch.mc import McDesign, format_mc_csv, run_mc, mc_metadata
from spgarch.model import ModelSpec, Theta, Variant
from spgarch.sar import sar_spgarch_pipeline, synthetic_pipeline_data
from spgarch.simulate import format_field_csv, read_field_csv, simulate_field

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2

_THETA = {
    "type": "object",
    "properties": {"rho": {"type": "number"}, "lambda": {"type": "number"}, "alpha": {"type": "number"}},
    "required": ["rho", "lambda", "alpha"],
    "additionalProperties": False,
}
_MODEL = {
    "type": "object",
    "properties": {
        "variant": {"enum": [v.value for v in Variant]},
        "innovation": {
            "oneOf": [
                {"enum": ["normal"]},
                {"type": "object",
                 "properties": {"type": {"enum": ["normal", "truncated_normal"]},
                                "bound": {"type": "number", "exclusiveMinimum": 0}},
                 "required": ["type"], "additionalProperties": False},
            ]
        },
    },
    "additionalProperties": False,
}
_GRID = {
    "type": "object",
    "properties": {"d": {"type": "integer", "minimum": 1}, "oriented": {"type": "boolean"}},
    "required": ["d"],
    "additionalProperties": False,
}
_SEED = {"type": "integer", "minimum": 0, "maximum": 2**64 - 1}
_COMMON = {"seed": _SEED, "out": {"type": "string"}, "threads": {"type": "integer", "minimum": 1}}


def _schema(**props):
    return {"type": "object", "properties": {**_COMMON, **props}, "additionalProperties": False}


SCHEMAS = {
    "simulate": _schema(
        model=_MODEL, theta=_THETA, w1={"type": "string"}, w2={"type": "string"}, grid=_GRID,
        solver={"enum": ["auto", "direct", "fixed_point"]},
        tol={"type": "number", "exclusiveMinimum": 0}, max_iter={"type": "integer", "minimum": 1}),
    "estimate": _schema(
        model=_MODEL, field={"type": "string"}, w1={"type": "string"}, w2={"type": "string"},
        grid=_GRID, starts={"type": "array", "items": _THETA, "minItems": 1},
        tol={"type": "number", "exclusiveMinimum": 0}, max_iter={"type": "integer", "minimum": 1},
        c_override={"type": "number"}, trace={"type": "boolean"}),
    "mc": _schema(
        model=_MODEL,
        grid_sizes={"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1},
        rho0={"type": "array", "items": {"type": "number"}, "minItems": 1},
        lambda0={"type": "array", "items": {"type": "number"}, "minItems": 1},
        alpha0={"type": "number", "exclusiveMinimum": 0}, m={"type": "integer", "minimum": 1},
        timing={"type": "boolean"}),
    "moran": _schema(
        field={"type": "string"}, column={"enum": ["y", "eps", "h"]}, weights={"type": "string"},
        grid=_GRID, permutations={"type": "integer", "minimum": 0}, report={"type": "boolean"}),
    "pipeline": _schema(
        model=_MODEL, data={"type": "string"},
        covariates={"type": "array", "items": {"type": "string"}},
        w_mean={"type": "string"}, w1={"type": "string"}, w2={"type": "string"},
        synthetic={"type": "object",
                   "properties": {"n": {"type": "integer", "minimum": 4}, "psi": {"type": "number"},
                                  "theta": _THETA},
                   "additionalProperties": False},
        permutations={"type": "integer", "minimum": 0}),
    "weights": _schema(
        kind={"enum": ["rook", "inverse_distance", "delaunay", "convert"]},
        grid=_GRID, sites={"type": "string"}, input={"type": "string"},
        k={"type": "number", "exclusiveMinimum": 0}, cutoff={"type": "number", "exclusiveMinimum": 0},
        standardize={"type": "boolean"}, oriented={"type": "boolean"}),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON config file for the command")
    common.add_argument("--seed", metavar="U64", type=int, help="random seed (overrides the config)")
    common.add_argument("--threads", metavar="N", type=int,
                        help="worker count for MC and permutation loops (default: $SPGARCH_THREADS or 1)")
    common.add_argument("--out", metavar="DIR", help="output directory (default: config 'out' or '.')")
    common.add_argument("--rook-grid", metavar="D", type=int, help="use a D x D rook-contiguity grid")
    common.add_argument("--oriented", action="store_true",
                        help="keep only left/upper neighbours of the rook grid (lower triangular)")

    parser = _Parser(prog="spgarch", description="Spatial GARCH-type models: simulation, "
                     "estimation, Monte Carlo studies and spatial diagnostics.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "simulate": "simulate a random field; writes field.csv and report.json",
        "estimate": "fit (rho, lambda, alpha) by least squares; writes estimate.json",
        "mc": "Monte Carlo RMSE study; writes mc.csv and mc.json",
        "moran": "Moran's I of a field column; writes moran.json",
        "pipeline": "SAR mean model + spatial GARCH residual fit; writes pipeline.json",
        "weights": "generate or convert a weight file; writes weights.txt",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def _load_config(args, command):
    cfg = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(cfg, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"config error at {path}: {exc.message}") from exc
    if args.rook_grid is not None:
        cfg["grid"] = {"d": args.rook_grid, "oriented": bool(args.oriented)}
    elif args.oriented and "grid" in cfg:
        cfg["grid"]["oriented"] = True
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise UsageError("--seed must be an unsigned 64-bit integer")
        cfg["seed"] = args.seed
    threads = args.threads if args.threads is not None else cfg.get("threads")
    if threads is None:
        env = os.environ.get("SPGARCH_THREADS")
        try:
            threads = int(env) if env else 1
        except ValueError as exc:
            raise UsageError("SPGARCH_THREADS must be an integer") from exc
    if threads < 1:
        raise UsageError("thread count must be positive")
    cfg["threads"] = threads
    cfg["out"] = args.out or cfg.get("out", ".")
    return cfg


def _base_dir(args):
    return os.path.dirname(os.path.abspath(args.config)) if args.config else os.getcwd()


def _path(args, p):
    return p if os.path.isabs(p) else os.path.join(_base_dir(args), p)


def _read_w(args, path):
    try:
        return wmod.read_weights(_path(args, path))
    except OSError as exc:
        raise UsageError(f"cannot read weight file {path}: {exc}") from exc
    except ParseError as exc:
        raise UsageError(f"weight file {path}: {exc}") from exc


def _weights_pair(args, cfg, default_oriented=True):
    if "w1" in cfg:
        w1 = _read_w(args, cfg["w1"])
        w2 = _read_w(args, cfg["w2"]) if "w2" in cfg else w1
        return w1, w2
    if "grid" in cfg:
        g = cfg["grid"]
        w = wmod.rook_grid(g["d"], oriented=g.get("oriented", default_oriented))
        return w, w
    raise UsageError("no weights: give w1/w2 in the config or --rook-grid D")


def _spec(cfg):
    return ModelSpec.from_json(cfg.get("model", {}))


def _theta(obj, default):
    try:
        return Theta.from_json(obj) if obj is not None else default
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _clean(obj):
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _write(cfg, files):
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    for name, text in files.items():
        atomic_write_text(os.path.join(out, name), text)


def _error_json(exc):
    body = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("iterations", "contraction_estimate", "bound", "site", "sites", "stage"):
        if hasattr(exc, attr):
            body[attr] = getattr(exc, attr)
    return _clean(body)


def cmd_simulate(args, cfg):
    spec = _spec(cfg)
    theta = _theta(cfg.get("theta"), Theta(0.5, 0.5, 1.0))
    w1, w2 = _weights_pair(args, cfg)
    sites = wmod.SiteSet.grid(cfg["grid"]["d"]) if "grid" in cfg and "w1" not in cfg else None
    seed = cfg.get("seed", 0)
    try:
        fld = simulate_field(spec, theta, w1, w2, seed=seed, solver=cfg.get("solver", "auto"),
                             tol=cfg.get("tol", 1e-10), max_iter=cfg.get("max_iter", 10_000), sites=sites)
    except SpgarchError as exc:
        _write(cfg, {"report.json": _dump({"seed": seed, "status": "failed", **_error_json(exc)})})
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    report = {"seed": seed, "status": "ok", "model": spec.to_json(), "theta": theta.to_json(),
              "solve": _clean(fld.report.to_json())}
    _write(cfg, {"field.csv": format_field_csv(fld), "report.json": _dump(report)})
    return EXIT_OK


def cmd_estimate(args, cfg):
    spec = _spec(cfg)
    if "field" not in cfg:
        raise UsageError("estimate needs 'field' (a field CSV) in the config")
    try:
        fld = read_field_csv(_path(args, cfg["field"]))
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read field {cfg['field']}: {exc}") from exc
    w1, w2 = _weights_pair(args, cfg)
    starts = [Theta.from_json(s) for s in cfg["starts"]] if "starts" in cfg else None
    try:
        res = estimate_nls(spec, fld.y, w1, w2, starts=starts, tol=cfg.get("tol", 1e-10),
                           max_iter=cfg.get("max_iter", 2000), c_override=cfg.get("c_override"))
    except DomainError as exc:
        print(f"estimation failed at site {exc.site}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SpgarchError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    _write(cfg, {"estimate.json": _dump(_clean(res.to_json(include_trace=cfg.get("trace", False))))})
    return EXIT_OK


def cmd_mc(args, cfg):
    try:
        design = McDesign(tuple(cfg.get("grid_sizes", (5, 10, 15))), tuple(cfg.get("rho0", (0.2, 0.5, 0.8))),
                          tuple(cfg.get("lambda0", (0.2, 0.5, 0.8))), float(cfg.get("alpha0", 1.0)),
                          int(cfg.get("m", 200)), int(cfg.get("seed", 0)), _spec(cfg))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    result = run_mc(design, parallelism=cfg["threads"], timing=cfg.get("timing", False))
    _write(cfg, {"mc.csv": format_mc_csv(result), "mc.json": _dump(_clean(mc_metadata(result)))})
    return EXIT_OK


def cmd_moran(args, cfg):
    if "field" not in cfg:
        raise UsageError("moran needs 'field' (a field CSV) in the config")
    try:
        fld = read_field_csv(_path(args, cfg["field"]))
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read field {cfg['field']}: {exc}") from exc
    if "weights" in cfg:
        w = _read_w(args, cfg["weights"])
    elif "grid" in cfg:
        w = wmod.rook_grid(cfg["grid"]["d"], oriented=cfg["grid"].get("oriented", False))
    else:
        raise UsageError("no weights: give 'weights' in the config or --rook-grid D")
    x = getattr(fld, cfg.get("column", "y"))
    if x is None:
        raise UsageError(f"field has no {cfg.get('column')} column")
    kw = dict(permutations=cfg.get("permutations", 999), seed=cfg.get("seed", 0), threads=cfg["threads"])
    try:
        if cfg.get("report", False):
            body = residual_heteroscedasticity_report(x, w, **kw).to_json()
        else:
            body = morans_i(x, w, **kw).to_json()
    except (DegenerateInput, DegenerateWeights) as exc:
        print(f"moran failed: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    _write(cfg, {"moran.json": _dump(_clean(body))})
    return EXIT_OK


def _read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError("data file is empty")
    return rows


def cmd_pipeline(args, cfg):
    spec = _spec(cfg)
    seed = cfg.get("seed", 0)
    if "data" in cfg:
        try:
            rows = _read_table(_path(args, cfg["data"]))
            y = np.array([float(r["y"]) for r in rows])
            cols = [np.ones(len(rows))] + [np.array([float(r[c]) for r in rows])
                                           for c in cfg.get("covariates", [])]
        except (OSError, KeyError, ValueError) as exc:
            raise UsageError(f"cannot read data {cfg['data']}: {exc}") from exc
        x = np.column_stack(cols)
        if "w_mean" not in cfg:
            raise UsageError("pipeline with 'data' needs 'w_mean'")
        w_mean = wmod.row_standardize(_read_w(args, cfg["w_mean"]))
        if "w1" in cfg:
            w1, w2 = _weights_pair(args, cfg)
        else:
            w1 = w2 = wmod.orient(w_mean)
    else:
        syn = cfg.get("synthetic", {})
        kw = {}
        if "theta" in syn:
            kw["theta"] = _theta(syn["theta"], None)
        data = synthetic_pipeline_data(seed, n=syn.get("n", 190), psi=syn.get("psi", 0.6), spec=spec, **kw)
        y, x, w_mean, w1, w2 = data.Y, data.X, data.W_mean, data.W1s, data.W2s
    try:
        res = sar_spgarch_pipeline(y, x, w_mean, spec, w1, w2, permutations=cfg.get("permutations", 999),
                                   seed=seed, threads=cfg["threads"])
    except PipelineError as exc:
        print(f"pipeline failed: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    _write(cfg, {"pipeline.json": _dump(_clean(res.to_json()))})
    return EXIT_OK


def cmd_weights(args, cfg):
    kind = cfg.get("kind", "convert" if "input" in cfg else "rook")
    oriented = cfg.get("oriented", False) or cfg.get("grid", {}).get("oriented", False)
    if kind == "rook":
        if "grid" not in cfg:
            raise UsageError("rook weights need --rook-grid D or 'grid' in the config")
        w = wmod.rook_grid(cfg["grid"]["d"], oriented=oriented)
    elif kind == "convert":
        if "input" not in cfg:
            raise UsageError("convert needs 'input'")
        w = _read_w(args, cfg["input"])
    else:
        if "sites" not in cfg:
            raise UsageError(f"{kind} weights need 'sites' (CSV with x,y columns)")
        try:
            rows = _read_table(_path(args, cfg["sites"]))
            sites = wmod.SiteSet(np.array([[float(r["x"]), float(r["y"])] for r in rows]))
        except (OSError, KeyError, ValueError) as exc:
            raise UsageError(f"cannot read sites: {exc}") from exc
        if kind == "inverse_distance":
            w = wmod.inverse_distance(sites, k=cfg.get("k", 1.0), cutoff=cfg.get("cutoff"))
        else:
            w = wmod.delaunay_contiguity(sites)
    if oriented and kind != "rook":
        w = wmod.orient(w, standardize=False)
    if cfg.get("standardize", kind != "inverse_distance" or oriented):
        w = wmod.row_standardize(w)
    _write(cfg, {"weights.txt": wmod.format_weights(w)})
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "mc": cmd_mc, "moran": cmd_moran,
            "pipeline": cmd_pipeline, "weights": cmd_weights}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args, args.command)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"spgarch {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SpgarchError as exc:
        print(f"spgarch {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"spgarch {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
