"""Batch front-end: ``teichlab <command> --config <path> [--out] [--seed] [--samples]``.

Exit status 0 on success, 2 on validation errors (bad flags, files or
configs), 3 when a numeric assumption fails.  Errors are also written to
stderr as one JSON object.  Artifacts are written atomically; a relative
``--out`` is resolved against ``$TEICHLAB_OUTPUT_DIR`` when that is set.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from importlib import resources
from pathlib import Path
from typing import Callable, Dict, Mapping, Optional, Sequence

import numpy as np

from .catalog import loop_catalog, torus_point
from .coords import FNPoint
from .errors import ConfigurationError, NumericAssumptionError, TeichlabError, ValidationError
from .integrate import ExpectationConfig, counting_at, counting_curve, density_via_formula, expectation_via_formula, properness_radius
from .lengths import calibrate_twist_origin, loop_length, okai_dual_length, ray_asymptotics
from .loops import LoopSpec, PantsWord, check_resolution
from .measure import DensityGrid, fmt, fr_bound_check, fr_decompose
from .orbit import SURFACES, TORUS, enumerate_orbit
from .pants import solve_pants

SCHEMA_VERSION = 1
COMMANDS = ("pants-solve", "loop-length", "resolve", "okai-check", "ray", "density", "fr-fit", "expect", "count", "selftest")
COMMON_KEYS = {"schemaVersion", "command", "seed", "samples", "format", "out"}
OUTPUT_ENV = "TEICHLAB_OUTPUT_DIR"
BUNDLED = "bundled:"


class ParseError(ConfigurationError):
    """Configuration problem with a location (line/column or field path)."""

    def __init__(self, message: str, **where):
        super().__init__(message)
        self.where = where

    def to_dict(self) -> dict:
        return {**super().to_dict(), **self.where}


# --- config loading ---------------------------------------------------------------


def read_text(path: str) -> str:
    if path.startswith(BUNDLED):
        name = path[len(BUNDLED) :]
        res = resources.files("teichlab.data") / name
        if not res.is_file():
            raise ParseError(f"no bundled config named {name!r}", field="config")
        return res.read_text(encoding="utf-8")
    try:
        return Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ParseError(f"config file not found: {path}", field="config") from None
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e.strerror}", field="config") from None


def load_json(path: str):
    text = read_text(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: {e.msg} at line {e.lineno} column {e.colno}", line=e.lineno, column=e.colno) from None


def _strict(cfg: Mapping, allowed: set, where: str = "config") -> None:
    if not isinstance(cfg, Mapping):
        raise ParseError(f"{where} must be a JSON object", field=where)
    extra = sorted(set(cfg) - allowed)
    if extra:
        raise ParseError(f"{where}: unknown field {extra[0]!r}", field=f"{where}.{extra[0]}")


def _need(cfg: Mapping, key: str, where: str = "config"):
    if key not in cfg:
        raise ParseError(f"{where}: missing required field {key!r}", field=f"{where}.{key}")
    return cfg[key]


def _num(cfg: Mapping, key: str, default=None, where: str = "config", cast=float):
    if key in cfg:
        v = cfg[key]
    elif default is not None:
        v = default
    else:
        v = _need(cfg, key, where)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"{where}.{key} must be a number", field=f"{where}.{key}")
    if cast is int and int(v) != v:
        raise ParseError(f"{where}.{key} must be an integer", field=f"{where}.{key}")
    return cast(v)


def _grid(cfg: Mapping, default=(0.0, 10.0, 0.05)):
    g = cfg.get("grid", {"min": default[0], "max": default[1], "binWidth": default[2]})
    _strict(g, {"min", "max", "binWidth"}, "grid")
    lo, hi, bw = _num(g, "min", default[0], "grid"), _num(g, "max", default[1], "grid"), _num(g, "binWidth", default[2], "grid")
    if not (hi > lo and bw > 0):
        raise ParseError("grid needs max > min and binWidth > 0", field="grid")
    return lo, hi, bw


def _loop(spec) -> LoopSpec:
    if isinstance(spec, Mapping) and set(spec) == {"catalog"}:
        cat = loop_catalog()
        if spec["catalog"] not in cat:
            raise ParseError(f"unknown catalog loop {spec['catalog']!r}; choose from {sorted(cat)}", field="loop.catalog")
        return cat[spec["catalog"]].loop
    return LoopSpec.from_json(spec)


def _point(spec, loop: Optional[LoopSpec] = None) -> FNPoint:
    if isinstance(spec, Mapping) and set(spec) == {"catalog"}:
        cat = loop_catalog()
        if spec["catalog"] not in cat:
            raise ParseError(f"unknown catalog point {spec['catalog']!r}", field="point.catalog")
        return cat[spec["catalog"]].point
    pt = FNPoint.from_json(spec)
    if loop is not None:
        pt.check_covers(loop.surface)
    return pt


# --- outputs ----------------------------------------------------------------------------


def resolve_out(path: Optional[str]) -> Optional[Path]:
    if path is None or path == "-":
        return None
    p = Path(path)
    base = os.environ.get(OUTPUT_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    return p


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _clean(v):
    """JSON-safe values: non-finite floats become null, arrays become lists."""
    if isinstance(v, Mapping):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.floating, float)):
        return float(v) if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def json_artifact(command: str, body: Mapping) -> str:
    return json.dumps({"schemaVersion": SCHEMA_VERSION, "command": command, **_clean(body)}, indent=2) + "\n"


class Result:
    def __init__(self, text: str, ok: bool = True, failed: Optional[str] = None):
        self.text, self.ok, self.failed = text, ok, failed


# --- commands ------------------------------------------------------------------------------


def cmd_pants_solve(cfg, opts):
    _strict(cfg, COMMON_KEYS | {"lengths"})
    triples = np.asarray(_need(cfg, "lengths"), dtype=float)
    if triples.ndim != 2 or triples.shape[1] != 3:
        raise ParseError("lengths must be a list of [x, y, z] triples", field="config.lengths")
    trig = solve_pants(triples[:, 0], triples[:, 1], triples[:, 2])
    res = trig.residuals()
    rows = []
    for i in range(len(triples)):
        rows.append(
            {
                "x": triples[i, 0],
                "y": triples[i, 1],
                "z": triples[i, 2],
                "t": np.atleast_1d(trig.t)[i],
                "tStar": np.atleast_1d(trig.t_star)[i],
                "ellStar": np.atleast_1d(trig.ell_star)[i],
                "residuals": {k: np.atleast_1d(v)[i] for k, v in res.items()},
            }
        )
    return Result(json_artifact("pants-solve", {"results": rows}))


def cmd_loop_length(cfg, opts):
    _strict(cfg, COMMON_KEYS | {"loop", "points"})
    loop = _loop(_need(cfg, "loop"))
    pts = _need(cfg, "points")
    out = []
    for k, p in enumerate(pts):
        pt = _point(p, loop)
        out.append({"point": pt.to_json(), "length": float(loop_length(loop, pt))})
    return Result(json_artifact("loop-length", {"loop": loop.to_json(), "results": out}))


def cmd_resolve(cfg, opts):
    _strict(cfg, COMMON_KEYS | {"word", "cuts", "lengths"})
    word = PantsWord.parse(_need(cfg, "word"))
    cuts = _need(cfg, "cuts")
    if not (isinstance(cuts, list) and len(cuts) == 2):
        raise ParseError("cuts must be two syllable positions", field="config.cuts")
    x, y, z = (float(v) for v in _need(cfg, "lengths"))
    rep = check_resolution(word, (int(cuts[0]), int(cuts[1])), solve_pants(x, y, z))
    body = {
        "word": str(word),
        "cuts": cuts,
        "signCase": rep.sign_case,
        "residual": rep.residual,
        "residualPlus": rep.residual_plus,
        "residualMinus": rep.residual_minus,
        "halfTraces": rep.half_traces,
        "hyperbolic": rep.hyperbolic,
    }
    return Result(json_artifact("resolve", body))


def cmd_okai_check(cfg, opts):
    _strict(cfg, COMMON_KEYS | {"ellA", "tau", "L", "tolerance"})
    ells = [float(v) for v in cfg.get("ellA", [0.5, 1.0, 2.0, 4.0, 6.0])]
    taus = np.asarray(cfg.get("tau", np.linspace(-3, 3, 13).tolist()), dtype=float)
    Ls = [float(v) for v in cfg.get("L", [0.0, 1.0, 4.0])]
    tol = _num(cfg, "tolerance", 1e-6)
    loop = loop_catalog()["torus-dual"].loop
    rows, worst = [], 0.0
    for L in Ls:
        for ell in ells:
            fn = torus_point(ell, 0.0, L)
            t0 = calibrate_twist_origin(loop, "a", fn)
            got = np.asarray(loop_length(loop, fn.with_twist("a", taus + t0)))
            err = float(np.max(np.abs(got / okai_dual_length(ell, taus, L) - 1.0)))
            worst = max(worst, err)
            rows.append({"ellA": ell, "L": L, "twistOrigin": t0, "maxRelResidual": err})
    ok = worst <= tol
    body = {"tolerance": tol, "maxRelResidual": worst, "passed": ok, "cases": rows}
    return Result(json_artifact("okai-check", body), ok, None if ok else "okai-check: residual above tolerance")


def cmd_ray(cfg, opts):
    _strict(cfg, COMMON_KEYS | {"loop", "base", "coords", "direction", "tMax", "samples"})
    loop = _loop(_need(cfg, "loop"))
    base = _point(_need(cfg, "base"), loop)
    coords = [tuple(c) for c in _need(cfg, "coords")]
    rep = ray_asymptotics(
        loop, base, _need(cfg, "direction"), _num(cfg, "tMax", 20.0), samples=opts.samples or int(cfg.get("samples", 64)), coords=coords
    )
    body = {
        "direction": rep.direction,
        "slope": rep.slope,
        "intercept": rep.intercept,
        "residualSup": rep.residual_sup,
        "residualSupDoubled": rep.residual_sup_doubled,
        "stable": rep.stable,
        "samples": rep.samples,
        "skipped": rep.skipped,
    }
    return Result(json_artifact("ray", body))


DENSITY_KEYS = {"expectation", "engine", "grid", "engineOptions", "radius"}


def _density(cfg, opts) -> DensityGrid:
    ecfg = ExpectationConfig.from_json(_need(cfg, "expectation"))
    lo, hi, bw = _grid(cfg)
    opts_e = cfg.get("engineOptions", {})
    _strict(opts_e, {"quadOrder", "ellPoints", "panelLength", "pivot"}, "engineOptions")
    kw = {
        {"quadOrder": "quad_order", "ellPoints": "ell_points", "panelLength": "panel_length", "pivot": "pivot"}[k]: v
        for k, v in opts_e.items()
    }
    radius = cfg.get("radius")
    return density_via_formula(
        ecfg,
        lo,
        hi,
        bw,
        n_samples=opts.samples or int(cfg.get("samples", 200_000)),
        seed=opts.seed,
        engine=cfg.get("engine", "pushforward"),
        radius=None if radius is None else float(radius),
        **kw,
    )


def cmd_density(cfg, opts):
    _strict(cfg, COMMON_KEYS | DENSITY_KEYS)
    g = _density(cfg, opts)
    if opts.format == "json":
        return Result(json_artifact("density", {"density": g.to_json()}))
    return Result(g.to_csv())


def cmd_fr_fit(cfg, opts):
    _strict(cfg, COMMON_KEYS | DENSITY_KEYS | {"density", "maxDegree", "fitWindow"})
    if "density" in cfg:
        src = cfg["density"]
        data = load_json(src) if isinstance(src, str) else src
        if isinstance(data, Mapping) and "density" in data and "schemaVersion" in data:
            data = data["density"]
        grid = DensityGrid.from_json(data)
    else:
        grid = _density(cfg, opts)
    w = _need(cfg, "fitWindow")
    rep = fr_decompose(grid, _num(cfg, "maxDegree", cast=int), (float(w[0]), float(w[1])))
    ok = fr_bound_check(rep)
    body = {**rep.to_json(), "boundCheck": ok}
    return Result(json_artifact("fr-fit", body), ok, None if ok else "fr-bound-check failed")


def cmd_expect(cfg, opts):
    _strict(cfg, COMMON_KEYS | {"expectation", "radius"})
    ecfg = ExpectationConfig.from_json(_need(cfg, "expectation"))
    R = cfg.get("radius")
    R = float(R) if R is not None else properness_radius(ecfg, ecfg.test_function.support_max, opts.seed)
    v, se = expectation_via_formula(ecfg, opts.samples or int(cfg.get("samples", 200_000)), opts.seed, radius=R)
    return Result(json_artifact("expect", {"value": v, "stderr": se, "radius": R}))


def _csv(header: Sequence[str], rows) -> str:
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(str(x) if isinstance(x, (int, np.integer)) else fmt(x) for x in r))
    return "\n".join(lines) + "\n"


def cmd_count(cfg, opts):
    _strict(cfg, COMMON_KEYS | DENSITY_KEYS | {"source", "seedWord", "point", "surface", "cutoff", "margin", "at"})
    source = cfg.get("source", "orbit")
    if source == "orbit":
        surface = cfg.get("surface", TORUS)
        if surface not in SURFACES:
            raise ParseError(f"surface must be one of {SURFACES}", field="config.surface")
        pt = _point(cfg["point"]) if "point" in cfg else torus_point()
        cutoff = _num(cfg, "cutoff", 16.0)
        res = enumerate_orbit(PantsWord.parse(cfg.get("seedWord", "a1")), pt, cutoff, _num(cfg, "margin", 2.0), surface)
        at = cfg.get("at", np.linspace(0, cutoff, 33).tolist())
        if opts.format == "json":
            return Result(json_artifact("count", {"orbit": res.to_json(), "counts": [[a, int(res.count(a))] for a in at]}))
        return Result(res.counting_csv(at))
    if source == "formula":
        curve = counting_curve(_density(cfg, opts))
        at = cfg.get("at", curve.edges[1:].tolist())
        rows = [(a, *counting_at(curve, a)) for a in at]
        if opts.format == "json":
            return Result(json_artifact("count", {"counts": [list(r) for r in rows]}))
        return Result(_csv(["a", "Q", "stderr"], rows))
    raise ParseError("source must be 'orbit' or 'formula'", field="config.source")


def cmd_selftest(cfg, opts):
    _strict(cfg, COMMON_KEYS)
    from .selftest import run_selftest

    checks = run_selftest()
    ok = all(c.passed for c in checks)
    failed = [c.name for c in checks if not c.passed]
    body = {"passed": ok, "properties": [c.to_json() for c in checks]}
    return Result(json_artifact("selftest", body), ok, None if ok else f"selftest failed: {', '.join(failed)}")


HANDLERS: Dict[str, Callable] = {
    "pants-solve": cmd_pants_solve,
    "loop-length": cmd_loop_length,
    "resolve": cmd_resolve,
    "okai-check": cmd_okai_check,
    "ray": cmd_ray,
    "density": cmd_density,
    "fr-fit": cmd_fr_fit,
    "expect": cmd_expect,
    "count": cmd_count,
    "selftest": cmd_selftest,
}


# --- entry point ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ParseError(message, field="argv")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="teichlab", description="Length functions, densities and orbit counts on hyperbolic surfaces.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON config file, or bundled:<name>")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--samples", type=int, help="Monte Carlo sample count")
    return p


def _fail(err: TeichlabError, status: int) -> int:
    sys.stderr.write(json.dumps({**err.to_dict(), "exitStatus": status}) + "\n")
    return status


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.config is None and args.command != "selftest":
            raise ParseError("--config is required", field="argv.config")
        cfg = load_json(args.config) if args.config else {}
        if not isinstance(cfg, Mapping):
            raise ParseError("config must be a JSON object", field="config")
        if cfg.get("schemaVersion", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise ParseError(f"schemaVersion must be {SCHEMA_VERSION}", field="config.schemaVersion")
        if cfg.get("command", args.command) != args.command:
            raise ParseError(f"config is for command {cfg['command']!r}", field="config.command")
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        if isinstance(seed, bool) or not isinstance(seed, int) or not (0 <= seed < 2**64):
            raise ParseError("seed must be an integer in [0, 2^64)", field="config.seed")
        samples = args.samples if args.samples is not None else cfg.get("samples")
        if samples is not None and (isinstance(samples, bool) or not isinstance(samples, int) or samples < 1):
            raise ParseError("samples must be a positive integer", field="config.samples")
        fmt_ = cfg.get("format", "csv")
        if fmt_ not in ("csv", "json"):
            raise ParseError("format must be 'csv' or 'json'", field="config.format")
        opts = argparse.Namespace(seed=seed, samples=samples, format=fmt_)
        result = HANDLERS[args.command](cfg, opts)
        out = resolve_out(args.out if args.out is not None else cfg.get("out"))
        if out is None:
            sys.stdout.write(result.text)
        else:
            write_atomic(out, result.text)
        if not result.ok:
            err = NumericAssumptionError(result.failed)
            err.code = "check-failed"
            return _fail(err, 3)
        return 0
    except ValidationError as e:
        return _fail(e, 2)
    except NumericAssumptionError as e:
        return _fail(e, 3)
    except (KeyError, TypeError, ValueError) as e:
        # malformed config values that slipped past the schema checks
        return _fail(ParseError(f"invalid config: {e}", field="config"), 2)


if __name__ == "__main__":
    sys.exit(main())
