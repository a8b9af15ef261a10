"""``pscband`` command line.

Exit codes: 0 success or certified, 1 geometric negative, 2 configuration
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import corpus, elliptic as el, geometry as geo, io, pipeline as pl
from .expr import ExprSyntaxError
from .grid import Grid, GridError
from .metric import MetricError, MetricSpec, sample

OK, NEGATIVE, CONFIG, NUMERIC = 0, 1, 2, 3

CONFIG_KEYS = {"metric", "x_kind", "resolution", "params", "output_dir", "epsilons", "mms", "eigen", "dump_fields"}
MMS_KEYS = {"u_exact", "counts", "n_xi", "min_slope"}
EIGEN_KEYS = {"which"}
DEFAULT_U_EXACT = "0.01*exp(sin(x1)*cos(x2)*cos(t))"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    metric: MetricSpec
    x_kind: str = "sphere"
    resolution: pl.Resolution = field(default_factory=pl.Resolution)
    params: pl.PipelineParams = field(default_factory=pl.PipelineParams)
    output_dir: Path = Path("out")
    epsilons: list = field(default_factory=lambda: [0.2, 0.1, 0.05])
    mms: dict = field(default_factory=dict)
    eigen: dict = field(default_factory=dict)
    dump_fields: bool = False


def _check_keys(data: dict, allowed: set, where: str):
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"malformed JSON at line {err.lineno} column {err.colno} (char {err.pos}): {err.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(data, CONFIG_KEYS, "config")
    if "metric" not in data:
        raise ConfigError("config needs a 'metric'")
    raw = data["metric"]
    if isinstance(raw, str):
        mpath = (path.parent / raw)
        try:
            raw = json.loads(mpath.read_text())
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigError(f"cannot load metric file {mpath}: {err}") from None
    try:
        spec = MetricSpec.from_dict(raw)
    except MetricError as err:
        raise ConfigError(str(err)) from None
    x_kind = data.get("x_kind", "sphere")
    if x_kind not in corpus.X_KINDS:
        raise ConfigError(f"x_kind must be one of {corpus.X_KINDS}")
    try:
        res = pl.Resolution.from_axes(data.get("resolution", {}))
        params = pl.PipelineParams.from_dict(data.get("params", {}))
        params.validate()
    except (pl.PipelineError, TypeError) as err:
        raise ConfigError(str(err)) from None
    mms = data.get("mms", {})
    _check_keys(mms, MMS_KEYS, "mms")
    eigen = data.get("eigen", {})
    _check_keys(eigen, EIGEN_KEYS, "eigen")
    out = Path(data.get("output_dir", "out"))
    if not out.is_absolute():
        out = path.parent / out
    return RunConfig(spec, x_kind, res, params, out, list(data.get("epsilons", [0.2, 0.1, 0.05])),
                     mms, eigen, bool(data.get("dump_fields", False)))


def parse_resolution(text: str) -> dict:
    out = {}
    for part in text.split(","):
        if not part.strip():
            continue
        name, sep, count = part.partition("=")
        if not sep or not count.strip().isdigit():
            raise ConfigError(f"bad --resolution entry {part!r}; expected axis=count")
        out[name.strip()] = int(count)
    return out


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    try:
        if args.resolution:
            cfg.resolution = pl.Resolution.from_axes(parse_resolution(args.resolution), cfg.resolution)
        if args.epsilon is not None:
            cfg.params = replace(cfg.params, epsilon=args.epsilon)
        if args.slice is not None:
            cfg.params = replace(cfg.params, xi_slice=args.slice)
        cfg.params.validate()
    except pl.PipelineError as err:
        raise ConfigError(str(err)) from None
    if args.out:
        cfg.output_dir = Path(args.out)
    return cfg


def _grid_for(cfg: RunConfig) -> Grid:
    r = cfg.resolution
    if cfg.metric.dim == 2:
        return Grid(corpus.x_axes(cfg.x_kind, r.n1, r.n2))
    if cfg.metric.dim == 3:
        return corpus.band_grid(cfg.x_kind, r.n1, r.n2, r.n_xi)
    raise ConfigError(f"metrics of dimension {cfg.metric.dim} are not supported here")


def _outdir(cfg: RunConfig) -> Path:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    return cfg.output_dir


def _say(msg: str):
    print(msg)


# --------------------------------------------------------------------------
# subcommands

def cmd_curvature(cfg: RunConfig, dry: bool) -> int:
    grid = _grid_for(cfg)
    if dry:
        _say(f"curvature: {cfg.metric.name} on grid {dict(zip(grid.names, grid.shape))} -> {cfg.output_dir}")
        return OK
    m = sample(cfg.metric, grid)
    pack = geo.curvature(m)
    R = np.real(pack.scalar)
    out = _outdir(cfg)
    io.write_field_csv(out / "curvature.csv", grid, {"R": R, "Ric": np.real(pack.ricci)})
    summary = {"metric": cfg.metric.name, "grid": dict(zip(grid.names, grid.shape)),
               "min_R": float(R.min()), "max_R": float(R.max())}
    io.write_json(out / "curvature_summary.json", summary)
    _say(f"R in [{summary['min_R']:.12g}, {summary['max_R']:.12g}]")
    return OK


def check_report(cfg: RunConfig) -> dict:
    if cfg.metric.dim != 3:
        raise ConfigError("check needs a band metric of dimension 3")
    prep = pl.prepare(cfg.metric, cfg.x_kind, cfg.resolution, cfg.params)
    R = np.real(prep.pack.scalar)
    hmax = max(float(np.max(np.abs(hg.h))) for hg in prep.boundary)
    ratio_max = float(np.max(prep.hg.angle_ratio))
    w = pl._w_data(prep)
    margin, where = el.ellipticity_margin(w.metric, w.V)
    failures = []
    if not R.min() > 0:
        failures.append(f"R_g not positive (min R = {R.min():.6g})")
    if hmax > cfg.params.h_tol:
        failures.append(f"mean curvature not zero on the boundary (max |h| = {hmax:.6g})")
    if ratio_max >= 2:
        failures.append(f"angle condition fails, ratio max {ratio_max:.6g}")
    if margin <= 0:
        failures.append(f"operator not elliptic, margin {margin:.6g} at {where}")
    return {"metric": cfg.metric.name, "min_R": float(R.min()), "max_abs_h": hmax,
            "angle_ratio_max": ratio_max, "angle_margin": 2 - ratio_max,
            "ellipticity_margin": margin, "holds": not failures, "failures": failures}


def cmd_check(cfg: RunConfig, dry: bool) -> int:
    if dry:
        _say(f"check: hypotheses, angle and ellipticity for {cfg.metric.name}")
        return OK
    rep = check_report(cfg)
    io.write_json(_outdir(cfg) / "check.json", rep)
    for f in rep["failures"]:
        _say(f)
    if rep["holds"]:
        _say("all hypotheses hold")
        return OK
    return NEGATIVE


def cmd_pipeline(cfg: RunConfig, dry: bool) -> int:
    if dry:
        _say(f"pipeline: {cfg.metric.name}, resolution {cfg.resolution.to_dict()}, "
             f"epsilon {cfg.params.epsilon}, slice xi={cfg.params.xi_slice} -> {cfg.output_dir / 'report.json'}")
        return OK
    keep: dict = {}
    rep = pl.run(cfg.metric, cfg.params, cfg.resolution, cfg.x_kind, keep_fields=keep)
    out = _outdir(cfg)
    io.write_json(out / "report.json", rep)
    if cfg.dump_fields and "u" in keep:
        io.write_field_csv(out / "u.csv", keep["w"].metric.grid, {"u": keep["u"], "F": keep["F"]})
    _say(rep.conclusion)
    if rep.certified:
        return OK
    if rep.stage == "solve":
        return NUMERIC
    return NEGATIVE


def cmd_sweep(cfg: RunConfig, dry: bool) -> int:
    if dry:
        _say(f"sweep: epsilons {cfg.epsilons} on {cfg.metric.name}")
        return OK
    try:
        table = pl.epsilon_sweep(cfg.metric, cfg.params, cfg.epsilons, cfg.resolution, cfg.x_kind)
    except pl.PipelineError as err:
        raise ConfigError(str(err)) from None
    out = _outdir(cfg)
    io.write_json(out / "sweep.json", table)
    io.write_table_csv(out / "sweep.csv", table["rows"])
    for col, ok in table["non_increasing"].items():
        _say(f"{col}: {'non-increasing' if ok else 'NOT non-increasing'}")
    return OK if all(table["non_increasing"].values()) else NEGATIVE


def cmd_mms(cfg: RunConfig, dry: bool) -> int:
    counts = [int(c) for c in cfg.mms.get("counts", [16, 32, 64])]
    u_exact = cfg.mms.get("u_exact", DEFAULT_U_EXACT)
    min_slope = float(cfg.mms.get("min_slope", 1.9))
    n_xi = int(cfg.mms.get("n_xi", cfg.resolution.n_xi))
    if cfg.metric.dim != 3:
        raise ConfigError("mms needs a band metric of dimension 3")
    if dry:
        _say(f"mms: u* = {u_exact} on {cfg.metric.name}, resolutions {counts}")
        return OK

    def build(n):
        m = sample(cfg.metric, corpus.band_grid(cfg.x_kind, n, n, n_xi))
        return el.w_space(m, 0, n)

    res = el.mms_study(build, u_exact, counts, tol=cfg.params.tol, max_iter=cfg.params.max_iter)
    out = _outdir(cfg)
    data = {"metric": cfg.metric.name, "u_exact": u_exact, **res.to_dict(), "min_slope": min_slope,
            "passed": res.slope >= min_slope}
    io.write_json(out / "mms.json", data)
    _say(f"fitted slope {res.slope:.4f} (errors {', '.join(f'{e:.3e}' for e in res.errors)})")
    return OK if data["passed"] else NEGATIVE


def cmd_eigen(cfg: RunConfig, dry: bool) -> int:
    which = cfg.eigen.get("which", "X_slice" if cfg.metric.dim == 2 else "M_neumann")
    if dry:
        _say(f"eigen: {which} for {cfg.metric.name}")
        return OK
    try:
        rep = pl.eigen_check(cfg.metric, which, cfg.resolution, cfg.x_kind, cfg.params)
    except pl.PipelineError as err:
        raise ConfigError(str(err)) from None
    io.write_json(_outdir(cfg) / "eigen.json", rep)
    _say(f"smallest eigenvalue {rep['eigenvalue']:.12g} ({rep['sign']})")
    return OK


COMMANDS = {"curvature": cmd_curvature, "check": cmd_check, "pipeline": cmd_pipeline,
            "sweep": cmd_sweep, "mms": cmd_mms, "eigen": cmd_eigen}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pscband", description="PSC band construction toolkit")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--dry-run", action="store_true", help="validate and print the plan only")
        p.add_argument("--resolution", help="node count overrides, e.g. x1=32,x2=32,t=64")
        p.add_argument("--epsilon", type=float, help="bump half-width in t")
        p.add_argument("--slice", type=float, help="xi value of the working slice")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = apply_overrides(load_config(args.config), args)
        return COMMANDS[args.command](cfg, args.dry_run)
    except (ConfigError, ExprSyntaxError, pl.PipelineError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return CONFIG
    except (MetricError, geo.GeometryError, GridError) as err:
        print(f"geometry error: {err}", file=sys.stderr)
        return NUMERIC
    except (el.SolverError, el.EllipticError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return NUMERIC


if __name__ == "__main__":
    sys.exit(main())
