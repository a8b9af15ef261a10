"""End-to-end construction of a positive scalar curvature metric on a slice of a band.

Stages, in order: hypotheses on ``M = X x I`` (``R > 0``, ``h = 0`` on both
boundary slices, angle condition on the working slice), ellipticity of the
W-operator, the constant ``C``, the bump source, the solve on ``W = X x S^1``,
lifts of the solution back to ``M``, diagnostics, the induced scalar curvature
of the slice by two routes, and a verdict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import conformal as cf
from . import elliptic as el
from . import geometry as geo
from .grid import Field, Grid, derivative_matrix, diff, lp_norm, mixed_derivative_matrix
from .metric import MetricField, MetricSpec, sample

CERTIFIED = "PSC_CERTIFIED"
FAILED = "HYPOTHESIS_FAILED"
INCONCLUSIVE = "NUMERICALLY_INCONCLUSIVE"

# relative slack for solver noise when checking monotone sweep columns
SWEEP_RTOL = 1e-8


class PipelineError(ValueError):
    pass


@dataclass
class PipelineParams:
    p: float = 4.0
    alpha: float = 0.5
    eta: float = 0.5
    delta: float = 1.0
    epsilon: float = 0.1
    C: float | None = None
    xi_slice: float = 0.0
    tol: float = 1e-10
    max_iter: int = 20000
    h_tol: float = 1e-8
    route_tol: float = 1e-3
    slice_c: float = 1.0

    def validate(self, dim_w: int = 3):
        if not self.p > dim_w:
            raise PipelineError(f"p must exceed dim W = {dim_w} (got {self.p})")
        if not 0 < self.alpha < 1 or self.alpha < 1 - dim_w / self.p:
            raise PipelineError(f"alpha must lie in (0, 1) with alpha >= 1 - n/p (got {self.alpha})")
        if not 0 < self.epsilon < 0.25:
            raise PipelineError(f"epsilon must lie in (0, 1/4) (got {self.epsilon})")
        if not self.delta > 0 or not self.eta > 0:
            raise PipelineError("delta and eta must be positive")
        if self.C is not None and self.C < 3:
            raise PipelineError(f"C must be at least 3 (got {self.C})")
        if not 0 <= self.xi_slice <= 1:
            raise PipelineError(f"xi_slice must lie in [0, 1] (got {self.xi_slice})")
        if self.tol <= 0 or self.max_iter < 1:
            raise PipelineError("solver tolerance and iteration cap must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise PipelineError(f"unknown parameter keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class Resolution:
    """Node counts: ``n1 x n2`` on ``X``, ``n_xi`` across the band, ``n_t`` around the circle."""

    n1: int = 48
    n2: int = 48
    n_xi: int = 9
    n_t: int = 64

    AXIS_KEYS = {"x1": "n1", "x2": "n2", "xi": "n_xi", "t": "n_t"}

    @classmethod
    def from_axes(cls, counts: dict, base: "Resolution | None" = None) -> "Resolution":
        base = base or cls()
        out = {}
        for k, v in counts.items():
            if k not in cls.AXIS_KEYS:
                raise PipelineError(f"unknown resolution axis {k!r}; expected {sorted(cls.AXIS_KEYS)}")
            out[cls.AXIS_KEYS[k]] = int(v)
        return replace(base, **out)

    def to_dict(self) -> dict:
        return {k: getattr(self, v) for k, v in self.AXIS_KEYS.items()}


# --------------------------------------------------------------------------
# individual stages

def compute_C(pack: geo.CurvaturePack, boundary: list[geo.HypersurfaceGeometry], m: MetricField) -> float:
    """``2 max (|R| + 2|Ric(nu,nu)| + h^2 + |A|^2) + 3`` over the boundary slices, plus one."""
    x = m.grid.index(boundary[0].xi_axis)
    worst = -math.inf
    for hg in boundary:
        R = np.take(np.real(pack.scalar), hg.xi_index, axis=x)
        val = np.abs(R) + 2 * np.abs(hg.ric_nn) + hg.h**2 + hg.A_norm2
        worst = max(worst, float(np.max(val)))
    return 2 * worst + 3 + 1


def cutoff(s: np.ndarray) -> np.ndarray:
    """Smooth step: 0 for ``s <= 0``, 1 for ``s >= 1``."""
    s = np.asarray(s, dtype=float)

    def b(x):
        with np.errstate(divide="ignore"):
            return np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)

    num = b(s)
    return num / (num + b(1 - s))


def wrapped_t(grid: Grid, t_name: str = "t") -> np.ndarray:
    """Circle coordinate mapped to ``(-pi, pi]``, so ``t = 0`` is node 0."""
    t = grid.mesh()[t_name]
    return np.where(t > math.pi, t - 2 * math.pi, t)


def build_bump(C: float, epsilon: float, grid: Grid, t_name: str = "t") -> np.ndarray:
    """``(C + 1)`` on ``|t| <= eps/2``, zero for ``|t| >= eps``, smooth in between; no x-dependence."""
    length = grid.axis(t_name).length
    if not 0 < epsilon < length / 4:
        raise PipelineError(f"epsilon must lie in (0, {length / 4:.6g})")
    t = wrapped_t(grid, t_name)
    return (C + 1.0) * cutoff((epsilon - np.abs(t)) / (epsilon / 2))


def slice_index(grid: Grid, xi: float, xi_axis: str = "xi") -> int:
    ax = grid.axis(xi_axis)
    pos = (xi - ax.start) / ax.spacing
    k = int(round(pos))
    if abs(pos - k) > 1e-9 or not 0 <= k < ax.count:
        raise PipelineError(f"xi = {xi} is not a grid node of axis {xi_axis!r}")
    return k


def product_laplacian_on_slice(m: MetricField, xi_index: int, w_grid: Grid, u: np.ndarray) -> np.ndarray:
    """``Delta`` of ``g + dt^2`` applied to a function of ``(x, t)`` that is constant in ``xi``,
    evaluated on the slice.  Uses the ambient metric data of ``M`` at the slice.
    """
    x = m.grid.index("xi")
    tan = [i for i in range(m.grid.dim) if i != x]
    ginv = np.real(np.take(m.ginv, xi_index, axis=x))
    gam = np.real(np.take(m.contracted_christoffel, xi_index, axis=x))
    d = w_grid.dim
    flat = np.asarray(u, dtype=float).ravel()
    out = diff(w_grid, u, d - 1, 2).ravel()
    for a, i in enumerate(tan):
        ci = gam[..., i][..., None] * np.ones(w_grid.shape)
        out -= ci.ravel() * (derivative_matrix(w_grid, a, 1) @ flat)
        for b_, j in enumerate(tan):
            if b_ < a:
                continue
            cij = ginv[..., i, j][..., None] * np.ones(w_grid.shape) * (1.0 if a == b_ else 2.0)
            out += cij.ravel() * (mixed_derivative_matrix(w_grid, a, b_) @ flat)
    return out.reshape(w_grid.shape)


@dataclass
class Diagnostics:
    partial_c2_sup: float
    laplacian_split_residual: float
    A1_sup: float
    u0_bounds: tuple[float, float]
    A1_ok: bool
    u0_ok: bool


@dataclass
class PipelineReport:
    metric: str
    resolution: dict
    params: dict
    hypothesis_R_positive: tuple
    hypothesis_h: tuple
    angle: tuple
    ellipticity_margin: float | None = None
    C_used: float | None = None
    F_lp_norm: float | None = None
    F_lp_below_delta: bool | None = None
    solve: el.SolveReport | None = None
    partial_c2_sup: float | None = None
    laplacian_split_residual: float | None = None
    A1_sup: float | None = None
    u0_bounds: tuple | None = None
    induced_R_min_formula: float | None = None
    induced_R_min_direct: float | None = None
    route_difference: float | None = None
    routes_agree: bool | None = None
    certification_threshold: float | None = None
    dimension_parameter: int = 3
    conclusion: str = ""
    stage: str | None = None
    messages: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, el.SolveReport):
                v = v.to_dict()
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    @property
    def certified(self) -> bool:
        return self.conclusion == CERTIFIED


# --------------------------------------------------------------------------
# prepared geometry shared by one run or a sweep

@dataclass
class Prepared:
    spec: MetricSpec
    m: MetricField
    pack: geo.CurvaturePack
    boundary: list
    hg: geo.HypersurfaceGeometry
    xi_index: int
    res: Resolution
    x_kind: str

    @property
    def h_slice(self) -> float:
        return self.m.grid.drop("xi").max_spacing()


def prepare(spec: MetricSpec, x_kind: str, res: Resolution, params: PipelineParams) -> Prepared:
    from .corpus import band_grid

    if spec.dim != 3:
        raise PipelineError(f"the band construction needs a 3-dimensional metric (got {spec.dim})")
    grid = band_grid(x_kind, res.n1, res.n2, res.n_xi)
    m = sample(spec, grid)
    pack = geo.curvature(m)
    last = grid.axis("xi").count - 1
    boundary = [geo.hypersurface(m, 0, "xi", pack), geo.hypersurface(m, last, "xi", pack)]
    k = slice_index(grid, params.xi_slice)
    hg = boundary[0] if k == 0 else boundary[1] if k == last else geo.hypersurface(m, k, "xi", pack)
    return Prepared(spec, m, pack, boundary, hg, k, res, x_kind)


def _w_data(prep: Prepared) -> el.WData:
    return el.w_space(prep.m, prep.xi_index, prep.res.n_t, pack=prep.pack)


def _solve_bump(prep: Prepared, w: el.WData, op: el.OperatorW, C: float, params: PipelineParams):
    F = build_bump(C, params.epsilon, w.metric.grid)
    flp = lp_norm(Field(w.metric.grid, F), params.p, w.metric.volume_weight)
    u, rep = el.solve(op, F, tol=params.tol, max_iter=params.max_iter)
    return F, flp, u, rep


def partial_c2_sup(grid: Grid, u: np.ndarray, epsilon: float) -> float:
    """``sup |d_t^2 u|`` over ``|t| < eps/4`` (node ``t = 0`` always included)."""
    utt = diff(grid, u, grid.index("t"), 2)
    t = wrapped_t(grid)
    strip = (np.abs(t) < epsilon / 4) | (t == 0)
    return float(np.max(np.abs(utt[strip])))


def diagnostics(prep: Prepared, w: el.WData, u: np.ndarray, epsilon: float) -> Diagnostics:
    wg = w.metric.grid
    u0 = u + 1.0
    lap_bar = product_laplacian_on_slice(prep.m, prep.xi_index, wg, u0)
    # Delta_g of the t = 0 value lifted to M, restricted to the slice
    lifted = np.broadcast_to(u0[..., 0][..., None], prep.m.grid.shape).copy()
    lap_m = np.take(geo.laplace_beltrami(prep.m, lifted), prep.xi_index, axis=prep.m.grid.index("xi"))
    utt = diff(wg, u0, wg.index("t"), 2)
    split = float(np.max(np.abs(lap_bar[..., 0] - lap_m - utt[..., 0])))
    A1 = lap_bar - geo.laplace_beltrami(w.metric, u0)
    t = wrapped_t(wg)
    plateau = np.abs(t) <= epsilon / 2
    lo, hi = float(np.min(u0[plateau])), float(np.max(u0[plateau]))
    a1 = float(np.max(np.abs(A1)))
    return Diagnostics(partial_c2_sup(wg, u, epsilon), split, a1, (lo, hi), a1 < 1.0, 0.5 < lo and hi < 1.5)


def induced_curvature(prep: Prepared, u0_slice: np.ndarray, n: int = 3):
    """Slice scalar curvature of ``u^{4/(n-2)} g`` by the conformal formula and directly."""
    lifted = np.broadcast_to(u0_slice[..., None], prep.m.grid.shape).copy()
    formula = cf.induced_scalar_conformal(prep.m, lifted, prep.hg, prep.pack, n=n)
    direct = cf.induced_scalar_direct(prep.m, u0_slice, prep.xi_index, "xi", n=n)
    return formula, direct


# --------------------------------------------------------------------------
# the run

def run(spec: MetricSpec, params: PipelineParams | None = None, res: Resolution | None = None,
        x_kind: str = "sphere", prep: Prepared | None = None, keep_fields: dict | None = None) -> PipelineReport:
    params = params or PipelineParams()
    res = res or Resolution()
    params.validate()
    prep = prep or prepare(spec, x_kind, res, params)
    m = prep.m
    R = np.real(prep.pack.scalar)
    hmax = max(float(np.max(np.abs(hg.h))) for hg in prep.boundary)
    angle_ok, angle_margin = geo.check_angle_condition(prep.hg)
    rep = PipelineReport(
        metric=spec.name, resolution=res.to_dict(), params=params.to_dict(),
        hypothesis_R_positive=(bool(np.min(R) > 0), float(np.min(R))),
        hypothesis_h=(hmax <= params.h_tol, hmax),
        angle=(angle_ok, angle_margin),
    )
    thresh = 10 * prep.h_slice**2
    rep.certification_threshold = thresh

    failed = [name for name, ok in (("R_positive", rep.hypothesis_R_positive[0]),
                                      ("h_zero", rep.hypothesis_h[0]), ("angle", angle_ok)) if not ok]
    if failed:
        rep.conclusion = f"{FAILED}({failed[0]})"
        rep.stage = "hypotheses"
        rep.messages = [f"hypothesis fails: {f}" for f in failed]
        return rep

    w = _w_data(prep)
    margin, where = el.ellipticity_margin(w.metric, w.V)
    rep.ellipticity_margin = margin
    if margin <= 0:
        rep.conclusion = f"{FAILED}(angle)"
        rep.stage = "ellipticity"
        rep.messages.append(f"operator not elliptic at {where}")
        return rep
    if margin < thresh or angle_margin < thresh:
        rep.conclusion = f"{INCONCLUSIVE}(ellipticity)"
        rep.stage = "ellipticity"
        return rep

    rep.C_used = float(params.C) if params.C is not None else compute_C(prep.pack, prep.boundary, m)
    try:
        op = el.assemble(w)
        F, flp, u, srep = _solve_bump(prep, w, op, rep.C_used, params)
    except (el.SolverError, el.EllipticError) as err:
        rep.conclusion = f"{INCONCLUSIVE}(solve)"
        rep.stage = "solve"
        rep.messages.append(str(err))
        return rep
    rep.F_lp_norm = flp
    rep.F_lp_below_delta = flp < params.delta
    rep.solve = srep

    dg = diagnostics(prep, w, u, params.epsilon)
    rep.partial_c2_sup = dg.partial_c2_sup
    rep.laplacian_split_residual = dg.laplacian_split_residual
    rep.A1_sup = dg.A1_sup
    rep.u0_bounds = dg.u0_bounds

    u0_slice = u[..., 0] + 1.0
    formula, direct = induced_curvature(prep, u0_slice)
    rep.induced_R_min_formula = float(np.min(formula))
    rep.induced_R_min_direct = float(np.min(direct))
    rep.route_difference = abs(rep.induced_R_min_formula - rep.induced_R_min_direct)
    rep.routes_agree = rep.route_difference <= params.route_tol
    if keep_fields is not None:
        keep_fields.update(u=u, F=F, w=w, u0_slice=u0_slice, R_formula=formula, R_direct=direct, prep=prep)

    checks = [
        ("solve", srep.converged),
        ("maximum_principle", srep.u_min >= -1e-8),
        ("diagnostics", dg.A1_ok and dg.u0_ok),
        ("induced_R", min(rep.induced_R_min_formula, rep.induced_R_min_direct) > thresh),
        ("route_agreement", rep.routes_agree),
    ]
    bad = [name for name, ok in checks if not ok]
    if bad:
        rep.conclusion = f"{INCONCLUSIVE}({bad[0]})"
        rep.stage = bad[0]
    else:
        rep.conclusion = CERTIFIED
    return rep


# --------------------------------------------------------------------------
# sweeps and eigenvalues

SWEEP_COLUMNS = ("F_lp_norm", "c0_norm", "c1_norm", "partial_c2_sup")


def non_increasing(values, rtol: float = SWEEP_RTOL) -> bool:
    return all(b <= a + rtol * max(abs(a), 1.0) for a, b in zip(values, values[1:]))


def epsilon_sweep(spec: MetricSpec, params: PipelineParams, epsilons, res: Resolution | None = None,
                  x_kind: str = "sphere") -> dict:
    """Solve for each epsilon on one prepared geometry; columns and their monotonicity."""
    eps = [float(e) for e in epsilons]
    if len(eps) < 3:
        raise PipelineError("an epsilon sweep needs at least three values")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise PipelineError("epsilons must be strictly decreasing")
    res = res or Resolution()
    for e in eps:
        replace(params, epsilon=e).validate()
    prep = prepare(spec, x_kind, res, params)
    w = _w_data(prep)
    op = el.assemble(w)
    C = float(params.C) if params.C is not None else compute_C(prep.pack, prep.boundary, prep.m)
    rows = []
    for e in eps:
        pe = replace(params, epsilon=e)
        _, flp, u, srep = _solve_bump(prep, w, op, C, pe)
        rows.append({"epsilon": e, "F_lp_norm": flp, "c0_norm": srep.c0_norm, "c1_norm": srep.c1_norm,
                     "partial_c2_sup": partial_c2_sup(w.metric.grid, u, e), "u_min": srep.u_min,
                     "iterations": srep.iterations})
    mono = {c: non_increasing([r[c] for r in rows]) for c in SWEEP_COLUMNS}
    return {"metric": spec.name, "C_used": C, "rows": rows, "non_increasing": mono}


def eigen_check(spec: MetricSpec, which: str, res: Resolution | None = None, x_kind: str = "sphere",
                params: PipelineParams | None = None) -> dict:
    """Sign of the first eigenvalue of a conformal Laplacian.

    ``M_neumann``: ``-4(n-1)/(n-2) Delta + R`` on the band, zero normal derivative
    on both boundary slices.  ``X_slice``: ``-c Delta + R`` on the slice with its
    induced metric (``c = params.slice_c``).  ``X_certified``: the same on the slice
    metric produced by a pipeline run.
    """
    params = params or PipelineParams()
    res = res or Resolution()
    from .corpus import band_grid, x_axes

    if which == "M_neumann":
        n = spec.dim
        m = sample(spec, band_grid(x_kind, res.n1, res.n2, res.n_xi))
        R = np.real(geo.curvature(m).scalar)
        lam = el.smallest_eigenvalue(m, 4 * (n - 1) / (n - 2), R, neumann=True)
        c = 4 * (n - 1) / (n - 2)
    elif which == "X_slice":
        if spec.dim == 2:
            m = sample(spec, Grid(x_axes(x_kind, res.n1, res.n2)))
        else:
            big = sample(spec, band_grid(x_kind, res.n1, res.n2, res.n_xi))
            m = big.restrict("xi", slice_index(big.grid, params.xi_slice))
        R = np.real(geo.curvature(m).scalar)
        c = params.slice_c
        lam = el.smallest_eigenvalue(m, c, R)
    elif which == "X_certified":
        fields_: dict = {}
        rep = run(spec, params, res, x_kind, keep_fields=fields_)
        if not rep.certified:
            raise PipelineError(f"pipeline did not certify: {rep.conclusion}")
        prep = fields_["prep"]
        sl = prep.m.restrict("xi", prep.xi_index)
        m = sl.scaled_by_field(fields_["u0_slice"] ** 4.0)
        R = fields_["R_direct"]
        c = params.slice_c
        lam = el.smallest_eigenvalue(m, c, R)
    else:
        raise PipelineError(f"unknown eigen target {which!r}; expected M_neumann, X_slice or X_certified")
    sign = "positive" if lam > 1e-8 else "negative" if lam < -1e-8 else "zero"
    return {"metric": spec.name, "which": which, "laplacian_coefficient": c, "eigenvalue": lam, "sign": sign}
