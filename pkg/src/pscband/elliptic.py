"""The operator ``L u = 4 V(V u) - 4 Delta u + R0 u`` on the closed product ``X x S^1``.

The metric on W is the induced slice metric plus ``dt^2``; ``V`` and ``R0``
are carried over from the slice and do not depend on ``t``.  Solutions use
scipy's BiCGSTAB with a Jacobi preconditioner; small systems can be checked
against a dense direct solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import expr as ex
from . import geometry as geo
from .grid import Grid, derivative_matrix, mixed_derivative_matrix, periodic, gradient
from .metric import MetricField, MetricSpec, sample

DENSE_LIMIT = 4096


class EllipticError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# principal symbol

def ellipticity_margin(m: MetricField, V: np.ndarray) -> tuple[float, dict]:
    """``min (1 - |V|^2_g)`` over the grid, and the coordinates where it is attained."""
    v2 = np.einsum("...ij,...i,...j->...", np.real(m.g), V, V)
    field_ = 1.0 - v2
    k = int(np.argmin(field_))
    where = np.unravel_index(k, m.grid.shape)
    mesh = m.grid.mesh()
    return float(field_.flat[k]), {n: float(mesh[n][where]) for n in m.grid.names}


def symbol_minimum(m: MetricField, V: np.ndarray, samples: int = 64, seed: int = 0) -> np.ndarray:
    """Per-node minimum of ``|p|^2 - (V.p)^2`` over random g-unit covectors plus ``V`` itself.

    The flat of ``V`` is included so the Cauchy-Schwarz minimum ``1 - |V|^2`` is
    attained when ``V != 0``.
    """
    rng = np.random.default_rng(seed)
    g = np.real(m.g)
    ginv = np.real(m.ginv)
    d = m.grid.dim
    best = np.full(m.grid.shape, np.inf)
    flat = np.einsum("...ij,...j->...i", g, V)
    cands = [flat] + [np.broadcast_to(rng.standard_normal(d), m.grid.shape + (d,)) for _ in range(samples)]
    for p in cands:
        n2 = np.einsum("...ij,...i,...j->...", ginv, p, p)
        ok = n2 > 0
        scale = np.where(ok, 1.0 / np.sqrt(np.where(ok, n2, 1.0)), 0.0)
        q = p * scale[..., None]
        val = np.einsum("...ij,...i,...j->...", ginv, q, q) - np.einsum("...i,...i->...", V, q) ** 2
        best = np.where(ok, np.minimum(best, val), best)
    return best


# --------------------------------------------------------------------------
# W-space data

@dataclass
class WData:
    metric: MetricField
    V: np.ndarray
    dV: np.ndarray
    R0: np.ndarray


def w_space(m: MetricField, xi_index: int, n_t: int, xi_axis: str = "xi", t_name: str = "t",
            pack: geo.CurvaturePack | None = None) -> WData:
    """Metric ``slice + dt^2`` on ``X x S^1`` with ``V`` and ``R_g`` broadcast along ``t``."""
    pack = geo.curvature(m) if pack is None else pack
    hg = geo.hypersurface(m, xi_index, xi_axis, pack)
    mw = m.restrict(xi_axis, xi_index).extend(periodic(t_name, n_t))
    tan = hg.tangent
    dX = len(tan)
    V = np.zeros(mw.grid.shape + (dX + 1,))
    V[..., :dX] = hg.V[..., tan][..., None, :]
    dV = np.zeros(mw.grid.shape + (dX + 1, dX + 1))
    dV[..., :dX, :dX] = hg.dV[..., tan, :][..., :, tan][..., None, :, :]
    x = m.grid.index(xi_axis)
    R0 = np.broadcast_to(np.take(np.real(pack.scalar), xi_index, axis=x)[..., None], mw.grid.shape).copy()
    return WData(mw, V, dV, R0)


def w_space_from_specs(slice_spec: MetricSpec, V_exprs: list, R0_expr, grid: Grid) -> WData:
    """W data from closed-form slice metric, tangential field and potential.

    ``grid`` carries the slice axes followed by the ``t`` axis; ``V_exprs`` gives
    the slice components of ``V`` (its ``t`` component is zero).
    """
    d = grid.dim
    comps = {k: e for k, e in slice_spec.components.items()}
    comps[(d - 1, d - 1)] = ex.Num(1.0)
    spec = MetricSpec(d, comps, slice_spec.name + "+dt^2")
    mw = sample(spec, grid)
    mesh = grid.mesh()
    V = np.zeros(grid.shape + (d,))
    dV = np.zeros(grid.shape + (d, d))
    for k, e in enumerate(V_exprs):
        val, gr, _ = ex.derivatives(ex.as_expr(e), mesh, grid.names)
        V[..., k] = val
        dV[..., :, k] = gr
    R0 = np.broadcast_to(ex.evaluate(ex.as_expr(R0_expr), mesh), grid.shape).astype(float)
    return WData(mw, V, dV, R0)


# --------------------------------------------------------------------------
# operator

@dataclass
class OperatorW:
    grid: Grid
    metric: MetricField
    V: np.ndarray
    dV: np.ndarray
    R0: np.ndarray
    margin: float
    matrix: sp.csr_matrix = field(repr=False)

    def apply(self, u: np.ndarray) -> np.ndarray:
        return (self.matrix @ np.asarray(u, dtype=float).ravel()).reshape(self.grid.shape)


def assemble(w: WData, require_positive: bool = True) -> OperatorW:
    """Sparse ``4 V^iV^j d_ij + 4 V^i (d_i V^k) d_k - 4 Delta + R0``.

    Refuses a non-elliptic ``V`` (``|V|_g >= 1`` somewhere) and, unless told
    otherwise, a potential that is not strictly positive.
    """
    m = w.metric
    grid = m.grid
    if np.max(np.abs(w.V[..., -1])) > 0:
        raise EllipticError("V must be tangent to X (zero t-component)")
    if np.ptp(w.V, axis=grid.dim - 1).max(initial=0.0) > 1e-14:
        raise EllipticError("V must not depend on t")
    margin, where = ellipticity_margin(m, w.V)
    if margin <= 0:
        raise EllipticError(f"operator is not elliptic: 1 - |V|^2 = {margin:.6g} at {where}")
    if require_positive and np.min(w.R0) <= 0:
        raise EllipticError(f"potential R0 must be positive (min {np.min(w.R0):.6g})")
    d = grid.dim
    n = grid.size
    V = w.V.reshape(n, d)
    dV = w.dV.reshape(n, d, d)
    ginv = np.real(m.ginv).reshape(n, d, d)
    gam = np.real(m.contracted_christoffel).reshape(n, d)
    mat = sp.diags(w.R0.ravel().astype(float))
    for i in range(d):
        for j in range(i, d):
            c = 4 * V[:, i] * V[:, j] - 4 * ginv[:, i, j]
            if i != j:
                c = 2 * c
            if np.any(c != 0):
                mat = mat + sp.diags(c) @ mixed_derivative_matrix(grid, i, j)
    first = 4 * np.einsum("ni,nik->nk", V, dV) + 4 * gam
    for k in range(d):
        if np.any(first[:, k] != 0):
            mat = mat + sp.diags(first[:, k]) @ derivative_matrix(grid, k, 1)
    return OperatorW(grid, m, w.V, w.dV, w.R0, margin, mat.tocsr())


# --------------------------------------------------------------------------
# solves

@dataclass
class SolveReport:
    iterations: int
    residual_norm: float
    u_min: float
    u_max: float
    c0_norm: float
    c1_norm: float
    converged: bool
    method: str = "bicgstab"

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _report(op: OperatorW, u: np.ndarray, F: np.ndarray, iterations: int, converged: bool, method: str):
    r = op.apply(u) - F
    fn = np.linalg.norm(F)
    res = float(np.linalg.norm(r) / (fn if fn > 0 else 1.0))
    c0 = float(np.max(np.abs(u)))
    grad = gradient(op.grid, u)
    c1 = c0 + float(np.max(np.abs(grad), initial=0.0) if grad.size else 0.0)
    return SolveReport(iterations, res, float(np.min(u)), float(np.max(u)), c0, c1, converged, method)


def _check_source(F: np.ndarray, require_nonnegative: bool):
    if require_nonnegative and np.min(F) < 0:
        raise EllipticError(f"source must be nonnegative (min {np.min(F):.3e})")


def solve(op: OperatorW, F: np.ndarray, tol: float = 1e-10, max_iter: int = 20000,
          x0: np.ndarray | None = None, require_nonnegative: bool = True) -> tuple[np.ndarray, SolveReport]:
    """BiCGSTAB with Jacobi preconditioning; ``residual_norm`` is ``|Lu - F| / |F|``."""
    if tol <= 0:
        raise EllipticError("tolerance must be positive")
    F = np.asarray(F, dtype=float)
    _check_source(F, require_nonnegative)
    if not np.any(F):
        u = np.zeros(op.grid.shape)
        return u, _report(op, u, F, 0, True, "bicgstab")
    diag = op.matrix.diagonal()
    if np.any(diag == 0):
        raise SolverError("zero on the operator diagonal; Jacobi preconditioner undefined")
    prec = spla.LinearOperator(op.matrix.shape, matvec=lambda v: v / diag, dtype=float)
    count = [0]

    def tick(_):
        count[0] += 1

    b = F.ravel()
    guess = None if x0 is None else np.asarray(x0, dtype=float).ravel()
    rtol = tol
    u = guess
    for _ in range(4):
        u, info = spla.bicgstab(op.matrix, b, x0=u, rtol=rtol, atol=0.0, maxiter=max_iter,
                                M=prec, callback=tick)
        if info < 0:
            raise SolverError(f"BiCGSTAB breakdown (info={info})")
        true = np.linalg.norm(op.matrix @ u - b) / np.linalg.norm(b)
        if true <= tol or info > 0:
            break
        # the stopping test ran on the recursive residual; tighten and restart
        rtol = rtol * 0.1
    u = u.reshape(op.grid.shape)
    rep = _report(op, u, F, count[0], True, "bicgstab")
    rep.converged = rep.residual_norm <= tol
    if not rep.converged:
        raise SolverError(f"no convergence in {max_iter} iterations (relative residual {rep.residual_norm:.3e})")
    return u, rep


def dense_solve(op: OperatorW, F: np.ndarray, require_nonnegative: bool = False):
    """Direct LU on the dense matrix; only for small grids."""
    if op.grid.size > DENSE_LIMIT:
        raise EllipticError(f"dense solve limited to {DENSE_LIMIT} unknowns (got {op.grid.size})")
    F = np.asarray(F, dtype=float)
    _check_source(F, require_nonnegative)
    u = sla.solve(op.matrix.toarray(), F.ravel()).reshape(op.grid.shape)
    return u, _report(op, u, F, 1, True, "dense")


# --------------------------------------------------------------------------
# eigenvalues

def conformal_laplacian_matrix(m: MetricField, c: float, potential: np.ndarray, neumann: bool = False):
    if c < 0:
        raise EllipticError("laplacian coefficient must be nonnegative")
    lap = geo.laplacian_matrix(m, neumann)
    pot = np.broadcast_to(np.asarray(potential, dtype=float), m.grid.shape).ravel()
    return (-c * lap + sp.diags(pot)).tocsr()


def smallest_eigenvalue(m: MetricField, c: float, potential, neumann: bool = False,
                        tol: float = 1e-8, max_iter: int = 500) -> float:
    """Smallest eigenvalue of ``-c Delta + potential`` by shifted inverse iteration.

    The shift sits one unit below the Gershgorin lower bound, so the iteration
    converges to the eigenvalue with the smallest real part.
    """
    A = conformal_laplacian_matrix(m, c, potential, neumann)
    diag = A.diagonal()
    off = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(diag)
    sigma = float(np.min(diag - off)) - 1.0
    lu = spla.splu((A - sigma * sp.identity(A.shape[0], format="csr")).tocsc())
    rng = np.random.default_rng(12345)
    x = 1.0 + 0.01 * rng.standard_normal(A.shape[0])
    x /= np.linalg.norm(x)
    lam = np.inf
    for _ in range(max_iter):
        y = lu.solve(x)
        y /= np.linalg.norm(y)
        Ay = A @ y
        lam = float(y @ Ay)
        # eigen-residual bounds the eigenvalue error (tightly, for near-normal A)
        if np.linalg.norm(Ay - lam * y) <= tol * max(1.0, abs(lam)):
            return lam
        x = y
    raise SolverError(f"inverse iteration stagnated after {max_iter} steps (last {lam:.12g})")


def dense_eigenvalues(m: MetricField, c: float, potential, neumann: bool = False) -> np.ndarray:
    if m.grid.size > DENSE_LIMIT:
        raise EllipticError(f"dense eigensolve limited to {DENSE_LIMIT} unknowns")
    A = conformal_laplacian_matrix(m, c, potential, neumann).toarray()
    return np.sort_complex(np.linalg.eigvals(A))


# --------------------------------------------------------------------------
# manufactured solutions

def exact_operator(w: WData, u_expr) -> np.ndarray:
    """``L u*`` for a closed-form ``u*``, with the Laplacian in divergence form.

    Uses exact metric derivatives: ``Delta u = g^{ij} u_ij + (d_i g^{ij}) u_j
    + g^{ij} (d_i log sqrt det g) u_j``.  This is independent of the stencil
    code path, which uses the Christoffel form.
    """
    m = w.metric
    grid = m.grid
    val, gr, he = ex.derivatives(ex.as_expr(u_expr), grid.mesh(), grid.names)
    ginv = np.real(m.ginv)
    dginv = np.real(m.dginv)
    dlog = 0.5 * np.einsum("...ab,...kab->...k", ginv, np.real(m.dg))
    lap = (np.einsum("...ij,...ij->...", ginv, he)
           + np.einsum("...iij,...j->...", dginv, gr)
           + np.einsum("...ij,...i,...j->...", ginv, dlog, gr))
    vvu = (np.einsum("...i,...j,...ij->...", w.V, w.V, he)
           + np.einsum("...i,...ij,...j->...", w.V, w.dV, gr))
    return 4 * vvu - 4 * lap + w.R0 * val


@dataclass
class MMSResult:
    counts: list
    spacings: list
    errors: list
    slopes: list
    residuals: list

    @property
    def slope(self) -> float:
        return float(np.polyfit(np.log(self.spacings), np.log(self.errors), 1)[0])

    def to_dict(self) -> dict:
        return {"counts": self.counts, "spacings": self.spacings, "errors": self.errors,
                "pairwise_slopes": self.slopes, "fitted_slope": self.slope, "residuals": self.residuals}


def mms_study(build, u_expr, counts, tol: float = 1e-10, max_iter: int = 20000) -> MMSResult:
    """Solve ``L u = L u*`` at every resolution and record ``sup |u - u*|``.

    ``build(count)`` returns the :class:`WData` for one resolution.
    """
    errs, hs, res = [], [], []
    for n in counts:
        w = build(n)
        op = assemble(w)
        F = exact_operator(w, u_expr)
        u, rep = solve(op, F, tol=tol, max_iter=max_iter, require_nonnegative=False)
        exact = ex.evaluate(ex.as_expr(u_expr), w.metric.grid.mesh())
        errs.append(float(np.max(np.abs(u - exact))))
        hs.append(w.metric.grid.max_spacing())
        res.append(rep.residual_norm)
    slopes = [float(np.log(errs[k] / errs[k + 1]) / np.log(hs[k] / hs[k + 1])) for k in range(len(errs) - 1)]
    return MMSResult(list(counts), hs, errs, slopes, res)
