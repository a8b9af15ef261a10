"""Curvature of sampled metrics and geometry of coordinate slices.

Conventions: ``Gamma^k_ij`` from the Levi-Civita formula,
``Ric_ij = d_k Gamma^k_ij - d_j Gamma^k_ik + Gamma^k_kl Gamma^l_ij - Gamma^k_jl Gamma^l_ik``
(round spheres have positive scalar curvature), and for a slice with unit
normal ``nu``: ``A(e_i, e_j) = g(nabla_{e_i} nu, e_j)``, ``h = tr A``.  With these
signs ``R = R_slice + 2 Ric(nu, nu) - h^2 + |A|^2`` holds, which is what the
tests pin.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import Grid, derivative_matrix, mixed_derivative_matrix
from .metric import MetricField

CHUNK = 16384


class GeometryError(ValueError):
    pass


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("PSCBAND_THREADS", "1")))
    except ValueError:
        return 1


def _chunks(n: int):
    return [slice(s, min(s + CHUNK, n)) for s in range(0, n, CHUNK)]


@dataclass
class CurvaturePack:
    christoffel: np.ndarray
    ricci: np.ndarray
    scalar: np.ndarray


def _ricci_chunk(g, dg, ddg):
    ginv = np.linalg.inv(g)
    first = 0.5 * (np.einsum("nijl->nlij", dg) + np.einsum("njil->nlij", dg) - dg)
    gam = np.einsum("nkl,nlij->nkij", ginv, first)
    dginv = -np.einsum("nia,nkab,nbj->nkij", ginv, dg, ginv)
    # d_m Gamma_{lij}: indexed [n, m, l, i, j]
    dfirst = 0.5 * (np.einsum("nmijl->nmlij", ddg) + np.einsum("nmjil->nmlij", ddg) - ddg)
    dgam = np.einsum("nmkl,nlij->nmkij", dginv, first) + np.einsum("nkl,nmlij->nmkij", ginv, dfirst)
    ric = (np.einsum("nkkij->nij", dgam) - np.einsum("njkik->nij", dgam)
           + np.einsum("nkkl,nlij->nij", gam, gam) - np.einsum("nkjl,nlik->nij", gam, gam))
    ric = 0.5 * (ric + np.swapaxes(ric, -1, -2))
    scal = np.einsum("nij,nij->n", ginv, ric)
    return gam, ric, scal


def curvature(m: MetricField) -> CurvaturePack:
    """Christoffel symbols, Ricci tensor and scalar curvature, node by node."""
    if m.dg is None or m.ddg is None:
        raise GeometryError("curvature needs first and second metric derivatives")
    d = m.grid.dim
    n = m.grid.size
    g = m.g.reshape(n, d, d)
    dg = m.dg.reshape(n, d, d, d)
    ddg = m.ddg.reshape(n, d, d, d, d)
    dtype = m.g.dtype
    gam = np.empty((n, d, d, d), dtype=dtype)
    ric = np.empty((n, d, d), dtype=dtype)
    scal = np.empty(n, dtype=dtype)

    def work(s):
        gam[s], ric[s], scal[s] = _ricci_chunk(g[s], dg[s], ddg[s])

    chunks = _chunks(n)
    workers = thread_count()
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(work, chunks))
    else:
        for s in chunks:
            work(s)
    shp = m.grid.shape
    return CurvaturePack(gam.reshape(shp + (d, d, d)), ric.reshape(shp + (d, d)), scal.reshape(shp))


# --------------------------------------------------------------------------
# Laplace-Beltrami

def laplacian_matrix(m: MetricField, neumann: bool = False) -> sp.csr_matrix:
    """Sparse ``Delta_g = g^{ij} d_i d_j - g^{ij} Gamma^k_ij d_k``; metric data exact."""
    grid = m.grid
    d = grid.dim
    n = grid.size
    ginv = np.real(m.ginv).reshape(n, d, d)
    gam = np.real(m.contracted_christoffel).reshape(n, d)
    out = sp.csr_matrix((n, n))
    for i in range(d):
        for j in range(i, d):
            c = ginv[:, i, j] * (1.0 if i == j else 2.0)
            if np.any(c != 0):
                out = out + sp.diags(c) @ mixed_derivative_matrix(grid, i, j, neumann)
    for k in range(d):
        if np.any(gam[:, k] != 0):
            out = out - sp.diags(gam[:, k]) @ derivative_matrix(grid, k, 1, neumann)
    return out.tocsr()


def laplace_beltrami(m: MetricField, f: np.ndarray, neumann: bool = False) -> np.ndarray:
    if np.shape(f) != m.grid.shape:
        raise GeometryError(f"field shape {np.shape(f)} does not match grid {m.grid.shape}")
    return (laplacian_matrix(m, neumann) @ np.asarray(f, dtype=float).ravel()).reshape(m.grid.shape)


def norm_squared(m: MetricField, grad: np.ndarray) -> np.ndarray:
    """``|df|^2_g`` from coordinate derivatives."""
    return np.einsum("...ij,...i,...j->...", np.real(m.ginv), grad, grad)


# --------------------------------------------------------------------------
# slices X x {xi}

@dataclass
class HypersurfaceGeometry:
    """Geometry of the slice ``xi = xi_index``; arrays live on the slice grid.

    Vectors carry all ambient coordinate components; ``V`` has zero
    xi-component.  ``dV[..., i, k] = d_i V^k`` for every ambient direction ``i``.
    ``A`` is indexed by tangential axes only; ``tangent`` lists their ambient
    indices in slice-grid order.
    """

    grid: Grid
    xi_axis: str
    xi_index: int
    nu: np.ndarray
    a: np.ndarray
    V: np.ndarray
    dV: np.ndarray
    A: np.ndarray
    h: np.ndarray
    A_norm2: np.ndarray
    angle_ratio: np.ndarray
    V_norm2: np.ndarray
    tangent: list[int]
    ric_nn: np.ndarray | None = None


def hypersurface(m: MetricField, xi_index: int, xi_axis: str = "xi",
                 pack: CurvaturePack | None = None) -> HypersurfaceGeometry:
    """Normal, the tangential field ``V = nu - a d_xi``, second fundamental form.

    ``nu`` is the normalized ``g``-orthogonal complement of the slice, i.e.
    Gram-Schmidt of ``d_xi`` against the tangential frame:
    ``nu^k = g^{k xi} / sqrt(g^{xi xi})``.  It points to increasing xi: inward
    on ``xi = 0`` and outward on ``xi = 1``.
    """
    grid = m.grid
    x = grid.index(xi_axis)
    if not 0 <= xi_index < grid.axes[x].count:
        raise GeometryError(f"slice index {xi_index} out of range")
    tan = [i for i in range(grid.dim) if i != x]

    def cut(arr):
        return np.real(np.take(arr, xi_index, axis=x))

    g, ginv, dg = cut(m.g), cut(m.ginv), cut(m.dg)
    dginv = cut(m.dginv)
    gam = cut(m.christoffel)
    s2 = ginv[..., x, x]
    if np.any(s2 <= 0):
        raise GeometryError("degenerate slice: g^{xi xi} <= 0")
    s = np.sqrt(s2)
    nu = ginv[..., :, x] / s[..., None]
    # d_i nu^k
    dnu = dginv[..., :, :, x] / s[..., None, None] - 0.5 * ginv[..., None, :, x] * dginv[..., :, None, x, x] / s[..., None, None] ** 3
    a = s.copy()
    V = nu.copy()
    V[..., x] = 0.0
    dV = dnu.copy()
    dV[..., x] = 0.0
    # nabla_{e_i} nu for tangential e_i, lowered against tangential e_j
    cov = dnu + np.einsum("...kil,...l->...ik", gam, nu)
    A_full = np.einsum("...jk,...ik->...ij", g, cov)
    A = A_full[..., tan, :][..., :, tan]
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    ht = np.linalg.inv(g[..., tan, :][..., :, tan])
    h = np.einsum("...ij,...ij->...", ht, A)
    A2 = np.einsum("...ik,...jl,...ij,...kl->...", ht, ht, A, A)
    ratio = g[..., x, x] * s2
    Vn2 = np.einsum("...ij,...i,...j->...", g, V, V)
    if pack is None:
        ric = None
    else:
        ric = np.einsum("...ij,...i,...j->...", cut(pack.ricci), nu, nu)
    return HypersurfaceGeometry(grid.drop(xi_axis), xi_axis, xi_index, nu, a, V, dV, A, h, A2,
                                ratio, Vn2, tan, ric)


def gauss_codazzi_residual(m: MetricField, xi_index: int, xi_axis: str = "xi",
                           ambient: MetricField | None = None) -> np.ndarray:
    """``R_g - (R_slice + 2 Ric(nu, nu) - h^2 + |A|^2)`` on the slice.

    The identity is algebraic in the pointwise 2-jet of the metric, so with one
    consistent set of derivative data the residual sits at round-off.  Passing
    ``ambient`` (for instance the same samples with stencil derivatives) takes
    ``R_g`` from it while the right-hand side keeps the data of ``m``; the
    residual then measures the discretization error of ``R_g``.
    """
    pack = curvature(m)
    hg = hypersurface(m, xi_index, xi_axis, pack)
    r_slice = curvature(m.restrict(xi_axis, xi_index)).scalar
    lhs = pack if ambient is None else curvature(ambient)
    r = np.take(np.real(lhs.scalar), xi_index, axis=m.grid.index(xi_axis))
    return r - (np.real(r_slice) + 2 * hg.ric_nn - hg.h**2 + hg.A_norm2)


def check_angle_condition(hg: HypersurfaceGeometry) -> tuple[bool, float]:
    """``max g(d_xi, d_xi) / g(nu, d_xi)^2 < 2`` on the slice, with margin ``2 - max``."""
    worst = float(np.max(hg.angle_ratio))
    return worst < 2.0, 2.0 - worst


def contracted_bianchi(spec, grid: Grid, step: float = 1e-30) -> np.ndarray:
    """``div Ric - dR / 2`` as a covector field, from exact metric data.

    Derivatives of Ricci come from complex-step differentiation: the metric is
    resampled at coordinates shifted by ``i * step`` along one axis at a time,
    so no stencil enters.
    """
    from .metric import sample

    base = sample(spec, grid)
    pack = curvature(base)
    ric = np.real(pack.ricci)
    gam = np.real(pack.christoffel)
    ginv = np.real(base.ginv)
    d = grid.dim
    dric = np.zeros(grid.shape + (d, d, d))
    dR = np.zeros(grid.shape + (d,))
    for k, name in enumerate(grid.names):
        shifted = curvature(sample(spec, grid, offset={name: 1j * step}, check=False))
        dric[..., k, :, :] = np.imag(shifted.ricci) / step
        dR[..., k] = np.imag(shifted.scalar) / step
    # nabla_k Ric_ij = d_k Ric_ij - Gamma^l_ki Ric_lj - Gamma^l_kj Ric_il
    cov = (dric - np.einsum("...lki,...lj->...kij", gam, ric)
           - np.einsum("...lkj,...il->...kij", gam, ric))
    div = np.einsum("...ki,...kij->...j", ginv, cov)
    return div - 0.5 * dR


def laplacian_of_jet(m: MetricField, grad: np.ndarray, hess: np.ndarray) -> np.ndarray:
    """``g^{ij} (f_ij - Gamma^k_ij f_k)`` from exact first and second derivatives of ``f``."""
    ginv = np.real(m.ginv)
    return (np.einsum("...ij,...ij->...", ginv, hess)
            - np.einsum("...k,...k->...", np.real(m.contracted_christoffel), grad))
