"""Conformal transformation laws and the conformally changed Gauss-Codazzi equation.

All laws take the metric data exactly and differentiate the conformal factor
on the grid.  The dimension parameter ``n`` is supplied by the caller and used
verbatim in every exponent and coefficient.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .grid import diff, gradient, hessian
from .metric import MetricField


class ConformalError(ValueError):
    pass


class Parametrization(str, enum.Enum):
    PHI = "phi"
    U = "u"


@dataclass
class ConformalFactor:
    """Either ``e^{2 phi}`` or ``u^{4/(n-2)}`` times the metric."""

    parametrization: Parametrization
    values: np.ndarray
    n: int

    def __post_init__(self):
        self.parametrization = Parametrization(self.parametrization)
        self.values = np.asarray(self.values, dtype=float)
        if self.parametrization is Parametrization.U and self.n < 3:
            raise ConformalError("the u-parametrization needs n >= 3")
        if self.parametrization is Parametrization.U and np.any(self.values <= 0):
            raise ConformalError("conformal factor u must be positive at every node")

    @property
    def phi(self) -> np.ndarray:
        if self.parametrization is Parametrization.PHI:
            return self.values
        return 2.0 / (self.n - 2) * np.log(self.values)

    @property
    def u(self) -> np.ndarray:
        if self.parametrization is Parametrization.U:
            return self.values
        if self.n < 3:
            raise ConformalError("the u-parametrization needs n >= 3")
        return np.exp(0.5 * (self.n - 2) * self.values)

    @property
    def weight(self) -> np.ndarray:
        """The multiplier ``e^{2 phi}``."""
        return np.exp(2 * self.phi)


def _slice(m: MetricField, hg: geo.HypersurfaceGeometry, arr):
    return np.take(arr, hg.xi_index, axis=m.grid.index(hg.xi_axis))


def transform_scalar(m: MetricField, cf: ConformalFactor, pack: geo.CurvaturePack | None = None) -> np.ndarray:
    """``e^{-2phi} (R - 2(n-1) Delta phi - (n-2)(n-1) |grad phi|^2)``."""
    n = cf.n
    phi = cf.phi
    pack = geo.curvature(m) if pack is None else pack
    lap = geo.laplace_beltrami(m, phi)
    gn2 = geo.norm_squared(m, gradient(m.grid, phi))
    return np.exp(-2 * phi) * (np.real(pack.scalar) - 2 * (n - 1) * lap - (n - 2) * (n - 1) * gn2)


def hessian_nn(m: MetricField, f: np.ndarray, hg: geo.HypersurfaceGeometry) -> np.ndarray:
    """Covariant Hessian ``(nabla^2 f)(nu, nu)`` on the slice."""
    d2 = _slice(m, hg, hessian(m.grid, f))
    df = _slice(m, hg, gradient(m.grid, f))
    gam = np.real(_slice(m, hg, m.christoffel))
    cov = d2 - np.einsum("...kij,...k->...ij", gam, df)
    return np.einsum("...ij,...i,...j->...", cov, hg.nu, hg.nu)


def normal_derivative(m: MetricField, f: np.ndarray, hg: geo.HypersurfaceGeometry) -> np.ndarray:
    return np.einsum("...k,...k->...", _slice(m, hg, gradient(m.grid, f)), hg.nu)


def transform_ricci_nn(m: MetricField, cf: ConformalFactor, hg: geo.HypersurfaceGeometry,
                       weight: np.ndarray | float = 1.0) -> np.ndarray:
    """``Ric~(e^{-phi} nu, e^{-phi} nu)``.

    ``e^{-2phi}(Ric(nu,nu) - (n-2)(Hess phi(nu,nu) - (d_nu phi)^2) - (Delta phi + (n-2)|grad phi|^2) w)``
    with the last weight ``w = g(nu, nu) = 1`` by default.
    """
    if hg.ric_nn is None:
        raise ConformalError("slice geometry was computed without Ricci data")
    n = cf.n
    phi = cf.phi
    lap = _slice(m, hg, geo.laplace_beltrami(m, phi))
    gn2 = _slice(m, hg, geo.norm_squared(m, gradient(m.grid, phi)))
    dn = normal_derivative(m, phi, hg)
    hnn = hessian_nn(m, phi, hg)
    e = np.exp(-2 * _slice(m, hg, phi))
    return e * (hg.ric_nn - (n - 2) * (hnn - dn**2) - (lap + (n - 2) * gn2) * weight)


def transform_second_fundamental(m: MetricField, cf: ConformalFactor, hg: geo.HypersurfaceGeometry):
    """Transformed ``|A|^2`` and ``h^2`` with the coefficients ``2n h`` and ``n^2``.

    Both laws add the same correction, so the combination ``h^2 - |A|^2``
    entering Gauss-Codazzi is only rescaled by ``e^{-2 phi}``.  Matches a direct
    recomputation when ``d_nu phi = 0``; otherwise ``|A|^2`` picks up
    ``2 h d_nu phi + (n-1)(d_nu phi)^2`` and ``h`` picks up ``(n-1) d_nu phi``.
    """
    n = cf.n
    dn = normal_derivative(m, cf.phi, hg)
    e = np.exp(-2 * _slice(m, hg, cf.phi))
    corr = 2 * n * hg.h * dn + n**2 * dn**2
    return e * (hg.A_norm2 + corr), e * (hg.h**2 + corr)


def directional(V: np.ndarray, grad: np.ndarray) -> np.ndarray:
    return np.einsum("...k,...k->...", V, grad)


def iterated_directional(V: np.ndarray, dV: np.ndarray, grad: np.ndarray, hess: np.ndarray) -> np.ndarray:
    """``V(V(f)) = V^i V^j d_ij f + V^i (d_i V^j) d_j f``."""
    return (np.einsum("...i,...j,...ij->...", V, V, hess)
            + np.einsum("...i,...ij,...j->...", V, dV, grad))


def check_xi_independent(m: MetricField, u: np.ndarray, xi_axis: str = "xi", tol: float = 1e-12):
    dxi = diff(m.grid, u, m.grid.index(xi_axis), 1)
    worst = float(np.max(np.abs(dxi)))
    if worst >= tol:
        raise ConformalError(f"conformal factor depends on xi (max |d_xi u| = {worst:.3e})")


def induced_scalar_conformal(m: MetricField, u_factor: np.ndarray, hg: geo.HypersurfaceGeometry,
                             pack: geo.CurvaturePack | None = None, n: int | None = None) -> np.ndarray:
    """Scalar curvature of the slice metric induced by ``u^{4/(n-2)} g``, via the
    u-form of the conformally changed Gauss-Codazzi equation::

        u^{-(n+2)/(n-2)} [ (R - 2Ric(nu,nu) + h^2 - |A|^2) u + 4 V(V u) - 4 Delta u
                           + 4/(n-2) |grad u|^2 / u - 4n/(n-2) (V u)^2 / u ]

    ``u_factor`` is a field on the grid of ``m`` that must not depend on xi.
    """
    n = m.grid.dim if n is None else n
    u = np.asarray(u_factor, dtype=float)
    if np.any(u <= 0):
        raise ConformalError("conformal factor must be positive")
    check_xi_independent(m, u, hg.xi_axis)
    pack = geo.curvature(m) if pack is None else pack
    if hg.ric_nn is None:
        hg = geo.hypersurface(m, hg.xi_index, hg.xi_axis, pack)
    grad = _slice(m, hg, gradient(m.grid, u, skip=(hg.xi_axis,)))
    hess = _slice(m, hg, hessian(m.grid, u, skip=(hg.xi_axis,)))
    lap = _slice(m, hg, geo.laplace_beltrami(m, u))
    us = _slice(m, hg, u)
    R = np.real(_slice(m, hg, pack.scalar))
    ginv = np.real(_slice(m, hg, m.ginv))
    gn2 = np.einsum("...ij,...i,...j->...", ginv, grad, grad)
    vu = directional(hg.V, grad)
    vvu = iterated_directional(hg.V, hg.dV, grad, hess)
    bracket = ((R - 2 * hg.ric_nn + hg.h**2 - hg.A_norm2) * us + 4 * vvu - 4 * lap
               + 4.0 / (n - 2) * gn2 / us - 4.0 * n / (n - 2) * vu**2 / us)
    return us ** (-(n + 2) / (n - 2)) * bracket


def induced_scalar_direct(m: MetricField, u_slice: np.ndarray, xi_index: int, xi_axis: str = "xi",
                          n: int | None = None) -> np.ndarray:
    """Intrinsic scalar curvature of ``u^{4/(n-2)} * (induced metric)`` on the slice."""
    n = m.grid.dim if n is None else n
    sl = m.restrict(xi_axis, xi_index)
    w = np.asarray(u_slice, dtype=float) ** (4.0 / (n - 2))
    return np.real(geo.curvature(sl.scaled_by_field(w)).scalar)
