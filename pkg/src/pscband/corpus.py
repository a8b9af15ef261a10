"""Closed-form metric families used by tests, configs and examples.

Coordinates on ``X``: ``x1, x2`` (colatitude and longitude on a sphere chart,
or torus angles).  The band coordinate is ``xi`` in ``[0, 1]``.
"""

from __future__ import annotations

from .grid import Grid, interval, periodic, sphere_pair
from .metric import MetricSpec


def _spec(dim, comps, name):
    return MetricSpec.from_dict({"dim": dim, "components": comps, "name": name})


def flat_torus(dim: int = 2) -> MetricSpec:
    return _spec(dim, {f"g{i}{i}": "1" for i in range(1, dim + 1)}, f"flat T^{dim}")


def round_sphere(r: float = 1.0) -> MetricSpec:
    r2 = repr(float(r) ** 2)
    return _spec(2, {"g11": r2, "g22": f"{r2}*sin(x1)^2"}, f"round S^2(r={r})")


def product_sphere_band() -> MetricSpec:
    return _spec(3, {"g11": "1", "g22": "sin(x1)^2", "g33": "1"}, "S^2 x I")


def shear_sphere_band(beta: float) -> MetricSpec:
    """``d theta^2 + sin^2 theta (d phi + beta d xi)^2 + d xi^2``.

    A product in the rotated chart ``phi + beta xi``, so ``R = 2`` and ``h = 0``,
    while the normal tilts: ``V = -beta d_phi`` and ``|V|^2 = beta^2 sin^2 theta``.
    """
    b = repr(float(beta))
    return _spec(3, {"g11": "1", "g22": "sin(x1)^2", "g23": f"{b}*sin(x1)^2",
                     "g33": f"1+{b}^2*sin(x1)^2"}, f"sheared S^2 x I (beta={beta})")


def flat_band() -> MetricSpec:
    return _spec(3, {"g11": "1", "g22": "1", "g33": "1"}, "T^2 x I")


def flat_shear(beta: float) -> MetricSpec:
    """``(dx + beta d xi)^2 + dy^2 + d xi^2``: constant coefficients, ratio ``1 + beta^2``."""
    b = repr(float(beta))
    return _spec(3, {"g11": "1", "g13": b, "g22": "1", "g33": f"1+{b}^2"}, f"flat shear (beta={beta})")


def warped_band(f: str = "1+0.1*xi") -> MetricSpec:
    """``d xi^2 + f(xi)^2 (dx^2 + dy^2)`` on ``T^2 x I``."""
    return _spec(3, {"g11": f"({f})^2", "g22": f"({f})^2", "g33": "1"}, f"warped f={f}")


def hyperbolic_band() -> MetricSpec:
    return _spec(3, {"g11": "exp(2*xi)", "g22": "exp(2*xi)", "g33": "1"}, "hyperbolic slab")


X_KINDS = ("sphere", "torus")


def x_axes(kind: str, n1: int, n2: int | None = None):
    if kind == "sphere":
        return sphere_pair(n1, n1 if n2 is None else n2)
    if kind == "torus":
        return periodic("x1", n1), periodic("x2", n1 if n2 is None else n2)
    raise ValueError(f"unknown X kind {kind!r}; expected one of {X_KINDS}")


def band_grid(kind: str, n1: int, n2: int | None = None, n_xi: int = 9) -> Grid:
    return Grid(x_axes(kind, n1, n2) + (interval("xi", n_xi),))


def torus_grid(counts) -> Grid:
    names = ["x1", "x2", "x3"]
    return Grid(tuple(periodic(names[k], n) for k, n in enumerate(counts)))
