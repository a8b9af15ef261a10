"""Analytic metric specifications and sampled metric fields."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import expr as ex
from .grid import Grid, GridError, AxisKind, diff, diff2, Axis


class MetricError(ValueError):
    """Invalid metric specification or non-positive-definite samples."""


def _key(i: int, j: int) -> str:
    return f"g{i + 1}{j + 1}"


@dataclass
class MetricSpec:
    """Upper-triangular component expressions of a metric; index ``i`` is grid axis ``i``."""

    dim: int
    components: dict[tuple[int, int], ex.Expr]
    name: str = ""

    def __post_init__(self):
        comps = {}
        for (i, j), e in self.components.items():
            if not (0 <= i < self.dim and 0 <= j < self.dim):
                raise MetricError(f"component ({i + 1},{j + 1}) out of range for dim {self.dim}")
            a, b = min(i, j), max(i, j)
            if (a, b) in comps:
                raise MetricError(f"component {_key(a, b)} given twice")
            comps[(a, b)] = ex.as_expr(e)
        for i in range(self.dim):
            if (i, i) not in comps:
                raise MetricError(f"missing diagonal component {_key(i, i)}")
            for j in range(i + 1, self.dim):
                comps.setdefault((i, j), ex.Num(0.0))
        self.components = comps

    def component(self, i: int, j: int) -> ex.Expr:
        return self.components[(min(i, j), max(i, j))]

    @classmethod
    def from_dict(cls, data: dict) -> "MetricSpec":
        unknown = set(data) - {"dim", "components", "name"}
        if unknown:
            raise MetricError(f"unknown metric keys: {sorted(unknown)}")
        try:
            dim = int(data["dim"])
            raw = data["components"]
        except KeyError as err:
            raise MetricError(f"metric is missing {err.args[0]!r}") from None
        comps = {}
        for key, src in raw.items():
            if len(key) != 3 or key[0] != "g" or not key[1:].isdigit():
                raise MetricError(f"bad component key {key!r}; expected g<i><j>")
            i, j = int(key[1]) - 1, int(key[2]) - 1
            try:
                comps[(i, j)] = ex.parse(str(src))
            except ex.ExprSyntaxError as err:
                raise MetricError(f"{key}: {err}") from None
        return cls(dim, comps, data.get("name", ""))

    @classmethod
    def from_json(cls, text: str) -> "MetricSpec":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {"dim": self.dim, "name": self.name,
                "components": {_key(i, j): ex.to_source(e) for (i, j), e in sorted(self.components.items())}}

    def scaled(self, factor: ex.Expr | str, name: str | None = None) -> "MetricSpec":
        """The metric ``factor * g`` as a new spec (used for conformal changes)."""
        f = ex.as_expr(factor)
        comps = {k: ex.BinOp("*", f, e) for k, e in self.components.items()}
        return MetricSpec(self.dim, comps, name or f"({ex.to_source(f)}) * {self.name}")


@dataclass
class MetricField:
    """Metric samples with first and second coordinate derivatives.

    ``dg[..., k, i, j] = d_k g_ij`` and ``ddg[..., k, l, i, j] = d_k d_l g_ij``.
    """

    grid: Grid
    g: np.ndarray
    dg: np.ndarray
    ddg: np.ndarray
    name: str = ""
    exact: bool = True
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        d = self.grid.dim
        s = self.grid.shape
        if self.g.shape != s + (d, d) or self.dg.shape != s + (d, d, d) or self.ddg.shape != s + (d,) * 4:
            raise MetricError("metric arrays do not match the grid")
        asym = np.max(np.abs(self.g - np.swapaxes(self.g, -1, -2)), initial=0.0)
        scale = max(np.max(np.abs(self.g)), 1.0)
        if asym > 1e-14 * scale:
            raise MetricError(f"metric is not symmetric (max asymmetry {asym:.3e})")
        if self.check:
            self.check_positive_definite()

    def check_positive_definite(self):
        d = self.grid.dim
        bad = np.zeros(self.grid.shape, dtype=bool)
        for k in range(1, d + 1):
            minor = np.real(np.linalg.det(self.g[..., :k, :k]))
            bad |= ~(minor > 0)
        if bad.any():
            mesh = self.grid.mesh()
            where = np.argwhere(bad)[:5]
            pts = [{n: float(mesh[n][tuple(w)]) for n in self.grid.names} for w in where]
            raise MetricError(f"metric is not positive definite at {int(bad.sum())} node(s), e.g. {pts}")

    @cached_property
    def ginv(self) -> np.ndarray:
        return np.linalg.inv(self.g)

    @cached_property
    def det(self) -> np.ndarray:
        return np.linalg.det(self.g)

    @property
    def volume_weight(self) -> np.ndarray:
        return np.sqrt(np.real(self.det))

    @cached_property
    def dginv(self) -> np.ndarray:
        """``d_k g^{ij}``, indexed ``[..., k, i, j]``."""
        return -np.einsum("...ia,...kab,...bj->...kij", self.ginv, self.dg, self.ginv)

    @cached_property
    def christoffel(self) -> np.ndarray:
        """``Gamma^k_ij`` indexed ``[..., k, i, j]``."""
        first = 0.5 * (np.einsum("...ijl->...lij", self.dg) + np.einsum("...jil->...lij", self.dg) - self.dg)
        return np.einsum("...kl,...lij->...kij", self.ginv, first)

    @cached_property
    def contracted_christoffel(self) -> np.ndarray:
        """``g^{ij} Gamma^k_ij``."""
        return np.einsum("...ij,...kij->...k", self.ginv, self.christoffel)

    # -- derived fields ----------------------------------------------------

    def restrict(self, axis: str, index: int) -> "MetricField":
        """Induced metric on the coordinate slice ``axis = node index``."""
        a = self.grid.index(axis)
        keep = [i for i in range(self.grid.dim) if i != a]

        def cut(arr, nidx):
            arr = np.take(arr, index, axis=a)
            for n in range(nidx):
                arr = np.take(arr, keep, axis=arr.ndim - nidx + n)
            return arr

        return MetricField(self.grid.drop(axis), cut(self.g, 2), cut(self.dg, 3), cut(self.ddg, 4),
                           name=f"{self.name}|{axis}[{index}]", exact=self.exact, check=False)

    def extend(self, axis: Axis) -> "MetricField":
        """Product metric ``g + d(axis)^2`` on the grid with one more axis."""
        grid = self.grid.with_axis(axis)
        d = self.grid.dim
        n = axis.count
        g = np.zeros(grid.shape + (d + 1, d + 1))
        g[..., :d, :d] = self.g[..., None, :, :]
        g[..., d, d] = 1.0
        dg = np.zeros(grid.shape + (d + 1,) * 3)
        dg[..., :d, :d, :d] = self.dg[..., None, :, :, :]
        ddg = np.zeros(grid.shape + (d + 1,) * 4)
        ddg[..., :d, :d, :d, :d] = self.ddg[..., None, :, :, :, :]
        del n
        return MetricField(grid, g, dg, ddg, name=f"{self.name}+d{axis.name}^2", exact=self.exact, check=False)

    def scaled_by_field(self, w: np.ndarray, neumann: bool = False) -> "MetricField":
        """``w * g`` where ``w`` is a sampled positive scalar differentiated on the grid."""
        w = np.asarray(w, dtype=float)
        if np.any(w <= 0):
            raise MetricError("conformal factor must be positive")
        d = self.grid.dim
        dw = np.stack([diff(self.grid, w, k, 1, neumann) for k in range(d)], axis=-1)
        ddw = np.zeros(self.grid.shape + (d, d))
        for k in range(d):
            for l in range(k, d):
                ddw[..., k, l] = ddw[..., l, k] = diff2(self.grid, w, k, l, neumann)
        g = w[..., None, None] * self.g
        dg = dw[..., :, None, None] * self.g[..., None, :, :] + w[..., None, None, None] * self.dg
        ddg = (ddw[..., :, :, None, None] * self.g[..., None, None, :, :]
               + dw[..., :, None, None, None] * self.dg[..., None, :, :, :]
               + dw[..., None, :, None, None] * self.dg[..., :, None, :, :]
               + w[..., None, None, None, None] * self.ddg)
        return MetricField(self.grid, g, dg, ddg, name=f"w*{self.name}", exact=False, check=False)

    @classmethod
    def from_samples(cls, grid: Grid, g: np.ndarray, name: str = "") -> "MetricField":
        """Metric whose derivative data come from grid stencils instead of dual numbers.

        Component-wise differencing is only meaningful in charts without pole
        identifications, so sphere axes are refused.
        """
        if any(a.kind is AxisKind.SPHERE_CHART for a in grid.axes):
            raise GridError("finite-difference metric derivatives are not supported on sphere charts")
        d = grid.dim
        dg = np.zeros(grid.shape + (d, d, d))
        ddg = np.zeros(grid.shape + (d,) * 4)
        for i in range(d):
            for j in range(i, d):
                comp = g[..., i, j]
                for k in range(d):
                    dg[..., k, i, j] = dg[..., k, j, i] = diff(grid, comp, k, 1)
                    for l in range(k, d):
                        v = diff2(grid, comp, k, l)
                        for a, b in ((k, l), (l, k)):
                            ddg[..., a, b, i, j] = ddg[..., a, b, j, i] = v
        return cls(grid, np.array(g, dtype=float), dg, ddg, name=name, exact=False)


def sample(spec: MetricSpec, grid: Grid, offset: dict | None = None, check: bool = True) -> MetricField:
    """Sample components and their exact first and second derivatives on ``grid``.

    ``offset`` shifts the coordinates (a complex shift gives complex-step
    derivatives of any downstream quantity).
    """
    if spec.dim != grid.dim:
        raise MetricError(f"metric dimension {spec.dim} does not match grid dimension {grid.dim}")
    mesh = grid.mesh()
    if offset:
        mesh = {k: v + offset.get(k, 0.0) for k, v in mesh.items()}
    d = grid.dim
    dtype = complex if offset and any(np.iscomplexobj(np.asarray(v)) for v in offset.values()) else float
    g = np.zeros(grid.shape + (d, d), dtype=dtype)
    dg = np.zeros(grid.shape + (d, d, d), dtype=dtype)
    ddg = np.zeros(grid.shape + (d,) * 4, dtype=dtype)
    for (i, j), e in spec.components.items():
        try:
            v, gr, he = ex.derivatives(e, mesh, grid.names)
        except ex.DomainError as err:
            raise MetricError(f"{_key(i, j)}: {err}") from None
        for a, b in {(i, j), (j, i)}:
            g[..., a, b] = v
            dg[..., :, a, b] = gr
            ddg[..., :, :, a, b] = he
    return MetricField(grid, g, dg, ddg, name=spec.name, exact=True, check=check)
