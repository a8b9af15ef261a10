"""Structured product grids and finite-difference stencils.

A grid is an ordered product of one-dimensional axes.  Each axis is one of

* ``periodic``  -- nodes ``start + k*L/N``; node ``N`` is node ``0``.
* ``interval``  -- nodes ``start + k*L/(N-1)``, both endpoints included.
* ``sphere``    -- colatitude on ``(0, pi)`` with half-cell staggering,
  ``theta_k = (k + 1/2) * pi / N``.  It is paired with a periodic longitude
  axis (``partner``).  Stencils that step across a pole land on the node of
  the same ring on the opposite meridian (longitude shifted by ``pi``), so
  the partner count must be even.

All derivative operators are second order.  They are assembled once per
``(grid, axis, order)`` as sparse matrices acting on C-ordered flattened
node arrays and cached.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

MIN_STENCIL_COUNT = 8


class GridError(ValueError):
    """Invalid grid construction or stencil request."""


class AxisKind(str, enum.Enum):
    PERIODIC = "periodic"
    INTERVAL = "interval"
    SPHERE_CHART = "sphere"


@dataclass(frozen=True)
class Axis:
    name: str
    kind: AxisKind
    count: int
    length: float | None = None
    start: float = 0.0
    partner: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", AxisKind(self.kind))
        if self.count < 2:
            raise GridError(f"axis {self.name!r}: count must be >= 2, got {self.count}")
        if self.length is None:
            default = {AxisKind.PERIODIC: 2 * math.pi, AxisKind.INTERVAL: 1.0,
                       AxisKind.SPHERE_CHART: math.pi}[self.kind]
            object.__setattr__(self, "length", default)
        if self.kind is AxisKind.SPHERE_CHART:
            if not math.isclose(self.length, math.pi) or self.start != 0.0:
                raise GridError("sphere colatitude axis always spans (0, pi)")
            if self.partner is None:
                object.__setattr__(self, "partner", "x2")
        if self.length <= 0:
            raise GridError(f"axis {self.name!r}: length must be positive")

    @property
    def spacing(self) -> float:
        if self.kind is AxisKind.INTERVAL:
            return self.length / (self.count - 1)
        return self.length / self.count

    @property
    def coords(self) -> np.ndarray:
        k = np.arange(self.count, dtype=float)
        if self.kind is AxisKind.SPHERE_CHART:
            return (k + 0.5) * self.spacing
        return self.start + k * self.spacing

    @property
    def cell_widths(self) -> np.ndarray:
        w = np.full(self.count, self.spacing)
        if self.kind is AxisKind.INTERVAL:
            w[0] = w[-1] = 0.5 * self.spacing
        return w


def periodic(name: str, count: int, length: float = 2 * math.pi, start: float = 0.0) -> Axis:
    return Axis(name, AxisKind.PERIODIC, count, length, start)


def interval(name: str, count: int, length: float = 1.0, start: float = 0.0) -> Axis:
    return Axis(name, AxisKind.INTERVAL, count, length, start)


def sphere_pair(n_theta: int, n_phi: int | None = None,
                names: tuple[str, str] = ("x1", "x2")) -> tuple[Axis, Axis]:
    """Colatitude/longitude axes for a unit-sphere chart."""
    n_phi = 2 * n_theta if n_phi is None else n_phi
    theta = Axis(names[0], AxisKind.SPHERE_CHART, n_theta, partner=names[1])
    return theta, periodic(names[1], n_phi)


@dataclass(frozen=True)
class Grid:
    axes: tuple[Axis, ...]

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple(self.axes))
        if not 1 <= len(self.axes) <= 4:
            raise GridError(f"grid dimension must be in 1..4, got {len(self.axes)}")
        names = [a.name for a in self.axes]
        if len(set(names)) != len(names):
            raise GridError(f"duplicate axis names: {names}")
        for a in self.axes:
            if a.kind is AxisKind.SPHERE_CHART:
                if a.partner not in names:
                    raise GridError(f"sphere axis {a.name!r} needs longitude partner {a.partner!r}")
                p = self.axes[names.index(a.partner)]
                if p.kind is not AxisKind.PERIODIC or p.count % 2:
                    raise GridError("sphere longitude partner must be periodic with even count")
                if not math.isclose(p.length, 2 * math.pi):
                    raise GridError("sphere longitude partner must have length 2*pi")

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(a.count for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.axes)

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(a.spacing for a in self.axes)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise GridError(f"grid has no axis {name!r} (axes: {self.names})") from None

    def has(self, name: str) -> bool:
        return name in self.names

    def axis(self, name: str) -> Axis:
        return self.axes[self.index(name)]

    def mesh(self) -> dict[str, np.ndarray]:
        """Coordinate arrays broadcast to the full grid shape, keyed by axis name."""
        grids = np.meshgrid(*[a.coords for a in self.axes], indexing="ij")
        return dict(zip(self.names, grids))

    def cell_volume(self) -> np.ndarray:
        vols = np.ones(self.shape)
        for i, a in enumerate(self.axes):
            shape = [1] * self.dim
            shape[i] = a.count
            vols = vols * a.cell_widths.reshape(shape)
        return vols

    def drop(self, name: str) -> "Grid":
        return Grid(tuple(a for a in self.axes if a.name != name))

    def replace(self, axis: Axis) -> "Grid":
        i = self.index(axis.name)
        axes = list(self.axes)
        axes[i] = axis
        return Grid(tuple(axes))

    def with_axis(self, axis: Axis) -> "Grid":
        return Grid(self.axes + (axis,))

    def refined(self, counts: dict[str, int]) -> "Grid":
        axes = []
        for a in self.axes:
            c = counts.get(a.name, a.count)
            axes.append(Axis(a.name, a.kind, c, a.length, a.start, a.partner))
        return Grid(tuple(axes))

    def max_spacing(self, names=None) -> float:
        names = self.names if names is None else names
        return max(self.axis(n).spacing for n in names)


@dataclass
class Field:
    """Samples of a scalar or tensor quantity, one value per grid node.

    ``values`` has shape ``grid.shape + (grid.dim,) * rank``.
    """

    grid: Grid
    values: np.ndarray
    name: str = ""
    rank: int = field(init=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        nd = self.grid.dim
        if self.values.shape[:nd] != self.grid.shape:
            raise GridError(f"field shape {self.values.shape} does not match grid {self.grid.shape}")
        self.rank = self.values.ndim - nd


# --------------------------------------------------------------------------
# stencils

def _axis_stencil(axis: Axis, order: int, neumann: bool):
    """Per-node (offsets, weights), each of shape (count, S)."""
    n, h = axis.count, axis.spacing
    if order == 1:
        central = ([-1, 1], [-0.5 / h, 0.5 / h])
    elif order == 2:
        central = ([-1, 0, 1], [1 / h**2, -2 / h**2, 1 / h**2])
    else:
        raise GridError(f"derivative order must be 1 or 2, got {order}")
    width = 4
    offs = np.zeros((n, width), dtype=np.int64)
    wts = np.zeros((n, width))
    o, w = central
    offs[:, : len(o)] = o
    wts[:, : len(w)] = w
    if axis.kind is not AxisKind.INTERVAL:
        return offs, wts
    offs[[0, -1]] = 0
    wts[[0, -1]] = 0.0
    if neumann:
        # mirror ghost u_{-1} = u_{1}
        if order == 2:
            offs[0, :2], wts[0, :2] = [0, 1], [-2 / h**2, 2 / h**2]
            offs[-1, :2], wts[-1, :2] = [0, -1], [-2 / h**2, 2 / h**2]
        return offs, wts
    if order == 1:
        offs[0, :3], wts[0, :3] = [0, 1, 2], [-1.5 / h, 2.0 / h, -0.5 / h]
        offs[-1, :3], wts[-1, :3] = [0, -1, -2], [1.5 / h, -2.0 / h, 0.5 / h]
    else:
        stencil = np.array([2.0, -5.0, 4.0, -1.0]) / h**2
        offs[0], wts[0] = [0, 1, 2, 3], stencil
        offs[-1], wts[-1] = [0, -1, -2, -3], stencil
    return offs, wts


@lru_cache(maxsize=256)
def derivative_matrix(grid: Grid, axis: int, order: int, neumann: bool = False) -> sp.csr_matrix:
    """Sparse matrix of the second-order stencil for d^order/dx_axis^order."""
    if not 0 <= axis < grid.dim:
        raise GridError(f"axis {axis} out of range for a {grid.dim}-dimensional grid")
    ax = grid.axes[axis]
    if ax.count < MIN_STENCIL_COUNT:
        raise GridError(f"axis {ax.name!r} has {ax.count} nodes; stencils need >= {MIN_STENCIL_COUNT}")
    offs, wts = _axis_stencil(ax, order, neumann)
    idx = np.indices(grid.shape).reshape(grid.dim, -1)
    rows = np.arange(grid.size)
    k = idx[axis]
    all_r, all_c, all_w = [], [], []
    for s in range(offs.shape[1]):
        w = wts[k, s]
        keep = w != 0.0
        if not keep.any():
            continue
        nb = idx[:, keep].copy()
        kk = k[keep] + offs[k[keep], s]
        if ax.kind is AxisKind.PERIODIC:
            kk %= ax.count
        elif ax.kind is AxisKind.SPHERE_CHART:
            p = grid.index(ax.partner)
            crossed = (kk < 0) | (kk >= ax.count)
            kk = np.where(kk < 0, -1 - kk, kk)
            kk = np.where(kk >= ax.count, 2 * ax.count - 1 - kk, kk)
            npar = grid.axes[p].count
            nb[p] = np.where(crossed, (nb[p] + npar // 2) % npar, nb[p])
        nb[axis] = kk
        all_r.append(rows[keep])
        all_c.append(np.ravel_multi_index(tuple(nb), grid.shape))
        all_w.append(w[keep])
    mat = sp.coo_matrix((np.concatenate(all_w), (np.concatenate(all_r), np.concatenate(all_c))),
                        shape=(grid.size, grid.size)).tocsr()
    mat.sum_duplicates()
    mat.eliminate_zeros()
    return mat


@lru_cache(maxsize=256)
def mixed_derivative_matrix(grid: Grid, i: int, j: int, neumann: bool = False) -> sp.csr_matrix:
    """d^2/dx_i dx_j as a product of first-derivative stencils (i != j).

    A colatitude operator is always applied last: the pole-crossing rule is
    valid for scalars and for derivatives along other axes, not for the
    colatitude derivative itself, which changes sign across the pole.
    """
    if i == j:
        return derivative_matrix(grid, i, 2, neumann)
    if grid.axes[j].kind is AxisKind.SPHERE_CHART:
        i, j = j, i
    return (derivative_matrix(grid, i, 1, neumann) @ derivative_matrix(grid, j, 1, neumann)).tocsr()


def diff(grid: Grid, values: np.ndarray, axis: int, order: int = 1, neumann: bool = False) -> np.ndarray:
    """Array-level derivative along one axis."""
    d = derivative_matrix(grid, axis, order, neumann)
    return (d @ np.asarray(values, dtype=float).ravel()).reshape(grid.shape)


def diff2(grid: Grid, values: np.ndarray, i: int, j: int, neumann: bool = False) -> np.ndarray:
    d = mixed_derivative_matrix(grid, i, j, neumann)
    return (d @ np.asarray(values, dtype=float).ravel()).reshape(grid.shape)


def gradient(grid: Grid, values: np.ndarray, skip: tuple[str, ...] = ()) -> np.ndarray:
    """Stack of first derivatives, shape grid.shape + (dim,).  Skipped axes give 0."""
    out = np.zeros(grid.shape + (grid.dim,))
    for k, name in enumerate(grid.names):
        if name not in skip:
            out[..., k] = diff(grid, values, k, 1)
    return out


def hessian(grid: Grid, values: np.ndarray, skip: tuple[str, ...] = ()) -> np.ndarray:
    """Coordinate second derivatives, shape grid.shape + (dim, dim)."""
    d = grid.dim
    out = np.zeros(grid.shape + (d, d))
    for i in range(d):
        for j in range(i, d):
            if grid.names[i] in skip or grid.names[j] in skip:
                continue
            out[..., i, j] = out[..., j, i] = diff2(grid, values, i, j)
    return out


def partial_derivative(f: Field, axis: int, order: int = 1) -> Field:
    if f.rank != 0:
        raise GridError("partial_derivative acts on scalar fields")
    return Field(f.grid, diff(f.grid, f.values, axis, order))


# --------------------------------------------------------------------------
# norms

def sup_norm(f: Field | np.ndarray) -> float:
    values = f.values if isinstance(f, Field) else np.asarray(f)
    return float(np.max(np.abs(values)))


def lp_norm(f: Field, p: float, volume_weight: Field | np.ndarray) -> float:
    """Discrete L^p norm: sum |f|^p * cell volume * sqrt(det g), to the 1/p."""
    if p < 1:
        raise GridError(f"p must be >= 1, got {p}")
    weight = volume_weight.values if isinstance(volume_weight, Field) else np.asarray(volume_weight)
    if np.any(weight <= 0):
        raise GridError("volume weight must be strictly positive (invalid metric)")
    integrand = np.abs(f.values) ** p * weight * f.grid.cell_volume()
    return float(np.sum(integrand) ** (1.0 / p))
