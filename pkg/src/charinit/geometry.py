"""Grids, field containers and finite-difference calculus on a null surface.

Arrays follow one layout convention throughout the package: tensor
component axes first, then the generator axis, then the ``k = n - 1``
periodic angular axes. A symmetric 2-tensor sampled on a grid therefore
has shape ``(k, k, N_gen, N_ang, ..., N_ang)`` when stored in full.
"""

from __future__ import annotations

import enum
import functools
from fractions import Fraction
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

STENCIL_WIDTH = 5
CONDITION_CAP = 1e12


class SurfaceId(str, enum.Enum):
    I0 = "I0"
    I1 = "I1"

    @property
    def other(self) -> "SurfaceId":
        return SurfaceId.I1 if self is SurfaceId.I0 else SurfaceId.I0

    @property
    def generator_name(self) -> str:
        # I0 = {y0 = 0} is ruled by y1, I1 = {y1 = 0} by y0
        return "y1" if self is SurfaceId.I0 else "y0"


class GridError(ValueError):
    pass


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class CharSurfaceGrid:
    """Uniform discretization of one null hypersurface.

    The generator coordinate runs over ``[0, L]`` with ``N_gen`` nodes,
    node 0 being the corner. Each of the ``n - 1`` angular axes is periodic
    with ``N_ang`` nodes.
    """

    surface_id: SurfaceId
    n: int
    L: float
    N_gen: int
    N_ang: int
    angular_extent: tuple[float, ...]
    fd_order: int = 4

    @property
    def k(self) -> int:
        return self.n - 1

    @property
    def h_gen(self) -> float:
        return self.L / (self.N_gen - 1)

    @property
    def h_ang(self) -> tuple[float, ...]:
        return tuple(P / self.N_ang for P in self.angular_extent)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N_gen,) + (self.N_ang,) * self.k

    @property
    def angular_shape(self) -> tuple[int, ...]:
        return (self.N_ang,) * self.k

    def generator_coords(self) -> np.ndarray:
        return np.linspace(0.0, self.L, self.N_gen)

    def angular_coords(self) -> list[np.ndarray]:
        """Open-ended periodic node coordinates, one 1-D array per axis."""
        return [np.arange(self.N_ang) * h for h in self.h_ang]

    def angular_mesh(self) -> list[np.ndarray]:
        return list(np.meshgrid(*self.angular_coords(), indexing="ij"))

    def truncated(self, n_keep: int) -> "CharSurfaceGrid":
        """The same grid restricted to its first ``n_keep`` generator nodes."""
        if n_keep < STENCIL_WIDTH:
            raise GridError(f"cannot truncate below the stencil width ({n_keep} < {STENCIL_WIDTH})")
        return CharSurfaceGrid(
            self.surface_id, self.n, self.h_gen * (n_keep - 1), n_keep,
            self.N_ang, self.angular_extent, self.fd_order,
        )


def build_surface_grid(L: float, N_gen: int, N_ang: int, n: int = 3,
                       surface_id: SurfaceId | str = SurfaceId.I0,
                       angular_extent: float | tuple[float, ...] = 1.0) -> CharSurfaceGrid:
    if n < 3:
        raise GridError(f"spacetime dimension parameter n must be >= 3, got {n}")
    if not L > 0:
        raise GridError(f"generator extent must be positive, got L={L}")
    if N_gen < STENCIL_WIDTH or N_ang < STENCIL_WIDTH:
        raise GridError(
            f"resolution below stencil width: N_gen={N_gen}, N_ang={N_ang} "
            f"(need >= {STENCIL_WIDTH})")
    if np.isscalar(angular_extent):
        angular_extent = (float(angular_extent),) * (n - 1)
    extent = tuple(float(P) for P in angular_extent)
    if len(extent) != n - 1 or any(not P > 0 for P in extent):
        raise GridError(f"angular extent must hold {n - 1} positive periods, got {angular_extent}")
    return CharSurfaceGrid(SurfaceId(surface_id), n, float(L), N_gen, N_ang, extent)


def sym_pairs(k: int) -> list[tuple[int, int]]:
    """Upper-triangle index pairs in storage order."""
    return list(combinations_with_replacement(range(k), 2))


@dataclass
class ScalarField:
    grid: CharSurfaceGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"scalar field shape {self.values.shape} != grid shape {self.grid.shape}")


@dataclass
class AngularTensorField:
    """Rank-1 or symmetric rank-2 angular tensor sampled on a grid.

    Symmetric rank-2 fields keep only the upper triangle, ordered as
    :func:`sym_pairs`.
    """

    grid: CharSurfaceGrid
    rank: int
    components: np.ndarray
    symmetric: bool = field(default=True)

    def __post_init__(self):
        k = self.grid.k
        ncomp = k if self.rank == 1 else len(sym_pairs(k))
        self.components = np.asarray(self.components, dtype=float)
        if self.components.shape != (ncomp,) + self.grid.shape:
            raise ValueError(
                f"rank-{self.rank} field expects {(ncomp,) + self.grid.shape}, got {self.components.shape}")

    @classmethod
    def from_full(cls, grid: CharSurfaceGrid, full: np.ndarray) -> "AngularTensorField":
        full = np.asarray(full, dtype=float)
        if full.ndim == len(grid.shape) + 1:
            return cls(grid, 1, full)
        return cls(grid, 2, np.stack([full[a, b] for a, b in sym_pairs(grid.k)]))

    def full(self) -> np.ndarray:
        if self.rank == 1:
            return self.components
        k = self.grid.k
        out = np.empty((k, k) + self.grid.shape)
        for c, (a, b) in enumerate(sym_pairs(k)):
            out[a, b] = self.components[c]
            out[b, a] = self.components[c]
        return out

    def labels(self, name: str) -> list[str]:
        idx = range(2, self.grid.n + 1)
        if self.rank == 1:
            return [f"{name}_{a}" for a in idx]
        return [f"{name}_{a + 2}{b + 2}" for a, b in sym_pairs(self.grid.k)]


# -- finite differences -------------------------------------------------------
#
# Fourth order everywhere. Angular axes are periodic (np.roll); the generator
# axis uses one-sided stencils on the two outermost nodes at each end.

_D1_CENTRAL = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_D2_CENTRAL = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
_D1_EDGE = (
    np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0,
    np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0,
)
_D1_EDGE_WIDE = (
    np.array([-137.0, 300.0, -300.0, 200.0, -75.0, 12.0]) / 60.0,
    np.array([-12.0, -65.0, 120.0, -60.0, 20.0, -3.0]) / 60.0,
)
_D2_EDGE = (
    np.array([45.0, -154.0, 214.0, -156.0, 61.0, -10.0]) / 12.0,
    np.array([10.0, -15.0, -4.0, 14.0, -6.0, 1.0]) / 12.0,
)


def periodic_derivative(values: np.ndarray, h: float, axis: int, order: int = 1) -> np.ndarray:
    stencil = _D1_CENTRAL if order == 1 else _D2_CENTRAL
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    out = np.zeros_like(values, dtype=float)
    for offset, c in zip(range(-2, 3), stencil):
        if c:
            out += c * np.roll(values, -offset, axis=axis)
    return out / h**order


def generator_derivative(values: np.ndarray, h: float, axis: int, order: int = 1,
                         wide_edges: bool = False, accuracy: int = 4) -> np.ndarray:
    """Derivative along a non-periodic axis, fourth order by default.

    ``wide_edges`` swaps the 5-point first-derivative edge closures for
    6-point (fifth-order) ones. ``accuracy=6`` selects sixth-order central
    stencils with one-sided closures of sixth order or better.
    """
    if accuracy == 6:
        return _generator_derivative6(values, h, axis, order)
    if accuracy != 4:
        raise ValueError("accuracy must be 4 or 6")
    v = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    N = v.shape[0]
    if order == 1 and wide_edges:
        central, edge, width = _D1_CENTRAL, _D1_EDGE_WIDE, 6
    elif order == 1:
        central, edge, width = _D1_CENTRAL, _D1_EDGE, 5
    elif order == 2:
        central, edge, width = _D2_CENTRAL, _D2_EDGE, 6
    else:
        raise ValueError("order must be 1 or 2")
    if N < width:
        raise GridError(f"need at least {width} generator nodes for order-{order} stencils, got {N}")
    out = np.empty_like(v)
    out[2:N - 2] = sum(c * v[j:N - 4 + j] for j, c in enumerate(central) if c)
    sign = 1.0 if order == 2 else -1.0
    for i, w in enumerate(edge):
        out[i] = np.tensordot(w, v[:width], axes=1)
        out[N - 1 - i] = sign * np.tensordot(w, v[N - width:][::-1], axes=1)
    return np.moveaxis(out / h**order, 0, axis)


@functools.lru_cache(maxsize=None)
def fd_weights(offsets: tuple[int, ...], order: int) -> np.ndarray:
    """Weights of the maximal-accuracy stencil on integer ``offsets``.

    Fornberg's recursion in exact rational arithmetic, so the weights are
    correctly rounded (a float Vandermonde solve loses several digits on
    wide one-sided stencils).
    """
    x = [Fraction(o) for o in offsets]
    m = len(x)
    c = [[Fraction(0)] * (order + 1) for _ in range(m)]
    c[0][0] = Fraction(1)
    c1 = Fraction(1)
    for i in range(1, m):
        c2 = Fraction(1)
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            for d in range(min(i, order), -1, -1):
                prev_i = c[i - 1][d - 1] if d else Fraction(0)
                if j == i - 1:
                    c[i][d] = c1 * (d * prev_i - x[i - 1] * c[i - 1][d]) / c2
                c[j][d] = (x[i] * c[j][d] - (d * c[j][d - 1] if d else 0)) / c3
        c1 = c2
    return np.array([float(row[order]) for row in c])


def _generator_derivative6(values, h, axis, order):
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    v = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    N = v.shape[0]
    # first-derivative closures run two points wider than the minimum: the
    # extra accuracy keeps the boundary error below the interior one. Second
    # derivatives keep the minimal width, whose edge weights amplify roundoff less.
    need = 7 if order == 1 else 8
    if N < need:
        raise GridError(f"need at least {need} generator nodes for sixth-order stencils, got {N}")
    width = min(N, need + 2) if order == 1 else need
    out = np.empty_like(v)
    central = fd_weights(tuple(range(-3, 4)), order)
    out[3:N - 3] = sum(c * v[j:N - 6 + j] for j, c in enumerate(central) if c)
    sign = 1.0 if order == 2 else -1.0
    for i in range(3):
        w = fd_weights(tuple(j - i for j in range(width)), order)
        out[i] = np.tensordot(w, v[:width], axes=1)
        out[N - 1 - i] = sign * np.tensordot(w, v[N - width:][::-1], axes=1)
    return np.moveaxis(out / h**order, 0, axis)


def fd_generator(values: np.ndarray, grid: CharSurfaceGrid, order: int = 1,
                 h: float | None = None, wide_edges: bool = False,
                 accuracy: int = 4) -> np.ndarray:
    """d/d(generator) of an array laid out per the module convention.

    ``h`` overrides the grid spacing, for data sampled on a refined
    generator grid with the same angular layout.
    """
    axis = values.ndim - grid.k - 1
    return generator_derivative(values, grid.h_gen if h is None else h, axis, order, wide_edges,
                                accuracy)


def fd_angular(values: np.ndarray, grid: CharSurfaceGrid, a: int, order: int = 1) -> np.ndarray:
    """Periodic d/dy^a (``a`` counts angular axes from 0, i.e. y^{a+2})."""
    return periodic_derivative(values, grid.h_ang[a], values.ndim - grid.k + a, order)


def angular_gradient(values: np.ndarray, grid: CharSurfaceGrid) -> np.ndarray:
    return np.stack([fd_angular(values, grid, a) for a in range(grid.k)])


def angular_hessian(values: np.ndarray, grid: CharSurfaceGrid) -> np.ndarray:
    """Second angular derivatives; compact stencil on the diagonal."""
    k = grid.k
    out = np.empty((k, k) + values.shape)
    grad = [fd_angular(values, grid, a) for a in range(k)]
    for a in range(k):
        out[a, a] = fd_angular(values, grid, a, order=2)
        for b in range(a + 1, k):
            out[a, b] = out[b, a] = fd_angular(grad[a], grid, b)
    return out


def angular_divergence(values: np.ndarray, grid: CharSurfaceGrid) -> np.ndarray:
    """Sum over c of d_c X[c, ...]."""
    return sum(fd_angular(values[c], grid, c) for c in range(grid.k))


# -- metric algebra ----------------------------------------------------------

def _matrix_last(full: np.ndarray) -> np.ndarray:
    return np.moveaxis(np.moveaxis(full, 0, -1), 0, -1)


def _matrix_first(m: np.ndarray) -> np.ndarray:
    return np.moveaxis(np.moveaxis(m, -1, 0), -1, 0)


def is_positive_definite(full: np.ndarray) -> np.ndarray:
    """Leading-principal-minor test, node-wise; returns a boolean array."""
    m = _matrix_last(full)
    ok = np.ones(m.shape[:-2], dtype=bool)
    for j in range(1, m.shape[-1] + 1):
        ok &= np.linalg.det(m[..., :j, :j]) > 0
    return ok


def invert_angular_metric(full: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse and determinant of a node-wise SPD angular metric.

    Returns ``(inverse, det)``; raises :class:`MetricError` on loss of
    positive definiteness or when the condition number exceeds the cap.
    """
    m = _matrix_last(np.asarray(full, dtype=float))
    if not is_positive_definite(full).all():
        raise MetricError("angular metric is not positive definite at every node")
    cond = np.linalg.cond(m)
    if not np.all(cond < CONDITION_CAP):
        raise MetricError(f"angular metric singular: condition number {cond.max():.3e}")
    inv = np.linalg.inv(m)
    inv = 0.5 * (inv + np.swapaxes(inv, -1, -2))
    return _matrix_first(inv), np.linalg.det(m)


def metric_derivatives(full: np.ndarray, grid: CharSurfaceGrid) -> np.ndarray:
    """``dT[c, a, b] = d_c T_ab`` by periodic angular differences."""
    return np.stack([fd_angular(full, grid, c) for c in range(grid.k)])


def christoffel_angular(inverse: np.ndarray, dmetric: np.ndarray) -> np.ndarray:
    """``G[c, a, b] = 1/2 T^{cd} (d_a T_bd + d_b T_ad - d_d T_ab)``."""
    lowered = (np.einsum("abd...->dab...", dmetric)
               + np.einsum("bad...->dab...", dmetric)
               - dmetric)
    return 0.5 * np.einsum("cd...,dab...->cab...", inverse, lowered)
