"""Uniform tensor grids, subdomain masks and the discrete norms.

Everything downstream (solvers, weighted-inequality audits, reconstruction)
lives on a uniform space-time grid over an interval or a rectangle.  The
observation time ``theta`` is snapped to a time node at construction, because
all time-anchored transforms integrate from it.  Quadrature is composite
trapezoidal throughout, matching the second-order spatial discretization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class GridMismatchError(ValueError):
    """A field does not live on the grid it is being evaluated against."""


class StencilError(ValueError):
    """A region or window is too thin for the finite-difference stencil."""


def _as_axis_tuple(value, dim, name):
    if np.isscalar(value):
        return (value,) * dim
    value = tuple(value)
    if len(value) != dim:
        raise ValueError(f"{name} must have one entry per axis, got {value}")
    return value


@dataclass(frozen=True)
class Grid:
    """Uniform space-time grid on a 1D interval or a 2D rectangle.

    Parameters
    ----------
    dim : 1 or 2
    extent : (lo, hi) per axis; a single pair is accepted in 1D.
    nx : points per axis (>= 8).
    T : final time.
    nt : number of time steps; there are ``nt + 1`` time nodes.
    theta : observation time, strictly inside (0, T); snapped to the
        nearest time node.
    """

    dim: int
    extent: tuple
    nx: tuple
    T: float
    nt: int
    theta: float

    def __init__(self, dim, extent, nx, T, nt, theta):
        if dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {dim}")
        if dim == 1 and len(extent) == 2 and np.isscalar(extent[0]):
            extent = (tuple(extent),)
        extent = tuple(tuple(map(float, ab)) for ab in extent)
        if len(extent) != dim:
            raise ValueError(f"extent needs {dim} axis bounds, got {extent}")
        nx = _as_axis_tuple(nx, dim, "nx")
        for n in nx:
            if n < 8:
                raise ValueError(f"nx must be >= 8 per axis, got {nx}")
        for lo, hi in extent:
            if not hi > lo:
                raise ValueError(f"empty extent {extent}")
        if nt < 8:
            raise ValueError(f"nt must be >= 8, got {nt}")
        if not 0.0 < theta < T:
            raise ValueError(f"theta must lie strictly inside (0, {T})")
        dt = T / nt
        k_theta = int(round(theta / dt))
        k_theta = min(max(k_theta, 1), nt - 1)
        object.__setattr__(self, "dim", dim)
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "nx", tuple(int(n) for n in nx))
        object.__setattr__(self, "T", float(T))
        object.__setattr__(self, "nt", int(nt))
        object.__setattr__(self, "theta", k_theta * dt)

    @property
    def shape(self):
        """Spatial shape, axis order as given in ``extent``."""
        return self.nx

    @property
    def dx(self):
        return tuple((hi - lo) / (n - 1) for (lo, hi), n in zip(self.extent, self.nx))

    @property
    def dt(self):
        return self.T / self.nt

    @property
    def k_theta(self):
        return int(round(self.theta / self.dt))

    @property
    def axes(self):
        return tuple(
            np.linspace(lo, hi, n) for (lo, hi), n in zip(self.extent, self.nx)
        )

    @property
    def t_nodes(self):
        return np.linspace(0.0, self.T, self.nt + 1)

    def meshgrid(self):
        return np.meshgrid(*self.axes, indexing="ij")

    @property
    def n_space(self):
        return int(np.prod(self.nx))

    def interior_slices(self):
        return tuple(slice(1, n - 1) for n in self.nx)

    def boundary_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        for ax in range(self.dim):
            idx_lo = [slice(None)] * self.dim
            idx_lo[ax] = 0
            idx_hi = [slice(None)] * self.dim
            idx_hi[ax] = self.nx[ax] - 1
            mask[tuple(idx_lo)] = True
            mask[tuple(idx_hi)] = True
        return mask

    def time_index(self, t):
        k = int(round(t / self.dt))
        if not 0 <= k <= self.nt:
            raise ValueError(f"time {t} outside [0, {self.T}]")
        return k


@dataclass
class SpaceTimeField:
    """Scalar field sampled on every (time node, spatial node) of a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expect = (self.grid.nt + 1,) + self.grid.shape
        if self.values.shape != expect:
            raise GridMismatchError(
                f"field shape {self.values.shape} does not match grid {expect}"
            )

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.nt + 1,) + grid.shape))

    @classmethod
    def from_function(cls, grid, fn):
        """Sample ``fn(t, *coords)`` on the grid (vectorized over space)."""
        mesh = grid.meshgrid()
        vals = np.empty((grid.nt + 1,) + grid.shape)
        for k, t in enumerate(grid.t_nodes):
            vals[k] = fn(t, *mesh)
        return cls(grid, vals)

    def at_theta(self):
        return self.values[self.grid.k_theta].copy()

    def copy(self):
        return SpaceTimeField(self.grid, self.values.copy())

    def __add__(self, other):
        return SpaceTimeField(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return SpaceTimeField(self.grid, self.values - _vals(other))

    def __mul__(self, scalar):
        return SpaceTimeField(self.grid, self.values * scalar)

    __rmul__ = __mul__


def _vals(x):
    return x.values if isinstance(x, SpaceTimeField) else x


@dataclass
class SubdomainMask:
    """Boolean spatial mask with the boundary portion gamma = bd(omega) ∩ bd(Omega).

    ``gamma`` holds spatial node indices (tuples) lying on the domain boundary
    inside the closure of the subdomain.
    """

    name: str
    indicator: np.ndarray
    gamma: list = field(default_factory=list)

    def __post_init__(self):
        self.indicator = np.asarray(self.indicator, dtype=bool)
        self.gamma = [tuple(int(i) for i in np.atleast_1d(g)) for g in self.gamma]

    @property
    def is_empty(self):
        return not self.indicator.any()

    def contains(self, other):
        """True if ``other``'s nodes are a subset of this mask's nodes."""
        return bool(np.all(self.indicator | ~other.indicator))

    def gamma_normals(self, grid):
        """Outward unit normals of Omega at the gamma nodes, shape (len(gamma), dim)."""
        normals = np.zeros((len(self.gamma), grid.dim))
        for row, idx in enumerate(self.gamma):
            for ax in range(grid.dim):
                if idx[ax] == 0:
                    normals[row, ax] = -1.0
                elif idx[ax] == grid.nx[ax] - 1:
                    normals[row, ax] = 1.0
            norm = np.linalg.norm(normals[row])
            if norm == 0.0:
                raise ValueError(f"gamma node {idx} is not on the domain boundary")
            normals[row] /= norm
        return normals


def interval_mask(grid, lo, hi, name="omega", gamma_edge=None):
    """Mask of an interval (1D) or of a box given per-axis bounds (2D).

    ``lo``/``hi`` are scalars in 1D or per-axis sequences in 2D.  Nodes with
    lo <= x <= hi on every axis belong to the mask; gamma collects the domain
    boundary nodes contained in it.  ``gamma_edge`` = (axis, side) with side
    in {-1, +1} keeps only the gamma nodes on that boundary edge (a transport
    data boundary must be a single edge).
    """
    lo = _as_axis_tuple(lo, grid.dim, "lo")
    hi = _as_axis_tuple(hi, grid.dim, "hi")
    mesh = grid.meshgrid()
    ind = np.ones(grid.shape, dtype=bool)
    eps = 1e-12
    for ax in range(grid.dim):
        ind &= (mesh[ax] >= lo[ax] - eps) & (mesh[ax] <= hi[ax] + eps)
    return mask_from_indicator(grid, ind, name, gamma_edge)


def mask_from_indicator(grid, indicator, name="omega", gamma_edge=None):
    indicator = np.asarray(indicator, dtype=bool)
    boundary = grid.boundary_mask()
    gamma = [tuple(idx) for idx in np.argwhere(indicator & boundary)]
    if gamma_edge is not None:
        ax, side = gamma_edge
        edge = 0 if side < 0 else grid.nx[ax] - 1
        gamma = [idx for idx in gamma if idx[ax] == edge]
    return SubdomainMask(name=name, indicator=indicator, gamma=gamma)


def whole_domain_mask(grid, name="Omega"):
    return mask_from_indicator(grid, np.ones(grid.shape, dtype=bool), name)


def complement_mask(grid, mask, name=None):
    return mask_from_indicator(
        grid, ~mask.indicator, name or f"complement_{mask.name}"
    )


# ---------------------------------------------------------------------------
# Quadrature weights
# ---------------------------------------------------------------------------

def _run_factors(indicator, axis):
    """Per-node trapezoid factor along one axis: 1 inside a run of True
    nodes, 1/2 at run ends, 0 for isolated nodes."""
    ind = indicator.astype(float)
    prev_in = np.zeros_like(ind)
    next_in = np.zeros_like(ind)
    sl_to = [slice(None)] * ind.ndim
    sl_from = [slice(None)] * ind.ndim
    sl_to[axis] = slice(1, None)
    sl_from[axis] = slice(None, -1)
    prev_in[tuple(sl_to)] = ind[tuple(sl_from)]
    next_in[tuple(sl_from)] = ind[tuple(sl_to)]
    return 0.5 * (prev_in + next_in) * ind


def space_weights(grid, region=None):
    """Trapezoidal quadrature weights per spatial node, restricted to ``region``."""
    if region is None:
        ind = np.ones(grid.shape, dtype=bool)
    else:
        ind = region.indicator
        if ind.shape != grid.shape:
            raise GridMismatchError(
                f"mask shape {ind.shape} does not match grid {grid.shape}"
            )
    w = np.ones(grid.shape)
    for ax in range(grid.dim):
        w = w * _run_factors(ind, ax) * grid.dx[ax]
    return w


def time_weights(grid, t_window=None):
    """Trapezoidal weights over the time nodes of ``t_window`` (default (0, T))."""
    if t_window is None:
        k0, k1 = 0, grid.nt
    else:
        k0, k1 = grid.time_index(t_window[0]), grid.time_index(t_window[1])
        if k1 <= k0:
            raise ValueError(f"empty time window {t_window}")
    w = np.zeros(grid.nt + 1)
    w[k0 : k1 + 1] = grid.dt
    w[k0] = w[k1] = 0.5 * grid.dt
    return w


# ---------------------------------------------------------------------------
# Norms
# ---------------------------------------------------------------------------

def l2_norm(fld, region=None, t_window=None):
    """L2 norm over region x time-window by the composite trapezoidal rule."""
    grid = fld.grid
    wx = space_weights(grid, region)
    wt = time_weights(grid, t_window)
    sq = np.tensordot(wt, fld.values**2 * wx, axes=(0, 0))
    return math.sqrt(float(np.sum(sq)))


def l2_norm_spatial(values, grid, region=None):
    """L2(Omega) norm of a purely spatial field."""
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        raise GridMismatchError(
            f"spatial field shape {values.shape} does not match grid {grid.shape}"
        )
    wx = space_weights(grid, region)
    return math.sqrt(float(np.sum(values**2 * wx)))


def _check_region_thickness(grid, region, min_run):
    ind = region.indicator if region is not None else np.ones(grid.shape, bool)
    for ax in range(grid.dim):
        moved = np.moveaxis(ind, ax, -1).reshape(-1, grid.nx[ax])
        for line in moved:
            runs = _run_lengths(line)
            if runs and min(runs) < min_run:
                raise StencilError(
                    f"region run of {min(runs)} nodes along axis {ax} is too thin "
                    f"(need >= {min_run})"
                )


def _run_lengths(line):
    lengths = []
    count = 0
    for v in line:
        if v:
            count += 1
        elif count:
            lengths.append(count)
            count = 0
    if count:
        lengths.append(count)
    return lengths


def parabolic_norm(fld, order, region=None, t_window=None):
    """Parabolic Sobolev norm: sum of L2 norms of d_x^alpha d_t^j for
    |alpha| + 2j <= order (sum-of-norms convention)."""
    from . import fd

    grid = fld.grid
    if order not in (2, 4):
        raise ValueError(f"order must be 2 or 4, got {order}")
    _check_region_thickness(grid, region, order + 1)

    if t_window is None:
        k0, k1 = 0, grid.nt
    else:
        k0, k1 = grid.time_index(t_window[0]), grid.time_index(t_window[1])
    if k1 - k0 < order:
        raise StencilError(f"time window of {k1 - k0 + 1} nodes is too thin")
    vals = fld.values[k0 : k1 + 1]

    wx = space_weights(grid, region)
    nt_win = k1 - k0
    wt = np.full(nt_win + 1, grid.dt)
    wt[0] = wt[-1] = 0.5 * grid.dt

    def norm_of(arr):
        sq = np.tensordot(wt, arr**2 * wx, axes=(0, 0))
        return math.sqrt(float(np.sum(sq)))

    total = 0.0
    max_j = order // 2
    for j in range(max_j + 1):
        arr_t = vals
        for _ in range(j):
            arr_t = fd.diff_time(arr_t, grid.dt)
        for alpha in _multi_indices(grid.dim, order - 2 * j):
            arr = arr_t
            for ax, rep in enumerate(alpha):
                for _ in range(rep):
                    arr = fd.diff_axis(arr, grid.dx[ax], axis=1 + ax)
            total += norm_of(arr)
    return total


def _multi_indices(dim, max_total):
    """All spatial multi-indices with |alpha| <= max_total."""
    out = []
    if dim == 1:
        out = [(k,) for k in range(max_total + 1)]
    else:
        for k0 in range(max_total + 1):
            for k1 in range(max_total + 1 - k0):
                out.append((k0, k1))
    return out


def w21_norm(fld, region=None, t_window=None):
    """The observation norm: L2 norms of the field, gradient, Hessian entries
    and first time derivative, summed."""
    return parabolic_norm(fld, 2, region, t_window)


def w42_norm(fld, region=None, t_window=None):
    """Higher-order observation norm with |alpha| + 2*j <= 4."""
    return parabolic_norm(fld, 4, region, t_window)
