"""Implicit finite-difference solvers for coupled parabolic systems.

The 2x2 system carries zeroth-order (reaction) and first-order (convection)
coupling; the 3x3 system is reaction-coupled only.  Time stepping is implicit
Euler with centered diffusion and upwinded convection, solved monolithically
over all components per step, so there is no CFL restriction and long time
windows (as the weighted audits need) are safe.  The adjoint solver marches
the exact discrete transpose of the forward step, which is what the
variational reconstruction and the control synthesis differentiate through.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .geometry import SpaceTimeField, GridMismatchError


class SolverError(RuntimeError):
    """Linear-solver breakdown (singular or near-singular step matrix)."""


class DegenerateNormalError(ValueError):
    """The transport field is (numerically) tangent to gamma."""


class BoundViolationError(ValueError):
    """A coefficient exceeds its declared sup-norm bound."""


# ---------------------------------------------------------------------------
# Coefficient containers
# ---------------------------------------------------------------------------

def scalar_field(v, grid):
    """Normalize a scalar coefficient to an array: spatial ``grid.shape`` or
    space-time ``(nt+1,) + grid.shape``.  Scalars broadcast to spatial."""
    if np.isscalar(v):
        return np.full(grid.shape, float(v))
    arr = np.asarray(v, dtype=float)
    if arr.shape == grid.shape or arr.shape == (grid.nt + 1,) + grid.shape:
        return arr
    raise GridMismatchError(f"scalar field shape {arr.shape} fits neither "
                            f"{grid.shape} nor {(grid.nt + 1,) + grid.shape}")


def vector_field(v, grid):
    """Normalize a vector coefficient to ``(dim,) + grid.shape`` (or with a
    leading time axis).  ``None`` means zero.  Scalars/sequences of scalars
    broadcast componentwise."""
    if v is None:
        return np.zeros((grid.dim,) + grid.shape)
    if np.isscalar(v):
        v = (v,) * grid.dim
    arr = np.asarray(v, dtype=float)
    if arr.shape == (grid.dim,):
        return np.broadcast_to(
            arr.reshape((grid.dim,) + (1,) * grid.dim), (grid.dim,) + grid.shape
        ).copy()
    if arr.shape == (grid.dim,) + grid.shape:
        return arr
    if arr.shape == (grid.nt + 1, grid.dim) + grid.shape:
        return arr
    raise GridMismatchError(f"vector field shape {arr.shape} invalid for grid")


def _slice(arr, k, grid, vector=False):
    spatial_ndim = grid.dim + (1 if vector else 0)
    if arr.ndim == spatial_ndim:
        return arr
    return arr[k]


def _time_dependent(arr, grid, vector=False):
    return arr.ndim == grid.dim + (2 if vector else 1)


@dataclass
class CoefficientSet2x2:
    """Reaction scalars a,b,c,d and convection fields A,B,C,D of the 2x2 system.

    Scalar fields may live on Omega (time-independent) or on Omega_T; the
    solver handles both and ``time_dependent`` records which mode is active.
    ``sup_bound`` is the declared L-infinity bound; it is checked at load.
    """

    grid: Grid
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    A: np.ndarray = None
    B: np.ndarray = None
    C: np.ndarray = None
    D: np.ndarray = None
    sup_bound: float = None

    def __post_init__(self):
        g = self.grid
        for name in ("a", "b", "c", "d"):
            setattr(self, name, scalar_field(getattr(self, name), g))
        for name in ("A", "B", "C", "D"):
            setattr(self, name, vector_field(getattr(self, name), g))
        if self.sup_bound is not None:
            worst = max(
                float(np.max(np.abs(getattr(self, n))))
                for n in ("a", "b", "c", "d", "A", "B", "C", "D")
            )
            if worst > self.sup_bound + 1e-12:
                raise BoundViolationError(
                    f"coefficient sup-norm {worst:.3g} exceeds declared bound "
                    f"{self.sup_bound:.3g}"
                )

    @property
    def time_dependent(self):
        g = self.grid
        return any(
            _time_dependent(getattr(self, n), g) for n in ("a", "b", "c", "d")
        ) or any(
            _time_dependent(getattr(self, n), g, vector=True)
            for n in ("A", "B", "C", "D")
        )

    def reaction(self):
        return [[self.a, self.b], [self.c, self.d]]

    def convection(self):
        return [[self.A, self.B], [self.C, self.D]]

    def with_reaction(self, b=None, c=None, a=None, d=None):
        """Copy with some reaction coefficients replaced."""
        return CoefficientSet2x2(
            self.grid,
            a=self.a if a is None else a,
            b=self.b if b is None else b,
            c=self.c if c is None else c,
            d=self.d if d is None else d,
            A=self.A, B=self.B, C=self.C, D=self.D,
            sup_bound=None,
        )


@dataclass
class CoefficientSet3x3:
    """Reaction matrix (a_ij) of the 3x3 system; entries may be time-dependent."""

    grid: Grid
    a: list  # 3x3 nested list of field-like entries
    sup_bound: float = None
    tol13: float = None

    def __post_init__(self):
        g = self.grid
        self.a = [[scalar_field(self.a[i][j], g) for j in range(3)] for i in range(3)]
        if self.sup_bound is not None:
            worst = max(
                float(np.max(np.abs(self.a[i][j])))
                for i in range(3) for j in range(3)
            )
            if worst > self.sup_bound + 1e-12:
                raise BoundViolationError(
                    f"coefficient sup-norm {worst:.3g} exceeds bound {self.sup_bound:.3g}"
                )
        if self.tol13 is not None:
            low = float(np.min(np.abs(self.a[0][2])))
            if low < self.tol13:
                raise BoundViolationError(
                    f"|a13| reaches {low:.3g} below the floor {self.tol13:.3g}"
                )

    @property
    def time_dependent(self):
        return any(
            _time_dependent(self.a[i][j], self.grid)
            for i in range(3) for j in range(3)
        )

    def reaction(self):
        return self.a

    def convection(self):
        return None


@dataclass
class ProblemData:
    """Sources, Dirichlet data and initial states for an m-component system.

    Dirichlet entries are full spatial arrays per time node; only their values
    at boundary nodes are read.  Defaults are zero.
    """

    grid: Grid
    n_comp: int
    sources: tuple = None
    dirichlet: tuple = None
    initial: tuple = None

    def __post_init__(self):
        g = self.grid
        m = self.n_comp
        zt = np.zeros((g.nt + 1,) + g.shape)
        zs = np.zeros(g.shape)

        def norm_list(entries, default, space_time):
            if entries is None:
                entries = (None,) * m
            out = []
            for e in entries:
                if e is None:
                    out.append(default.copy())
                elif isinstance(e, SpaceTimeField):
                    out.append(e.values)
                else:
                    arr = scalar_field(e, g)
                    if space_time and arr.shape == g.shape:
                        arr = np.broadcast_to(arr, (g.nt + 1,) + g.shape).copy()
                    out.append(arr)
            return tuple(out)

        self.sources = norm_list(self.sources, zt, True)
        self.dirichlet = norm_list(self.dirichlet, zt, True)
        self.initial = norm_list(self.initial, zs, False)
        bnd = g.boundary_mask()
        for comp in range(m):
            gap = np.max(np.abs(self.dirichlet[comp][0][bnd] - self.initial[comp][bnd]))
            if gap > 1e-10:
                warnings.warn(
                    f"component {comp}: boundary data and initial state disagree "
                    f"by {gap:.3g} at t=0", stacklevel=2,
                )

    @classmethod
    def zero(cls, grid, n_comp):
        return cls(grid, n_comp)


# ---------------------------------------------------------------------------
# Spatial operator assembly
# ---------------------------------------------------------------------------

class CoupledParabolicOperator:
    """Discrete spatial operator of an m-component linear parabolic system.

    Per component pair the operator holds ``Laplacian (diag blocks) +
    reaction + upwinded convection``.  Rows are nonzero only at interior
    nodes; columns span all nodes so the Dirichlet coupling can be split off.
    """

    def __init__(self, grid, reaction, convection=None):
        self.grid = grid
        self.m = len(reaction)
        self.reaction = reaction
        self.convection = convection
        N = grid.n_space
        flat = np.arange(N).reshape(grid.shape)
        self.int_idx = flat[grid.interior_slices()].ravel()
        self.bnd_idx = flat[grid.boundary_mask()].ravel()
        self.strides = tuple(
            int(np.prod(grid.nx[ax + 1:], dtype=int)) for ax in range(grid.dim)
        )
        self.time_dependent = any(
            _time_dependent(reaction[i][j], grid)
            for i in range(self.m) for j in range(self.m)
        ) or (convection is not None and any(
            convection[i][j] is not None
            and _time_dependent(convection[i][j], grid, vector=True)
            for i in range(self.m) for j in range(self.m)
        ))

    def _block(self, i, j, k):
        """N x N sparse block (interior rows only) at time step k."""
        g = self.grid
        N = g.n_space
        rows, cols, vals = [], [], []
        ii = self.int_idx

        if i == j:
            for ax in range(g.dim):
                s = self.strides[ax]
                inv = 1.0 / g.dx[ax] ** 2
                rows += [ii, ii, ii]
                cols += [ii - s, ii, ii + s]
                vals += [np.full(ii.size, inv),
                         np.full(ii.size, -2.0 * inv),
                         np.full(ii.size, inv)]

        r = _slice(self.reaction[i][j], k, g).ravel()[ii]
        rows.append(ii)
        cols.append(ii)
        vals.append(r)

        if self.convection is not None and self.convection[i][j] is not None:
            vec = _slice(self.convection[i][j], k, g, vector=True)
            for ax in range(g.dim):
                cax = vec[ax].ravel()[ii]
                side = np.where(cax >= 0.0, 1, -1)
                coef = side * cax / g.dx[ax]
                rows += [ii, ii]
                cols += [ii + side * self.strides[ax], ii]
                vals += [coef, -coef]

        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(N, N),
        ).tocsr()

    def full_matrix(self, k=0):
        """(m N) x (m N) operator at step k, rows nonzero at interior only."""
        blocks = [[self._block(i, j, k) for j in range(self.m)] for i in range(self.m)]
        return sp.bmat(blocks, format="csr")

    def split_indices(self):
        N = self.grid.n_space
        gi = np.concatenate([c * N + self.int_idx for c in range(self.m)])
        gb = np.concatenate([c * N + self.bnd_idx for c in range(self.m)])
        return gi, gb

    def apply(self, full_values_list, k):
        """Apply the operator to stacked full-node component arrays at step k."""
        L = self.full_matrix(k)
        x = np.concatenate([v.ravel() for v in full_values_list])
        return L @ x


def _factorize(mat, context):
    try:
        return splu(mat.tocsc())
    except RuntimeError as exc:
        raise SolverError(f"step matrix factorization failed ({context}): {exc}") from exc


def _march(op, data, grid):
    """Implicit-Euler march; returns list of (nt+1, shape) arrays per component."""
    m = op.m
    N = grid.n_space
    dt = grid.dt
    gi, gb = op.split_indices()
    n_int = gi.size

    out = [np.empty((grid.nt + 1,) + grid.shape) for _ in range(m)]
    for c in range(m):
        out[c][0] = data.initial[c]

    w = np.concatenate([data.initial[c].ravel()[op.int_idx] for c in range(m)])

    lu = None
    if not op.time_dependent:
        L = op.full_matrix(0)
        L_II = L[gi][:, gi]
        L_IB = L[gi][:, gb]
        lu = _factorize(sp.identity(n_int, format="csc") - dt * L_II,
                        "time-independent system")

    for k in range(1, grid.nt + 1):
        if op.time_dependent:
            L = op.full_matrix(k)
            L_II = L[gi][:, gi]
            L_IB = L[gi][:, gb]
            lu = _factorize(sp.identity(n_int, format="csc") - dt * L_II,
                            f"step {k}")
        wB = np.concatenate(
            [data.dirichlet[c][k].ravel()[op.bnd_idx] for c in range(m)]
        )
        F = np.concatenate(
            [data.sources[c][k].ravel()[op.int_idx] for c in range(m)]
        )
        w = lu.solve(w + dt * (F + L_IB @ wB))
        if not np.all(np.isfinite(w)):
            raise SolverError(f"solution blew up at step {k}")
        ni = op.int_idx.size
        for c in range(m):
            comp = np.empty(N)
            comp[op.int_idx] = w[c * ni:(c + 1) * ni]
            comp[op.bnd_idx] = data.dirichlet[c][k].ravel()[op.bnd_idx]
            out[c][k] = comp.reshape(grid.shape)
    return out


def solve_2x2(coeffs, data, grid):
    """Solve the 2x2 reaction-diffusion-convection system; returns (U, V)."""
    if coeffs.grid is not grid and coeffs.grid != grid:
        raise GridMismatchError("coefficients live on a different grid")
    op = CoupledParabolicOperator(grid, coeffs.reaction(), coeffs.convection())
    U, V = _march(op, data, grid)
    return SpaceTimeField(grid, U), SpaceTimeField(grid, V)


def solve_3x3(coeffs, data, grid):
    """Solve the 3x3 reaction-coupled system with zero Dirichlet data."""
    op = CoupledParabolicOperator(grid, coeffs.reaction())
    u, v, w = _march(op, data, grid)
    return SpaceTimeField(grid, u), SpaceTimeField(grid, v), SpaceTimeField(grid, w)


def residual(op, data, grid, fields):
    """Max-abs residual of the implicit-Euler scheme on interior nodes, plus a
    relative version scaled by the data magnitude."""
    gi, _ = op.split_indices()
    dt = grid.dt
    worst = 0.0
    L = op.full_matrix(0) if not op.time_dependent else None
    vals = [f.values if isinstance(f, SpaceTimeField) else f for f in fields]
    for k in range(1, grid.nt + 1):
        Lk = L if L is not None else op.full_matrix(k)
        xk = np.concatenate([v[k].ravel() for v in vals])
        xprev = np.concatenate([v[k - 1].ravel() for v in vals])
        F = np.concatenate(
            [data.sources[c][k].ravel() for c in range(op.m)]
        )
        r = (xk[gi] - xprev[gi]) / dt - (Lk @ xk)[gi] - F[gi]
        worst = max(worst, float(np.max(np.abs(r))) if r.size else 0.0)
    scale = max(
        max(float(np.max(np.abs(v))) for v in vals),
        max(float(np.max(np.abs(s))) for s in data.sources),
        1e-30,
    )
    return worst, worst / scale


def residual_2x2(coeffs, data, grid, U, V):
    op = CoupledParabolicOperator(grid, coeffs.reaction(), coeffs.convection())
    return residual(op, data, grid, (U, V))


def residual_3x3(coeffs, data, grid, u, v, w):
    op = CoupledParabolicOperator(grid, coeffs.reaction())
    return residual(op, data, grid, (u, v, w))


# ---------------------------------------------------------------------------
# Adjoint solve (exact discrete transpose)
# ---------------------------------------------------------------------------

def solve_adjoint(op, grid, terminal=None, source=None):
    """March the transpose of the forward step backward in time.

    With ``M = I - dt L_II``, the returned trajectory ``P`` satisfies
    ``P[nt] = terminal`` and ``M^T P[k-1] = P[k] + dt q^k``.  For a forward
    solve from zero data with sources ``e`` this gives the exact identity

        sum_k dt <(S e)^k, q^k> = sum_k dt <e^k, P[k-1]>

    over interior nodes, which is the transpose test the gradients rely on.
    Homogeneous Dirichlet conditions are built in.
    """
    m = op.m
    N = grid.n_space
    dt = grid.dt
    gi, _ = op.split_indices()
    n_int = gi.size
    ni = op.int_idx.size

    if terminal is None:
        terminal = tuple(np.zeros(grid.shape) for _ in range(m))
    if source is None:
        source = tuple(np.zeros((grid.nt + 1,) + grid.shape) for _ in range(m))
    source = tuple(s.values if isinstance(s, SpaceTimeField) else s for s in source)

    out = [np.zeros((grid.nt + 1,) + grid.shape) for _ in range(m)]
    p = np.concatenate([np.asarray(t, float).ravel()[op.int_idx] for t in terminal])
    for c in range(m):
        comp = np.zeros(N)
        comp[op.int_idx] = p[c * ni:(c + 1) * ni]
        out[c][grid.nt] = comp.reshape(grid.shape)

    lu = None
    if not op.time_dependent:
        L = op.full_matrix(0)
        L_II = L[gi][:, gi]
        lu = _factorize(
            (sp.identity(n_int, format="csc") - dt * L_II).T, "adjoint system"
        )

    for k in range(grid.nt, 0, -1):
        if op.time_dependent:
            L = op.full_matrix(k)
            L_II = L[gi][:, gi]
            lu = _factorize(
                (sp.identity(n_int, format="csc") - dt * L_II).T, f"adjoint step {k}"
            )
        q = np.concatenate([source[c][k].ravel()[op.int_idx] for c in range(m)])
        p = lu.solve(p + dt * q)
        for c in range(m):
            comp = np.zeros(N)
            comp[op.int_idx] = p[c * ni:(c + 1) * ni]
            out[c][k - 1] = comp.reshape(grid.shape)
    return out


def solve_adjoint_2x2(coeffs, grid, terminal=None, source=None):
    """Adjoint of the 2x2 forward solve; returns the pair (P, Q)."""
    op = CoupledParabolicOperator(grid, coeffs.reaction(), coeffs.convection())
    P, Q = solve_adjoint(op, grid, terminal, source)
    return SpaceTimeField(grid, P), SpaceTimeField(grid, Q)


def solve_adjoint_3x3(coeffs, grid, terminal=None, source=None):
    op = CoupledParabolicOperator(grid, coeffs.reaction())
    parts = solve_adjoint(op, grid, terminal, source)
    return tuple(SpaceTimeField(grid, p) for p in parts)



# ---------------------------------------------------------------------------
# First-order transport on a subdomain
# ---------------------------------------------------------------------------

def _gamma_edge(omega, grid):
    """Identify the single boundary edge carrying gamma: (axis, side)."""
    if not omega.gamma:
        raise ValueError("omega has empty gamma; the transport problem needs "
                         "a data boundary")
    candidates = set()
    for ax in range(grid.dim):
        for side in (-1, +1):
            edge = 0 if side < 0 else grid.nx[ax] - 1
            if all(idx[ax] == edge for idx in omega.gamma):
                candidates.add((ax, side))
    if not candidates:
        raise ValueError("gamma spans several boundary edges; restrict omega "
                         "so that it meets the boundary along a single edge")
    return sorted(candidates)[0]


class _TransportStencil:
    """Upwind stencil for  p . grad(u) + q u = f  on omega with data on gamma.

    Along the normal axis every node differences toward its gamma-side
    neighbour, so information marches away from the data boundary; tangential
    terms are upwinded to reinforce the diagonal, with a one-sided fallback at
    the edges of omega.
    """

    def __init__(self, omega, grid):
        self.grid = grid
        self.omega = omega
        self.ax_g, self.side = _gamma_edge(omega, grid)
        self.nodes = [tuple(i) for i in np.argwhere(omega.indicator)]
        self.local = {idx: i for i, idx in enumerate(self.nodes)}
        self.gamma_local = {self.local[tuple(i)] for i in omega.gamma}
        self.n = len(self.nodes)

    def matrix(self, pk, qk):
        g = self.grid
        rows, cols, vals = [], [], []
        for idx in self.nodes:
            r = self.local[idx]
            if r in self.gamma_local:
                rows.append(r); cols.append(r); vals.append(1.0)
                continue
            diag = float(qk[idx])
            nb = list(idx)
            nb[self.ax_g] += self.side
            nb = tuple(nb)
            if nb not in self.local:
                raise ValueError(f"omega is not connected toward gamma at {idx}")
            d = self.side * g.dx[self.ax_g]
            coef = float(pk[self.ax_g][idx]) / d
            rows.append(r); cols.append(self.local[nb]); vals.append(coef)
            diag -= coef
            pn_sign = 1.0 if float(pk[self.ax_g][idx]) * self.side >= 0 else -1.0
            for ax in range(g.dim):
                if ax == self.ax_g:
                    continue
                pt = float(pk[ax][idx])
                if pt == 0.0:
                    continue
                sgn = 1 if pt * pn_sign > 0 else -1
                nb_t = list(idx); nb_t[ax] += sgn
                if tuple(nb_t) not in self.local:
                    sgn = -sgn
                    nb_t = list(idx); nb_t[ax] += sgn
                    if tuple(nb_t) not in self.local:
                        continue
                ct = pt / (sgn * g.dx[ax])
                rows.append(r); cols.append(self.local[tuple(nb_t)]); vals.append(ct)
                diag -= ct
            rows.append(r); cols.append(r); vals.append(diag)
        return sp.coo_matrix((vals, (rows, cols)), shape=(self.n, self.n)).tocsc()

    def rhs(self, fk, inflow_k):
        b = np.empty(self.n)
        for idx in self.nodes:
            r = self.local[idx]
            if r in self.gamma_local:
                b[r] = 0.0 if inflow_k is None else float(inflow_k[idx])
            else:
                b[r] = float(fk[idx])
        return b

    def scatter(self, u_local):
        frame = np.zeros(self.grid.shape)
        for idx, i in self.local.items():
            frame[idx] = u_local[i]
        return frame

    def gather(self, frame):
        return np.array([frame[idx] for idx in self.nodes])


def _check_gamma_normal(p, omega, grid, tol_nu):
    normals = omega.gamma_normals(grid)
    time_dep = _time_dependent(p, grid, vector=True)
    steps = range(grid.nt + 1) if time_dep else (0,)
    worst = np.inf
    for k in steps:
        pk = _slice(p, k, grid, vector=True)
        for row, idx in enumerate(omega.gamma):
            vec = np.array([pk[ax][tuple(idx)] for ax in range(grid.dim)])
            worst = min(worst, abs(float(np.dot(vec, normals[row]))))
    if worst < tol_nu:
        raise DegenerateNormalError(
            f"|p . nu| = {worst:.3g} < tol_nu = {tol_nu:.3g} on gamma"
        )
    return worst


def solve_transport(p, q, rhs, omega, grid, inflow=None, tol_nu=None):
    """Solve  p . grad(u) + q u = rhs  on omega with u = inflow (default 0) on gamma.

    Returns a SpaceTimeField that is zero outside omega.  Time enters only as
    a parameter (one spatial solve per time node).  Degenerate normal
    components |p . nu| < tol_nu on gamma are rejected, mirroring the
    hypothesis of the underlying estimate; tol_nu defaults to
    1e-8 * max(|p|, 1).
    """
    p = vector_field(p, grid)
    q = scalar_field(q, grid)
    rhs_vals = rhs.values if isinstance(rhs, SpaceTimeField) else np.asarray(rhs, float)
    if rhs_vals.shape == grid.shape:
        rhs_vals = np.broadcast_to(rhs_vals, (grid.nt + 1,) + grid.shape)
    inflow_vals = None
    if inflow is not None:
        inflow_vals = inflow.values if isinstance(inflow, SpaceTimeField) else inflow

    if tol_nu is None:
        tol_nu = 1e-8 * max(float(np.max(np.abs(p))), 1.0)
    _check_gamma_normal(p, omega, grid, tol_nu)

    stencil = _TransportStencil(omega, grid)
    static = not _time_dependent(p, grid, vector=True) and not _time_dependent(q, grid)
    lu = None
    out = np.zeros((grid.nt + 1,) + grid.shape)
    for k in range(grid.nt + 1):
        if lu is None or not static:
            A = stencil.matrix(_slice(p, k, grid, vector=True), _slice(q, k, grid))
            lu = _factorize(A, "transport stencil")
        b = stencil.rhs(rhs_vals[k], None if inflow_vals is None else inflow_vals[k])
        out[k] = stencil.scatter(lu.solve(b))
    return SpaceTimeField(grid, out)


def transport_residual(p, q, rhs, omega, grid, u):
    """Max-abs residual of the transport stencil over omega (gamma rows too)."""
    p = vector_field(p, grid)
    q = scalar_field(q, grid)
    rhs_vals = rhs.values if isinstance(rhs, SpaceTimeField) else np.asarray(rhs, float)
    if rhs_vals.shape == grid.shape:
        rhs_vals = np.broadcast_to(rhs_vals, (grid.nt + 1,) + grid.shape)
    uv = u.values if isinstance(u, SpaceTimeField) else u
    stencil = _TransportStencil(omega, grid)
    worst = 0.0
    for k in range(grid.nt + 1):
        A = stencil.matrix(_slice(p, k, grid, vector=True), _slice(q, k, grid))
        b = stencil.rhs(rhs_vals[k], None)
        r = A @ stencil.gather(uv[k]) - b
        worst = max(worst, float(np.max(np.abs(r))) if r.size else 0.0)
    return worst
