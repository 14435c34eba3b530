"""Coefficient reconstruction and stability-constant estimation.

The reconstruction routes all run through the difference trajectory: the gap
between the perturbed and reference solutions solves the same system with the
coefficient differences appearing as sources, and when the two snapshots
coincide at theta the time derivative of the gap at theta factors as
(source at theta).  Difference trajectories with an exactly vanishing
snapshot are generated through the time-differentiated system, which evolves
forward stably and whose anchored time integral is the trajectory itself;
naive reverse marching of the parabolic step would amplify roundoff
catastrophically and is avoided everywhere except for the two grid levels
the centered derivative stencil needs below theta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp

from . import fd
from .geometry import (
    SpaceTimeField,
    l2_norm,
    l2_norm_spatial,
    space_weights,
    time_weights,
    w21_norm,
)
from .forward import (
    CoupledParabolicOperator,
    ProblemData,
    _factorize,
    solve_2x2,
    solve_adjoint_2x2,
)
from .transforms import DegeneracyError, check_assumption_normal, _check_floor


class RankDeficiencyError(ValueError):
    """Too few experiments for the nodewise identification system."""


@dataclass
class Observation:
    """One-component observation: the gap of the observed component on
    omega x (0,T) plus full-domain snapshots of both components at theta."""

    u_on_omega: SpaceTimeField
    snapshot_U: np.ndarray
    snapshot_V: np.ndarray
    noise_level: float = 0.0


@dataclass
class ReconstructionResult:
    f_hat: np.ndarray
    g_hat: np.ndarray
    misfit_history: list
    kappa_hat: float = None
    converged: bool = True
    message: str = ""


# ---------------------------------------------------------------------------
# Snapshot identity
# ---------------------------------------------------------------------------

def snapshot_reconstruct(dudt_theta, dvdt_theta, Ut_theta, Vt_theta, delta0,
                         extrapolate_boundary=True):
    """Pointwise reconstruction from the snapshot identity:
    f = dt(U - Utilde)(theta) / Vtilde(theta), g = dt(V - Vtilde)(theta) / Utilde(theta).

    The identity is an interior statement: on the boundary the difference is
    pinned to zero by the shared Dirichlet data and carries no information,
    so boundary values are filled by second-order extrapolation from the
    interior (disable with ``extrapolate_boundary=False``)."""
    Ut = np.asarray(Ut_theta, dtype=float)
    Vt = np.asarray(Vt_theta, dtype=float)
    _check_floor(Ut, delta0, "Utilde(theta)")
    _check_floor(Vt, delta0, "Vtilde(theta)")
    f_hat = np.asarray(dudt_theta) / Vt
    g_hat = np.asarray(dvdt_theta) / Ut
    if extrapolate_boundary:
        f_hat = _extrapolate_to_boundary(f_hat)
        g_hat = _extrapolate_to_boundary(g_hat)
    return f_hat, g_hat


def _extrapolate_to_boundary(arr):
    out = np.array(arr, dtype=float)
    for ax in range(out.ndim):
        a = np.moveaxis(out, ax, 0)
        a[0] = 3.0 * a[1] - 3.0 * a[2] + a[3]
        a[-1] = 3.0 * a[-2] - 3.0 * a[-3] + a[-4]
    return out


# ---------------------------------------------------------------------------
# Matched difference trajectories
# ---------------------------------------------------------------------------

@dataclass
class DifferenceTrajectory:
    """A solution of the difference system with identically zero snapshot at
    theta.  ``y``/``z`` are the time derivatives (they solve the homogeneous
    system), ``u``/``v`` their anchored integrals.  Values below ``k_min``
    are not populated."""

    u: np.ndarray
    v: np.ndarray
    y: np.ndarray
    z: np.ndarray
    k_min: int = 0


def _march_from(op, grid, k_start, w0_stacked, backsteps=0):
    """Forward-march the homogeneous system from level k_start; extend
    ``backsteps`` levels below k_start by the exact algebraic inverse of the
    implicit step (stable only for a handful of levels, which is all the
    derivative stencil needs)."""
    gi, _ = op.split_indices()
    n_int = gi.size
    dt = grid.dt
    L = op.full_matrix(0)
    L_II = L[gi][:, gi]
    M = sp.identity(n_int, format="csc") - dt * L_II
    lu = _factorize(M, "difference march")

    levels = np.zeros((grid.nt + 1, n_int))
    levels[k_start] = w0_stacked
    w = w0_stacked
    for k in range(k_start + 1, grid.nt + 1):
        w = lu.solve(w)
        levels[k] = w
    if backsteps > 4:
        raise ValueError("the exact inverse step amplifies roundoff; "
                         "more than 4 back levels are not meaningful")
    w = w0_stacked
    for k in range(k_start - 1, k_start - 1 - backsteps, -1):
        w = M @ w
        levels[k] = w
    return levels, k_start - backsteps


def _unstack(levels, op, grid):
    ni = op.int_idx.size
    comps = []
    for c in range(op.m):
        full = np.zeros((grid.nt + 1, grid.n_space))
        full[:, op.int_idx] = levels[:, c * ni:(c + 1) * ni]
        comps.append(full.reshape((grid.nt + 1,) + grid.shape))
    return comps


def difference_from_sources(coeffs, S_u, S_v, grid, backsteps=2):
    """Difference trajectory whose time derivative at theta equals the given
    steady sources (the snapshot identity, read as a construction).

    The derivative pair solves the homogeneous system forward from
    (S_u, S_v) at theta; its anchored trapezoid integral is the trajectory.
    """
    op = CoupledParabolicOperator(grid, coeffs.reaction(), coeffs.convection())
    if op.time_dependent:
        raise ValueError("the differentiated-system construction needs "
                         "time-independent coefficients")
    w0 = np.concatenate([np.asarray(S, float).ravel()[op.int_idx]
                         for S in (S_u, S_v)])
    levels, k_min = _march_from(op, grid, grid.k_theta, w0, backsteps)
    y, z = _unstack(levels, op, grid)
    u = fd.cumint_from(y, grid.dt, grid.k_theta)
    v = fd.cumint_from(z, grid.dt, grid.k_theta)
    if k_min > 0:
        u[:k_min] = 0.0
        v[:k_min] = 0.0
    return DifferenceTrajectory(u, v, y, z, k_min)


def matched_difference_from_seed(coeffs, Ut, Vt, y0, z0, grid, delta0):
    """Full-window difference trajectory from a smooth seed, with the planted
    perturbation pair read off the derivative slice at theta.

    Returns (trajectory, f, g) where f = y(theta)/Vtilde, g = z(theta)/Utilde
    are the coefficient differences realized by this trajectory against the
    steady reference pair (Ut, Vt).
    """
    Ut = np.asarray(Ut, dtype=float)
    Vt = np.asarray(Vt, dtype=float)
    _check_floor(Ut, delta0, "Utilde")
    _check_floor(Vt, delta0, "Vtilde")
    op = CoupledParabolicOperator(grid, coeffs.reaction(), coeffs.convection())
    if op.time_dependent:
        raise ValueError("seeded difference trajectories need "
                         "time-independent coefficients")
    w0 = np.concatenate([np.asarray(s, float).ravel()[op.int_idx]
                         for s in (y0, z0)])
    levels, _ = _march_from(op, grid, 0, w0, backsteps=0)
    y, z = _unstack(levels, op, grid)
    u = fd.cumint_from(y, grid.dt, grid.k_theta)
    v = fd.cumint_from(z, grid.dt, grid.k_theta)
    f = y[grid.k_theta] / Vt
    g = z[grid.k_theta] / Ut
    return DifferenceTrajectory(u, v, y, z, 0), f, g


# ---------------------------------------------------------------------------
# Empirical stability constant
# ---------------------------------------------------------------------------

@dataclass
class SweepRow:
    instance: int
    lhs: float
    rhs: float
    degenerate: bool = False

    @property
    def ratio(self):
        if self.degenerate or self.rhs == 0.0:
            return math.nan
        return self.lhs / self.rhs


@dataclass
class StabilitySweep:
    rows: list
    excluded: list = dc_field(default_factory=list)

    @property
    def kappa_hat(self):
        vals = [r.ratio for r in self.rows if not math.isnan(r.ratio)]
        return max(vals) if vals else math.nan


def stability_sweep(instances, omega, grid, delta0=None, tol_nu=1e-8):
    """Ratio table of the two-sided stability estimate over difference
    instances.

    Each instance materializes (coeffs, Ut, Vt, y0, z0) on the grid; the
    instance is excluded (and listed) if an assumption check fails, and
    flagged degenerate if both sides vanish.  kappa_hat is the max ratio of

        |f|_L2 + |g|_L2   over   |dt u|_W21(omega_T) + |u|_W21(omega_T).
    """
    rows, excluded = [], []
    for i, inst in enumerate(instances):
        coeffs, Ut, Vt, y0, z0 = inst.materialize(grid)
        d0 = delta0 if delta0 is not None else 1e-3 * max(
            float(np.max(np.abs(Ut))), float(np.max(np.abs(Vt)))
        )
        try:
            ok, _ = check_assumption_normal(coeffs.B, omega, grid, tol_nu)
            if not ok:
                raise DegeneracyError("B is tangent to gamma")
            traj, f, g = matched_difference_from_seed(
                coeffs, Ut, Vt, y0, z0, grid, d0
            )
        except (DegeneracyError, ValueError) as exc:
            excluded.append((i, str(exc)))
            continue
        lhs = l2_norm_spatial(f, grid) + l2_norm_spatial(g, grid)
        u_field = SpaceTimeField(grid, traj.u)
        y_field = SpaceTimeField(grid, traj.y)
        rhs = w21_norm(y_field, omega) + w21_norm(u_field, omega)
        degenerate = lhs == 0.0 and rhs == 0.0
        rows.append(SweepRow(i, lhs, rhs, degenerate))
    return StabilitySweep(rows, excluded)


# ---------------------------------------------------------------------------
# Variational one-component inversion
# ---------------------------------------------------------------------------

def _misfit_weights(grid, omega):
    wt = time_weights(grid)
    wxo = space_weights(grid, omega)
    wx = space_weights(grid)
    return wt, wxo, wx


def misfit_and_gradient(b, c, coeffs_known, data, obs, prior, mu, grid, omega):
    """Objective value and its exact discrete gradient w.r.t. (b, c).

    The objective is the weighted least squares

        1/2 |U - U_obs|^2_{L2(omega_T)} + 1/2 |(U,V)(theta) - snapshot|^2_{L2}
        + mu/2 |(b,c) - prior|^2_{L2},

    differentiated through the implicit-Euler scheme, so the finite-difference
    check closes to roundoff.
    """
    co = coeffs_known.with_reaction(b=b, c=c)
    U, V = solve_2x2(co, data, grid)
    wt, wxo, wx = _misfit_weights(grid, omega)
    kth = grid.k_theta

    obs_gap = U.values - obs.u_on_omega.values
    snapU_gap = U.values[kth] - obs.snapshot_U
    snapV_gap = V.values[kth] - obs.snapshot_V
    db = b - prior[0]
    dc = c - prior[1]

    J = 0.5 * float(np.sum(np.tensordot(wt, obs_gap**2 * wxo, axes=(0, 0))))
    J += 0.5 * float(np.sum(wx * (snapU_gap**2 + snapV_gap**2)))
    J += 0.5 * mu * float(np.sum(wx * (db**2 + dc**2)))

    qU = wt[(slice(None),) + (None,) * grid.dim] * wxo[None] * obs_gap / grid.dt
    qV = np.zeros_like(qU)
    qU[kth] += wx * snapU_gap / grid.dt
    qV[kth] += wx * snapV_gap / grid.dt
    P, Q = solve_adjoint_2x2(co, grid, source=(qU, qV))

    grad_b = grid.dt * np.sum(P.values[:-1] * V.values[1:], axis=0)
    grad_c = grid.dt * np.sum(Q.values[:-1] * U.values[1:], axis=0)
    grad_b += mu * wx * db
    grad_c += mu * wx * dc
    return J, grad_b, grad_c, (U, V)


def variational_reconstruct(obs, coeffs_known, prior, mu, data, grid, omega,
                            max_iter=200, grad_tol=1e-10, step0=None):
    """Tikhonov least squares for the reaction pair (b, c) by gradient descent
    with an Armijo line search (Barzilai-Borwein initial step).

    The misfit history is non-increasing by construction; if the gradient
    norm does not reach ``grad_tol`` within ``max_iter`` iterations the best
    iterate is returned with ``converged=False``.
    """
    b = np.asarray(prior[0], dtype=float).copy()
    c = np.asarray(prior[1], dtype=float).copy()

    def pack(bb, cc):
        return np.concatenate([bb.ravel(), cc.ravel()])

    def unpack(xx):
        n = b.size
        return xx[:n].reshape(grid.shape), xx[n:].reshape(grid.shape)

    def fg(xx):
        bb, cc = unpack(xx)
        J, gb, gc, _ = misfit_and_gradient(
            bb, cc, coeffs_known, data, obs, prior, mu, grid, omega
        )
        return J, pack(gb, gc)

    x = pack(b, c)
    J, g = fg(x)
    history = [J]
    if step0 is None:
        step0 = 1.0 / max(float(np.linalg.norm(g)), 1e-12)
    step = step0
    x_prev, g_prev = None, None
    converged = False
    for _ in range(max_iter):
        gnorm2 = float(g @ g)
        if math.sqrt(gnorm2) <= grad_tol:
            converged = True
            break
        if x_prev is not None:
            s = x - x_prev
            yv = g - g_prev
            sty = float(s @ yv)
            if sty > 1e-30:
                step = float(s @ s) / sty
            else:
                step = step0
        # Armijo backtracking keeps the history monotone
        accepted = False
        t = step
        for _bt in range(40):
            x_new = x - t * g
            J_new, g_new = fg(x_new)
            if J_new <= J - 1e-4 * t * gnorm2:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        x_prev, g_prev = x, g
        x, J, g = x_new, J_new, g_new
        history.append(J)

    b_hat, c_hat = unpack(x)
    msg = "" if converged else (
        f"gradient norm {float(np.linalg.norm(g)):.3g} above tolerance after "
        f"{len(history) - 1} accepted steps"
    )
    return ReconstructionResult(
        f_hat=b_hat - prior[0], g_hat=c_hat - prior[1],
        misfit_history=history, converged=converged, message=msg,
    )


def select_mu(obs, coeffs_known, prior, data, grid, omega, mu_grid=None,
              noise_floor=0.0, max_iter=150):
    """Geometric sweep over regularization weights with a discrepancy-style
    pick: the largest mu whose data misfit dips below 1.1x the noise floor;
    the smallest mu wins when none does."""
    if mu_grid is None:
        mu_grid = [10.0 ** (-e) for e in range(2, 10)]
    best = None
    table = []
    for mu in sorted(mu_grid, reverse=True):
        res = variational_reconstruct(
            obs, coeffs_known, prior, mu, data, grid, omega, max_iter=max_iter
        )
        table.append((mu, res.misfit_history[-1]))
        best = (mu, res)
        if res.misfit_history[-1] <= 1.1 * noise_floor:
            break
    return best[1], best[0], table


# ---------------------------------------------------------------------------
# Full identification from repeated experiments
# ---------------------------------------------------------------------------

@dataclass
class IdentificationExperiment:
    """Reference snapshots at theta and the observed snapshot-derivative data
    of one experiment."""

    Ut_theta: np.ndarray
    Vt_theta: np.ndarray
    dudt_theta: np.ndarray
    dvdt_theta: np.ndarray


@dataclass
class IdentificationResult:
    diffs: dict           # keys a,b,c,d,A,B,C,D (vectors carry an axis)
    flagged: list         # node indices where the system was ill-conditioned
    det_field: np.ndarray


def _experiment_matrix(experiments, grid):
    """Per-node row blocks [Ut, Vt, grad Ut, grad Vt]; shape (nodes, rows, cols)."""
    n_exp = len(experiments)
    cols = 2 + 2 * grid.dim
    N = grid.n_space
    Mx = np.zeros((N, n_exp, cols))
    for j, ex in enumerate(experiments):
        Ut = np.asarray(ex.Ut_theta, dtype=float)
        Vt = np.asarray(ex.Vt_theta, dtype=float)
        gU = fd.spatial_gradient(Ut, grid, time_dep=False)
        gV = fd.spatial_gradient(Vt, grid, time_dep=False)
        Mx[:, j, 0] = Ut.ravel()
        Mx[:, j, 1] = Vt.ravel()
        for ax in range(grid.dim):
            Mx[:, j, 2 + ax] = gU[ax].ravel()
            Mx[:, j, 2 + grid.dim + ax] = gV[ax].ravel()
    return Mx


def determinant_check(experiments, omega1, grid, tol_det=1e-8):
    """Nodewise determinant of the full experiment matrix on Omega \\ omega1.

    The full matrix interleaves the two decoupled row families, so its
    determinant is the square of the single-family determinant.  Returns
    (ok, det_field, margin) with a row-norm-scaled threshold."""
    needed = 2 + 2 * grid.dim
    if len(experiments) < needed:
        raise RankDeficiencyError(
            f"need {needed} experiments for dim {grid.dim}, got {len(experiments)}"
        )
    Mx = _experiment_matrix(experiments[:needed], grid)
    det_small = np.linalg.det(Mx)
    det_full = det_small**2
    row_norms = np.linalg.norm(Mx, axis=2)
    scale = np.prod(row_norms, axis=1) ** 2
    outside = ~omega1.indicator.ravel()
    margin = np.min(np.abs(det_full[outside]) / np.maximum(scale[outside], 1e-300))
    ok = bool(margin >= tol_det)
    return ok, det_full.reshape(grid.shape), float(margin)


def full_identification(experiments, omega1, grid, tol_det=1e-8, cond_cap=1e8):
    """Nodewise solve of the experiment systems for all coefficient differences.

    On Omega \\ omega1 each node contributes two (2 + 2 dim)-square systems
    sharing the same matrix: one for (a, b, A, B) driven by the first
    component's snapshot derivative, one for (c, d, C, D) driven by the
    second's.  Differences are zero on omega1 by hypothesis.  Ill-conditioned
    nodes are flagged and filled by interpolation from their neighbours.
    """
    needed = 2 + 2 * grid.dim
    if len(experiments) < needed:
        raise RankDeficiencyError(
            f"need {needed} experiments for dim {grid.dim}, got {len(experiments)}"
        )
    ok, det_field, margin = determinant_check(experiments, omega1, grid, tol_det)
    if not ok:
        raise DegeneracyError(
            f"determinant margin {margin:.3g} below tol_det = {tol_det:.3g} "
            "on the identification region"
        )
    exps = experiments[:needed]
    Mx = _experiment_matrix(exps, grid)
    rhs1 = np.stack([np.asarray(e.dudt_theta, float).ravel() for e in exps], axis=1)
    rhs2 = np.stack([np.asarray(e.dvdt_theta, float).ravel() for e in exps], axis=1)

    N = grid.n_space
    sol1 = np.zeros((N, needed))
    sol2 = np.zeros((N, needed))
    flagged = []
    outside = ~omega1.indicator.ravel()
    conds = np.linalg.cond(Mx)
    for i in range(N):
        if not outside[i]:
            continue
        if conds[i] > cond_cap:
            flagged.append(i)
            continue
        sol1[i] = np.linalg.solve(Mx[i], rhs1[i])
        sol2[i] = np.linalg.solve(Mx[i], rhs2[i])
    for i in flagged:
        sol1[i] = _interp_from_neighbors(sol1, i, outside, flagged, grid)
        sol2[i] = _interp_from_neighbors(sol2, i, outside, flagged, grid)

    def take(sol, col):
        return sol[:, col].reshape(grid.shape)

    diffs = {
        "a": take(sol1, 0), "b": take(sol1, 1),
        "c": take(sol2, 0), "d": take(sol2, 1),
        "A": np.stack([take(sol1, 2 + ax) for ax in range(grid.dim)]),
        "B": np.stack([take(sol1, 2 + grid.dim + ax) for ax in range(grid.dim)]),
        "C": np.stack([take(sol2, 2 + ax) for ax in range(grid.dim)]),
        "D": np.stack([take(sol2, 2 + grid.dim + ax) for ax in range(grid.dim)]),
    }
    flagged_idx = [np.unravel_index(i, grid.shape) for i in flagged]
    return IdentificationResult(diffs, flagged_idx, det_field)


def _interp_from_neighbors(sol, i, outside, flagged, grid):
    """Average the valid immediate neighbours of a flagged node."""
    idx = np.unravel_index(i, grid.shape)
    acc, count = np.zeros(sol.shape[1]), 0
    flagged_set = set(flagged)
    for ax in range(grid.dim):
        for step in (-1, 1):
            nb = list(idx)
            nb[ax] += step
            if not 0 <= nb[ax] < grid.nx[ax]:
                continue
            j = int(np.ravel_multi_index(tuple(nb), grid.shape))
            if outside[j] and j not in flagged_set:
                acc += sol[j]
                count += 1
    return acc / count if count else acc
