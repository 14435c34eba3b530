"""One-component approximate-control synthesis and positivity realization.

The control enters the first component only, localized to the control region.
Synthesis is penalized least squares (a discrete HUM surrogate): conjugate
gradients on the normal equations of the control-to-state map, with the
penalty reduced geometrically until the terminal misfit meets the tolerance
or the penalty floor is reached.  Approximate controllability guarantees
reachability only in the limit, so running out of penalty returns the best
control with a failure flag instead of raising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp

from .carleman import AssumptionError, check_assumption_52
from .forward import CoupledParabolicOperator, _factorize
from .geometry import SpaceTimeField
from .transforms import check_assumption_normal


@dataclass
class ControlProblem:
    """Steering problem: drive the state at ``t_target`` toward ``target``
    with a control on ``omega`` acting on the first component over
    (0, t_control_end]."""

    coeffs: object
    initial: tuple
    target: tuple
    t_target: float
    omega: object
    eps: float
    t_control_end: float = None
    beta0: float = 1e-2
    beta_floor: float = 1e-10
    cg_tol: float = 1e-9
    cg_maxiter: int = 150

    def __post_init__(self):
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")
        if not self.omega.indicator.any():
            raise ValueError("the control region is empty")
        if self.t_control_end is None:
            self.t_control_end = self.t_target


@dataclass
class ControlResult:
    h: SpaceTimeField
    achieved: tuple
    misfit: float
    energy: float
    converged: bool
    beta: float
    misfit_per_beta: list = dc_field(default_factory=list)
    floor: float = None


class _ControlMap:
    """Affine control-to-state map of an m-component system and its exact
    discrete adjoint.

    State is observed at ``k_obs``; the control acts on component 0 at the
    omega nodes for steps 1..k_ctl.  Inner products: L2(Omega) on states
    (plain dx^dim over interior nodes, exact for zero-boundary fields) and
    dt*dx^dim on controls.
    """

    def __init__(self, coeffs, initial, omega, grid, k_obs, k_ctl):
        self.grid = grid
        self.k_obs = k_obs
        self.k_ctl = k_ctl
        self.op = CoupledParabolicOperator(
            grid, coeffs.reaction(), coeffs.convection()
        )
        if self.op.time_dependent:
            raise ValueError("control synthesis expects time-independent "
                             "coefficients")
        gi, _ = self.op.split_indices()
        n_int = gi.size
        L = self.op.full_matrix(0)
        L_II = L[gi][:, gi]
        M = sp.identity(n_int, format="csc") - grid.dt * L_II
        self.lu = _factorize(M, "control forward step")
        self.lu_T = _factorize(M.T.tocsc(), "control adjoint step")

        interior = np.zeros(grid.shape, dtype=bool)
        interior[grid.interior_slices()] = True
        self.omega_flat = np.flatnonzero((omega.indicator & interior).ravel())
        self.omega_local = np.searchsorted(self.op.int_idx, self.omega_flat)
        self.ni = self.op.int_idx.size
        self.m = self.op.m
        self.dvol = float(np.prod(grid.dx))
        self.w0 = np.concatenate(
            [np.asarray(s, float).ravel()[self.op.int_idx] for s in initial]
        )

    @property
    def n_ctl_dofs(self):
        return self.k_ctl * self.omega_flat.size

    def _inject(self, hk):
        F = np.zeros(self.m * self.ni)
        F[self.omega_local] = hk
        return F

    def state_at_obs(self, h_flat):
        """March with control h (levels 1..k_ctl) from the problem's initial
        data; returns the stacked interior state at k_obs."""
        nh = self.omega_flat.size
        w = self.w0
        for k in range(1, self.k_obs + 1):
            rhs = w
            if k <= self.k_ctl:
                hk = h_flat[(k - 1) * nh: k * nh]
                rhs = w + self.grid.dt * self._inject(hk)
            w = self.lu.solve(rhs)
        return w

    def free_state(self):
        return self.state_at_obs(np.zeros(self.n_ctl_dofs))

    def adjoint(self, r_stacked):
        """G* r for the linear part G of the map: backward march of the
        transpose, collecting the component-0 slice on omega over the control
        window.  Weighted so that <G h, r>_X = <h, G* r>_U."""
        nh = self.omega_flat.size
        lam = self.lu_T.solve(self.dvol * r_stacked)
        out = np.zeros(self.n_ctl_dofs)
        for k in range(self.k_obs, 0, -1):
            if k <= self.k_ctl:
                out[(k - 1) * nh: k * nh] = lam[self.omega_local] / self.dvol
            if k > 1:
                lam = self.lu_T.solve(lam)
        return out

    def misfit_of(self, w_stacked, target_stacked):
        gap = w_stacked - target_stacked
        return math.sqrt(self.dvol * float(gap @ gap))

    def stack_target(self, target):
        return np.concatenate(
            [np.asarray(t, float).ravel()[self.op.int_idx] for t in target]
        )

    def control_field(self, h_flat):
        """Scatter the control dofs into a SpaceTimeField supported exactly on
        omega x (0, t_control_end]."""
        nh = self.omega_flat.size
        vals = np.zeros((self.grid.nt + 1, self.grid.n_space))
        for k in range(1, self.k_ctl + 1):
            vals[k, self.omega_flat] = h_flat[(k - 1) * nh: k * nh]
        return SpaceTimeField(
            self.grid, vals.reshape((self.grid.nt + 1,) + self.grid.shape)
        )

    def energy_of(self, h_flat):
        return self.grid.dt * self.dvol * float(h_flat @ h_flat)

    def unstack_state(self, w_stacked):
        comps = []
        for c in range(self.m):
            full = np.zeros(self.grid.n_space)
            full[self.op.int_idx] = w_stacked[c * self.ni:(c + 1) * self.ni]
            comps.append(full.reshape(self.grid.shape))
        return tuple(comps)


def control_objective(cmap, h_flat, target_stacked, beta):
    """Value and exact gradient of |G h + free - target|_X^2 + beta |h|_U^2."""
    w = cmap.state_at_obs(h_flat)
    gap = w - target_stacked
    J = cmap.dvol * float(gap @ gap) + beta * cmap.grid.dt * cmap.dvol * float(
        h_flat @ h_flat
    )
    grad = 2.0 * cmap.adjoint(gap) + 2.0 * beta * h_flat
    return J, grad


def _cg(apply_A, b, x0, tol, maxiter):
    x = x0.copy()
    r = b - apply_A(x)
    p = r.copy()
    rs = float(r @ r)
    b_norm = math.sqrt(float(b @ b)) or 1.0
    for _ in range(maxiter):
        if math.sqrt(rs) <= tol * b_norm:
            break
        Ap = apply_A(p)
        alpha = rs / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


def _synthesize(problem, grid, assumption_check):
    assumption_check()
    k_obs = grid.time_index(problem.t_target)
    k_ctl = grid.time_index(problem.t_control_end)
    if not 0 < k_ctl <= k_obs:
        raise ValueError("need 0 < t_control_end <= t_target")
    cmap = _ControlMap(
        problem.coeffs, problem.initial, problem.omega, grid, k_obs, k_ctl
    )
    target = cmap.stack_target(problem.target)
    free = cmap.free_state()
    resid = target - free

    # normal equations (G*G + beta) h = G* resid, warm-started over the
    # beta continuation
    def apply_A(beta):
        def inner(h):
            zero_init = cmap.state_at_obs(h) - free
            return cmap.adjoint(zero_init) + beta * h
        return inner

    b_rhs = cmap.adjoint(resid)
    h = np.zeros(cmap.n_ctl_dofs)
    beta = problem.beta0
    misfits = []
    best = None
    while True:
        h = _cg(apply_A(beta), b_rhs, h, problem.cg_tol, problem.cg_maxiter)
        w = cmap.state_at_obs(h)
        misfit = cmap.misfit_of(w, target)
        misfits.append((beta, misfit))
        if best is None or misfit <= best[1]:
            best = (h.copy(), misfit, beta, w)
        if misfit <= problem.eps or beta <= problem.beta_floor * (1 + 1e-12):
            break
        beta = max(beta * 0.1, problem.beta_floor)
    h, misfit, beta, w = best
    return ControlResult(
        h=cmap.control_field(h),
        achieved=cmap.unstack_state(w),
        misfit=misfit,
        energy=cmap.energy_of(h),
        converged=misfit <= problem.eps,
        beta=beta,
        misfit_per_beta=misfits,
    )


def synthesize_control_2x2(problem, grid, tol_nu=1e-8):
    """Steer the 2x2 system with a one-component control.

    Precondition: the first-order coupling field has a nonzero normal
    component on gamma (the uniqueness route behind approximate
    controllability)."""
    def check():
        ok, margin = check_assumption_normal(
            problem.coeffs.B, problem.omega, grid, tol_nu
        )
        if not ok:
            raise AssumptionError(
                f"|B . nu| = {margin:.3g} on gamma is below tol_nu = {tol_nu:.3g}"
            )
    return _synthesize(problem, grid, check)


def synthesize_control_3x3(problem, grid, tol_nu=1e-8):
    """Steer the 3x3 system with a one-component control; checks the
    coefficient-floor and normal-component hypotheses first."""
    def check():
        check_assumption_52(problem.coeffs, problem.omega, grid, tol_nu)
    return _synthesize(problem, grid, check)


def realize_positivity(coeffs, initial, omega, omega1, delta0, grid,
                       eps=None, t1_frac=0.8, ramp_width=0.05, tol_nu=1e-8,
                       beta_floor=1e-10):
    """Drive both snapshot components away from zero on Omega \\ omega1.

    The control acts on (0, T1] with T1 = t1_frac * theta; the system then
    evolves freely to theta (the smoothing step).  Targets are the constant
    pair (1, 1) mollified to satisfy the zero boundary data.  Returns the
    control result with the achieved floor; ``converged`` reports whether the
    floor delta0 was met.
    """
    kth = grid.k_theta

    def floor_at_theta(states):
        outside = ~omega1.indicator
        return min(
            float(np.min(np.abs(s[outside]))) for s in states[:2]
        )

    # free evolution first: the floor may already hold without control
    free_map = _ControlMap(coeffs, initial, omega, grid, kth, 1)
    free_states = free_map.unstack_state(free_map.free_state())
    free_floor = floor_at_theta(free_states)
    if free_floor >= delta0:
        zero_h = SpaceTimeField.zeros(grid)
        return ControlResult(
            h=zero_h, achieved=free_states, misfit=0.0, energy=0.0,
            converged=True, beta=math.inf, floor=free_floor,
        )

    ramp = _boundary_ramp(grid, ramp_width)
    target = (ramp.copy(), ramp.copy())
    t1 = max(grid.dt, t1_frac * grid.theta)
    if eps is None:
        eps = 0.25 * delta0 * math.sqrt(float(np.prod(
            [hi - lo for lo, hi in grid.extent]
        )))
    problem = ControlProblem(
        coeffs=coeffs, initial=initial, target=target, t_target=grid.theta,
        omega=omega, eps=eps, t_control_end=t1, beta_floor=beta_floor,
    )
    result = synthesize_control_2x2(problem, grid, tol_nu)
    floor = floor_at_theta(result.achieved)
    result.floor = floor
    result.converged = floor >= delta0
    return result


def _boundary_ramp(grid, width):
    """Smooth approximation of the constant 1 vanishing on the boundary."""
    dist = np.full(grid.shape, np.inf)
    mesh = grid.meshgrid()
    for ax in range(grid.dim):
        lo, hi = grid.extent[ax]
        dist = np.minimum(dist, np.minimum(mesh[ax] - lo, hi - mesh[ax]))
    return np.tanh(np.maximum(dist, 0.0) / width)
