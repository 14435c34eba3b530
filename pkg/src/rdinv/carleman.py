"""Carleman weight construction and numerical audits of the weighted inequalities.

The global weight is exp(-2 s eta) with eta(x,t) = alpha(x) / (t (T - t)), so
it vanishes to all orders at both time endpoints; endpoint nodes are clipped
to exactly zero.  The constants in the global estimates are non-constructive,
so those audits report ratio tables over an s-sweep with a boundedness flag
instead of asserting fixed constants.  The two auxiliary integral lemmas have
explicit constants (1/(4 s kappa0) and kappa17/s) and are checked as hard
inequalities up to quadrature slack.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import fd
from .geometry import (
    SpaceTimeField,
    l2_norm,
    parabolic_norm,
    space_weights,
    time_weights,
    whole_domain_mask,
)
from .forward import residual_2x2, residual_3x3, scalar_field, vector_field


class NotASolutionError(ValueError):
    """The field pair handed to a 'sides' operation does not solve the system."""


class AssumptionError(ValueError):
    """A structural hypothesis (normal component, coefficient floor) fails."""


# ---------------------------------------------------------------------------
# Weights
# ---------------------------------------------------------------------------

@dataclass
class WeightSpec:
    """Carleman weight data: auxiliary bump psi, its strength lambda, the
    positive spatial profile alpha, and the parameters (s, tau)."""

    grid: object
    psi: np.ndarray
    lam: float
    alpha: np.ndarray
    s: float
    tau: float = 1.0

    def rho(self):
        """1 / (t (T-t)) at interior time nodes; +inf at the endpoints."""
        t = self.grid.t_nodes
        out = np.full(t.shape, np.inf)
        out[1:-1] = 1.0 / (t[1:-1] * (self.grid.T - t[1:-1]))
        return out

    def eta(self):
        """alpha(x) / (t (T-t)); +inf at the endpoint time nodes."""
        rho = self.rho()
        return rho[(slice(None),) + (None,) * self.grid.dim] * self.alpha[None]

    def exp_weight(self):
        """exp(-2 s eta), exactly zero on the endpoint time slabs."""
        out = np.zeros((self.grid.nt + 1,) + self.grid.shape)
        eta = self.eta()
        out[1:-1] = np.exp(-2.0 * self.s * eta[1:-1])
        return out

    def with_s(self, s):
        return WeightSpec(self.grid, self.psi, self.lam, self.alpha, s, self.tau)


@dataclass
class LocalWeight:
    """Local weight of the first transformation step: a linear-in-normal
    spatial part phi0 and the concave time part phi1(t) = -(t - theta)^2."""

    grid: object
    phi0: np.ndarray
    s: float
    kappa0: float = 1.0

    def phi1(self):
        t = self.grid.t_nodes
        return -((t - self.grid.theta) ** 2)

    def time_weight(self):
        return np.exp(2.0 * self.s * self.phi1())

    def space_weight(self):
        return np.exp(2.0 * self.s * self.phi0)


def _warped_bump(grid, ax, center):
    lo, hi = grid.extent[ax]
    xi = (grid.axes[ax] - lo) / (hi - lo)
    xc = (center - lo) / (hi - lo)
    gam = (0.5 - xc) / max(xc * (1.0 - xc), 1e-12)
    clipped = min(max(gam, -1.0), 1.0)
    q = xi + clipped * xi * (1.0 - xi)
    return q * (1.0 - q), clipped != gam


def build_weight(grid, omega, lam=2.0, s=1.0, tau=1.0):
    """Construct the weight profile via the classical recipe
    alpha = exp(2 lam max psi) - exp(lam psi), with psi a polynomial bump
    vanishing on the boundary whose only critical point sits at the center of
    omega (reached by a monotone warp of the coordinate)."""
    centers = []
    for ax in range(grid.dim):
        coords = grid.meshgrid()[ax][omega.indicator]
        centers.append(0.5 * (coords.min() + coords.max()))
    bumps = []
    for ax in range(grid.dim):
        b, _was_clipped = _warped_bump(grid, ax, centers[ax])
        bumps.append(b)
    if grid.dim == 1:
        psi = bumps[0]
    else:
        psi = 4.0 * np.multiply.outer(bumps[0], bumps[1])
    # the construction's only critical point is the bump peak
    peak = np.unravel_index(int(np.argmax(psi)), grid.shape)
    if not omega.indicator[peak]:
        warnings.warn(
            "psi has a critical point outside omega; the audit weight is "
            "still positive but its localization is weaker", stacklevel=2,
        )
    alpha = np.exp(2.0 * lam * float(psi.max())) - np.exp(lam * psi)
    return WeightSpec(grid, psi, lam, alpha, s, tau)


def build_local_weight(grid, omega, s, kappa0=1.0):
    """Normal-coordinate weight on omega: phi0 grows linearly toward gamma and
    vanishes at the far side of omega; zero outside omega."""
    from .forward import _gamma_edge

    ax, side = _gamma_edge(omega, grid)
    coords = grid.meshgrid()[ax]
    inside = omega.indicator
    if side > 0:
        phi0 = coords - coords[inside].min()
    else:
        phi0 = coords[inside].max() - coords
    phi0 = np.where(inside, phi0, 0.0)
    return LocalWeight(grid, phi0, s, kappa0)


# ---------------------------------------------------------------------------
# Weighted integrals
# ---------------------------------------------------------------------------

def _integrate(grid, arr, region=None, t_window=None):
    wt = time_weights(grid, t_window)
    wx = space_weights(grid, region)
    return float(np.sum(np.tensordot(wt, arr * wx, axes=(0, 0))))


def _lhs_terms(fields, weight):
    """Pointwise integrand of the estimate's left side for a list of fields."""
    grid = weight.grid
    s = weight.s
    rho = weight.rho()
    srho = np.zeros(grid.nt + 1)
    srho[1:-1] = s * rho[1:-1]
    shape = (slice(None),) + (None,) * grid.dim
    w = weight.exp_weight()
    base = np.zeros((grid.nt + 1,) + grid.shape)
    for f in fields:
        v = f.values if isinstance(f, SpaceTimeField) else f
        dt_v = fd.diff_time(v, grid.dt)
        lap = fd.laplacian(v, grid)
        grads = fd.spatial_gradient(v, grid)
        base += dt_v**2 + lap**2
        base += srho[shape] ** 2 * sum(g**2 for g in grads)
        base += srho[shape] ** 4 * v**2
    return srho[shape] ** (weight.tau - 1.0) * w * base


def carleman_sides_2x2(coeffs, data, u, v, weight, omega, residual_tol=1e-8):
    """Quadrature values of the three pieces of the 2x2 estimate.

    Returns (lhs, rhs_obs, rhs_src); no inequality is enforced here since the
    constants are non-constructive.  The pair (u, v) must solve the system for
    ``data`` (checked against the discrete scheme residual).
    """
    grid = weight.grid
    _, rel = residual_2x2(coeffs, data, grid, u, v)
    if rel > residual_tol:
        raise NotASolutionError(
            f"(u,v) fails the scheme residual check: {rel:.3g} > {residual_tol:.3g}"
        )
    f_vals, g_vals = data.sources[0], data.sources[1]
    lhs = _integrate(grid, _lhs_terms([u, v], weight))
    rhs_obs = (
        parabolic_norm(u, 2, omega) ** 2
        + l2_norm(SpaceTimeField(grid, f_vals), omega) ** 2
    )
    s = weight.s
    rho = weight.rho()
    srho_tau = np.zeros(grid.nt + 1)
    srho_tau[1:-1] = (s * rho[1:-1]) ** weight.tau
    shape = (slice(None),) + (None,) * grid.dim
    rhs_src = _integrate(
        grid, srho_tau[shape] * weight.exp_weight() * (f_vals**2 + g_vals**2)
    )
    return lhs, rhs_obs, rhs_src


def carleman_sides_3x3(coeffs, data, u, v, w, weight, omega,
                       tol_nu=1e-8, residual_tol=1e-8):
    """The 3x3 analogue; the observation block uses the order-4 parabolic norm
    of u and the order-2 norm of the first source."""
    grid = weight.grid
    check_assumption_52(coeffs, omega, grid, tol_nu)
    _, rel = residual_3x3(coeffs, data, grid, u, v, w)
    if rel > residual_tol:
        raise NotASolutionError(
            f"(u,v,w) fails the scheme residual check: {rel:.3g} > {residual_tol:.3g}"
        )
    f_vals, g_vals, h_vals = data.sources
    lhs = _integrate(grid, _lhs_terms([u, v, w], weight))
    rhs_obs = (
        parabolic_norm(u, 4, omega) ** 2
        + parabolic_norm(SpaceTimeField(grid, f_vals), 2, omega) ** 2
        + l2_norm(SpaceTimeField(grid, g_vals), omega) ** 2
        + l2_norm(SpaceTimeField(grid, h_vals), omega) ** 2
    )
    wgt = weight.exp_weight()
    rhs_src = _integrate(grid, wgt * (f_vals**2 + g_vals**2 + h_vals**2))
    return lhs, rhs_obs, rhs_src


def check_assumption_52(coeffs, omega, grid, tol_nu=1e-8):
    """Assumption checks of the 3x3 estimate: the a13 floor and the
    non-tangency of grad(a12) - (a12/a13) grad(a13) on gamma."""
    from .transforms import check_assumption_normal

    a12 = coeffs.a[0][1]
    a13 = coeffs.a[0][2]
    floor = float(np.min(np.abs(a13)))
    if floor < tol_nu:
        raise AssumptionError(f"|a13| reaches {floor:.3g}; needs a positive floor")
    steps = [0]
    if a12.ndim > grid.dim or a13.ndim > grid.dim:
        steps = range(grid.nt + 1)
    worst = np.inf
    for k in steps:
        a12k = a12 if a12.ndim == grid.dim else a12[k]
        a13k = a13 if a13.ndim == grid.dim else a13[k]
        vec = np.stack(
            [
                g12 - a12k / a13k * g13
                for g12, g13 in zip(
                    fd.spatial_gradient(a12k, grid, time_dep=False),
                    fd.spatial_gradient(a13k, grid, time_dep=False),
                )
            ]
        )
        ok, margin = check_assumption_normal(vec, omega, grid, tol_nu)
        worst = min(worst, margin)
        if not ok:
            raise AssumptionError(
                f"(grad a12 - (a12/a13) grad a13) . nu = {margin:.3g} on gamma "
                f"is below tol_nu = {tol_nu:.3g}"
            )
    return worst


# ---------------------------------------------------------------------------
# Ratio audits over an s-sweep
# ---------------------------------------------------------------------------

@dataclass
class AuditRow:
    s: float
    instance: int
    lhs: float
    rhs_obs: float
    rhs_src: float

    @property
    def ratio(self):
        denom = self.rhs_obs + self.rhs_src
        if denom == 0.0:
            return math.nan
        return self.lhs / denom


@dataclass
class CarlemanAudit:
    rows: list
    s_grid: list
    degenerate: list = dc_field(default_factory=list)

    def max_ratio(self, s):
        vals = [r.ratio for r in self.rows if r.s == s and not math.isnan(r.ratio)]
        return max(vals) if vals else math.nan

    @property
    def max_ratios(self):
        return [self.max_ratio(s) for s in self.s_grid]

    @property
    def s0(self):
        """Smallest s from which the max ratio is non-increasing to the end."""
        ratios = self.max_ratios
        for i, s in enumerate(self.s_grid):
            tail = [r for r in ratios[i:] if not math.isnan(r)]
            if all(b <= a * (1.0 + 1e-12) for a, b in zip(tail, tail[1:])):
                return s
        return None

    @property
    def bounded(self):
        return all(math.isfinite(r) for r in self.max_ratios if not math.isnan(r))

    def passed(self, ratio_cap=None):
        if not self.bounded or self.s0 is None:
            return False
        if ratio_cap is None:
            return True
        idx = self.s_grid.index(self.s0)
        return all(
            r <= ratio_cap for r in self.max_ratios[idx:] if not math.isnan(r)
        )


def audit_carleman_2x2(instances, omega, grid, s_grid, lam=2.0, tau=1.0):
    """Per-s maximum of lhs / (rhs_obs + rhs_src) over solved 2x2 instances.

    Each instance is a tuple (coeffs, data, u, v).  Degenerate 0/0 instances
    are flagged and excluded from the max.
    """
    base = build_weight(grid, omega, lam=lam, s=1.0, tau=tau)
    rows, degenerate = [], []
    for s in s_grid:
        w = base.with_s(s)
        for i, (coeffs, data, u, v) in enumerate(instances):
            lhs, robs, rsrc = carleman_sides_2x2(coeffs, data, u, v, w, omega)
            row = AuditRow(s, i, lhs, robs, rsrc)
            rows.append(row)
            if math.isnan(row.ratio) and (s, i) not in degenerate:
                degenerate.append((s, i))
    return CarlemanAudit(rows, list(s_grid), degenerate)


def audit_carleman_3x3(instances, omega, grid, s_grid, lam=2.0, tau=1.0,
                       tol_nu=1e-8):
    """3x3 analogue of the ratio audit; instances are (coeffs, data, u, v, w)."""
    base = build_weight(grid, omega, lam=lam, s=1.0, tau=tau)
    rows, degenerate = [], []
    for s in s_grid:
        wgt = base.with_s(s)
        for i, (coeffs, data, u, v, w) in enumerate(instances):
            lhs, robs, rsrc = carleman_sides_3x3(
                coeffs, data, u, v, w, wgt, omega, tol_nu=tol_nu
            )
            row = AuditRow(s, i, lhs, robs, rsrc)
            rows.append(row)
            if math.isnan(row.ratio) and (s, i) not in degenerate:
                degenerate.append((s, i))
    return CarlemanAudit(rows, list(s_grid), degenerate)


# ---------------------------------------------------------------------------
# The two integral lemmas (explicit constants)
# ---------------------------------------------------------------------------

def _require_centered_theta(grid):
    if abs(grid.T - 2.0 * grid.theta) > 0.5 * grid.dt:
        raise ValueError(
            f"this check needs T = 2 theta; got T = {grid.T}, theta = {grid.theta}. "
            "Restrict the window first."
        )


def lemma31_check(g_vals, grid, s, kappa0=1.0):
    """Both sides of the anchored-integral inequality

        int |int_theta^t g|^2 e^{-2 s (t-theta)^2} dt
            <= 1/(4 s kappa0) * int |g|^2 e^{-2 s (t-theta)^2} dt

    for a scalar time series g.  This is a theorem for T = 2 theta, so a
    violation beyond quadrature slack indicates a bug.
    """
    _require_centered_theta(grid)
    g_vals = np.asarray(g_vals, dtype=float)
    t = grid.t_nodes
    if g_vals.shape != t.shape:
        raise ValueError(f"g must be a time series of {t.shape} values")
    w = np.exp(-2.0 * s * (t - grid.theta) ** 2)
    G = fd.cumint_from(g_vals, grid.dt, grid.k_theta)
    wt = time_weights(grid)
    lhs = float(np.sum(wt * G**2 * w))
    rhs = float(np.sum(wt * g_vals**2 * w)) / (4.0 * s * kappa0)
    return lhs, rhs


@dataclass
class Lemma32Result:
    lhs: float
    rhs: float
    kappa17_hat: float
    log_scale: float


def lemma32_check(q_field, grid, s, delta, alpha=None, omega_prime=None, lam=2.0):
    """Both sides of the shifted-window inequality

        int int |int_theta^t q|^2 e^{-2 s eta} <= kappa17 / s * int int |q|^2 e^{-2 s eta}

    with eta(x,t) = alpha(x) / ((t - delta)(T - delta - t)).  Returns the two
    integrals and the empirical constant kappa17_hat = s * lhs / rhs, computed
    with a common exponent shift so that large s cannot underflow the ratio.
    """
    _require_centered_theta(grid)
    if not 0.0 < delta < grid.theta:
        raise ValueError(f"delta = {delta} must lie in (0, theta)")
    if alpha is None:
        region = omega_prime if omega_prime is not None else whole_domain_mask(grid)
        alpha = build_weight(grid, region, lam=lam).alpha
    q_vals = q_field.values if isinstance(q_field, SpaceTimeField) else q_field
    t = grid.t_nodes
    k0 = grid.time_index(delta)
    k1 = grid.time_index(grid.T - delta)
    inner = slice(k0 + 1, k1)
    ell = (t[inner] - t[k0]) * (t[k1] - t[inner])
    shape = (slice(None),) + (None,) * grid.dim
    expo = -2.0 * s * alpha[None] / ell[shape]
    log_scale = float(expo.max())
    w = np.exp(expo - log_scale)

    Q = fd.cumint_from(q_vals, grid.dt, grid.k_theta)
    wt = np.full(k1 - k0 + 1, grid.dt)
    wt[0] = wt[-1] = 0.5 * grid.dt
    wt = wt[1:-1]  # endpoint slabs of the shifted window carry zero weight
    wx = space_weights(grid)
    lhs_sc = float(np.sum(np.tensordot(wt, Q[inner] ** 2 * w * wx, axes=(0, 0))))
    rhs_sc = float(np.sum(np.tensordot(wt, q_vals[inner] ** 2 * w * wx, axes=(0, 0))))
    kappa17 = s * lhs_sc / rhs_sc if rhs_sc > 0.0 else math.nan
    scale = math.exp(log_scale) if log_scale > -700 else 0.0
    return Lemma32Result(lhs_sc * scale, rhs_sc * scale, kappa17, log_scale)


def lemma23_weighted_estimate(u, rhs_f, p, q, omega, grid, s, tol_nu=None,
                              residual_tol=1e-10):
    """Weighted transport estimate: with the normal-coordinate weight
    w = exp(2 s phi0),

        s^2 * int |u|^2 w  vs  int |f|^2 w   over omega x (0, T),

    returning (lhs, rhs, kappa_hat = lhs / rhs).  u must solve the transport
    equation with u = 0 on gamma."""
    from .forward import transport_residual

    res = transport_residual(p, q, rhs_f, omega, grid, u)
    if res > residual_tol:
        raise NotASolutionError(
            f"u fails the transport stencil residual: {res:.3g} > {residual_tol:.3g}"
        )
    local = build_local_weight(grid, omega, s)
    w = local.space_weight()
    uv = u.values if isinstance(u, SpaceTimeField) else u
    fv = rhs_f.values if isinstance(rhs_f, SpaceTimeField) else np.asarray(rhs_f, float)
    if fv.shape == grid.shape:
        fv = np.broadcast_to(fv, (grid.nt + 1,) + grid.shape)
    lhs = s**2 * _integrate(grid, uv**2 * w[None], region=omega)
    rhs = _integrate(grid, fv**2 * w[None], region=omega)
    kappa = lhs / rhs if rhs > 0.0 else math.nan
    return lhs, rhs, kappa
