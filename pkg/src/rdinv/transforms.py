"""Algebraic reductions of the coupled systems.

The quotient substitution u/Vtilde, v/Utilde turns coefficient differences
into source terms; differentiating in time and anchoring integrals at theta
gives the systems the weighted audits run on.  All discrete derivatives here
use the same stencils as the forward solver, so the residual-consistency
checks close at the discretization order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fd
from .geometry import Grid, SpaceTimeField


class DegeneracyError(ValueError):
    """A quotient or reduction hits its positivity floor."""


class HypothesisViolationError(ValueError):
    """An anchoring hypothesis (zero snapshot at theta) fails."""


def _vals(f):
    return f.values if isinstance(f, SpaceTimeField) else np.asarray(f, dtype=float)


def _spacetime(arr, grid):
    arr = np.asarray(arr, dtype=float)
    if arr.shape == grid.shape:
        arr = np.broadcast_to(arr, (grid.nt + 1,) + grid.shape).copy()
    return arr


def _check_floor(arr, delta0, label):
    worst = float(np.min(np.abs(arr)))
    if worst < delta0:
        flat = int(np.argmin(np.abs(arr)))
        idx = np.unravel_index(flat, arr.shape)
        raise DegeneracyError(
            f"|{label}| = {worst:.3g} < delta0 = {delta0:.3g} first at node {idx}"
        )


def default_delta0(Ut, Vt):
    """1e-3 of the larger reference amplitude."""
    return 1e-3 * max(float(np.max(np.abs(_vals(Ut)))),
                      float(np.max(np.abs(_vals(Vt)))))


def quotient_fields(u, v, Ut, Vt, delta0):
    """Pointwise quotients (u / Vtilde, v / Utilde) with a positivity floor."""
    Ut_v, Vt_v = _vals(Ut), _vals(Vt)
    _check_floor(Ut_v, delta0, "Utilde")
    _check_floor(Vt_v, delta0, "Vtilde")
    return _vals(u) / Vt_v, _vals(v) / Ut_v


@dataclass
class DerivedCoeffs2x2:
    """The coefficient fields of the quotient system, all on Omega_T.

    Scalars a11, a12, a21, a22; convection vectors A13, A14, A23, A24 stored
    as (nt+1, dim, ...) arrays; the ratio W = Utilde/Vtilde, its logarithmic
    time derivative W1, and the transport coefficients b1 = a12/W,
    b2 = dt(a12)/W.
    """

    a11: np.ndarray
    a12: np.ndarray
    a21: np.ndarray
    a22: np.ndarray
    A13: np.ndarray
    A14: np.ndarray
    A23: np.ndarray
    A24: np.ndarray
    W: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    b2: np.ndarray


def derive_coeffs_2x2(coeffs, Ut, Vt, delta0, grid=None):
    """Derived coefficients of the quotient system from the original set and
    the reference pair.  Requires |Utilde|, |Vtilde| >= delta0 everywhere."""
    grid = grid or coeffs.grid
    Ut_v = _spacetime(_vals(Ut), grid)
    Vt_v = _spacetime(_vals(Vt), grid)
    _check_floor(Ut_v, delta0, "Utilde")
    _check_floor(Vt_v, delta0, "Vtilde")

    dt_U = fd.diff_time(Ut_v, grid.dt)
    dt_V = fd.diff_time(Vt_v, grid.dt)
    lap_U = fd.laplacian(Ut_v, grid)
    lap_V = fd.laplacian(Vt_v, grid)
    grad_U = np.stack(fd.spatial_gradient(Ut_v, grid), axis=1)
    grad_V = np.stack(fd.spatial_gradient(Vt_v, grid), axis=1)

    def vec(coeff):
        # (dim, ...) -> (nt+1, dim, ...) broadcast
        if coeff.ndim == grid.dim + 1:
            return np.broadcast_to(coeff[None], (grid.nt + 1,) + coeff.shape)
        return coeff

    A = vec(coeffs.A)
    B = vec(coeffs.B)
    C = vec(coeffs.C)
    D = vec(coeffs.D)

    def dot(vecfield, grad):
        return np.sum(vecfield * grad, axis=1)

    W = Ut_v / Vt_v
    a11 = coeffs.a[None] - dt_V / Vt_v + lap_V / Vt_v + dot(A, grad_V) / Vt_v
    a12 = coeffs.b[None] * W + dot(B, grad_U) / Vt_v
    A13 = A + 2.0 * grad_V / Vt_v[:, None]
    A14 = B * W[:, None]
    a21 = coeffs.c[None] * Vt_v / Ut_v + dot(C, grad_V) / Ut_v
    a22 = coeffs.d[None] - dt_U / Ut_v + lap_U / Ut_v + dot(D, grad_U) / Ut_v
    A23 = C * (Vt_v / Ut_v)[:, None]
    A24 = D + 2.0 * grad_U / Ut_v[:, None]
    W1 = fd.diff_time(W, grid.dt) / W
    b1 = a12 / W
    b2 = fd.diff_time(a12, grid.dt) / W
    return DerivedCoeffs2x2(a11, a12, a21, a22, A13, A14, A23, A24, W, W1, b1, b2)


def quotient_system_residual(derived, utilde, vtilde, f, g, grid):
    """Discrete residual of the quotient system on interior nodes.

    Substituting the derived coefficients and the quotient pair back into the
    transformed equations must leave a residual at the discretization order.
    """
    ut = _spacetime(_vals(utilde), grid)
    vt = _spacetime(_vals(vtilde), grid)
    f_v = _spacetime(_vals(f), grid)
    g_v = _spacetime(_vals(g), grid)

    def dot(vecfield, grads):
        return np.sum(vecfield * np.stack(grads, axis=1), axis=1)

    r1 = (
        fd.diff_time(ut, grid.dt)
        - fd.laplacian(ut, grid)
        - derived.a11 * ut
        - derived.a12 * vt
        - dot(derived.A13, fd.spatial_gradient(ut, grid))
        - dot(derived.A14, fd.spatial_gradient(vt, grid))
        - f_v
    )
    r2 = (
        fd.diff_time(vt, grid.dt)
        - fd.laplacian(vt, grid)
        - derived.a21 * ut
        - derived.a22 * vt
        - dot(derived.A23, fd.spatial_gradient(ut, grid))
        - dot(derived.A24, fd.spatial_gradient(vt, grid))
        - g_v
    )
    sl = (slice(1, grid.nt),) + grid.interior_slices()
    return max(float(np.max(np.abs(r1[sl]))), float(np.max(np.abs(r2[sl]))))


def time_derivative_pair(utilde, vtilde, grid, snapshot_tol=1e-10):
    """Time derivatives (y, z) of the quotient pair, anchored at theta.

    The pair must vanish at theta (the matched-snapshot hypothesis); the
    centered-difference derivative round-trips through the anchored integral
    to second order in dt.
    """
    ut = _vals(utilde)
    vt = _vals(vtilde)
    k = grid.k_theta
    worst = max(float(np.max(np.abs(ut[k]))), float(np.max(np.abs(vt[k]))))
    if worst > snapshot_tol:
        raise HypothesisViolationError(
            f"quotient pair is {worst:.3g} at theta; the anchoring hypothesis "
            f"requires |.| <= {snapshot_tol:.3g}"
        )
    return fd.diff_time(ut, grid.dt), fd.diff_time(vt, grid.dt)


def w_transform(z, W1, grid):
    """w(x,t) = z(x,t) + W1(x,t) * int_theta^t z(x,xi) dxi; w(.,theta) = z(.,theta)."""
    z_v = _spacetime(_vals(z), grid)
    W1_v = _spacetime(_vals(W1), grid)
    return z_v + W1_v * fd.cumint_from(z_v, grid.dt, grid.k_theta)


@dataclass
class Reduced3x3Coeffs:
    """Coefficients of the reduced (u, z, v) system, z = a12 v + a13 w."""

    Avec: np.ndarray
    Bvec: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    e: np.ndarray
    G: np.ndarray
    a12: np.ndarray
    a13: np.ndarray

    def z_of(self, v, w):
        return self.a12 * _vals(v) + self.a13 * _vals(w)


def reduce_3x3(coeffs, g, h, grid=None, tol13=1e-8):
    """Derived coefficients of the one-component reduction of the 3x3 system."""
    grid = grid or coeffs.grid
    a = [[_spacetime(coeffs.a[i][j], grid) for j in range(3)] for i in range(3)]
    a12, a13 = a[0][1], a[0][2]
    _check_floor(a13, tol13, "a13")
    g_v = _spacetime(_vals(g), grid)
    h_v = _spacetime(_vals(h), grid)

    grad12 = np.stack(fd.spatial_gradient(a12, grid), axis=1)
    grad13 = np.stack(fd.spatial_gradient(a13, grid), axis=1)
    dt13 = fd.diff_time(a13, grid.dt)
    dt12 = fd.diff_time(a12, grid.dt)
    lap13 = fd.laplacian(a13, grid)
    lap12 = fd.laplacian(a12, grid)
    ratio = a12 / a13
    grad_ratio = np.stack(fd.spatial_gradient(ratio, grid), axis=1)
    grad13_sq = np.sum(grad13**2, axis=1)

    Avec = -2.0 * grad13 / a13[:, None]
    Bvec = -2.0 * grad12 + 2.0 * ratio[:, None] * grad13
    a_red = 2.0 * grad13_sq / a13**2 + a[2][2] + (a12 * a[1][2] + dt13 - lap13) / a13
    b_red = (
        a12 * a[1][1]
        + a13 * a[2][1]
        + dt12
        - lap12
        + 2.0 * np.sum(grad13 * grad_ratio, axis=1)
        - ratio * (a12 * a[1][2] + a13 * a[2][2] + dt13 - lap13)
    )
    c_red = a[1][2] / a13
    d_red = a[1][1] - a12 * a[1][2] / a13
    e_red = a[1][0] * a12 + a[2][0] * a13
    G = a12 * g_v + a13 * h_v
    return Reduced3x3Coeffs(Avec, Bvec, a_red, b_red, c_red, d_red, e_red, G,
                            a12, a13)


def reduced_system_residual(coeffs, red, u, v, w, f, g, grid):
    """Discrete residual of the reduced system's z- and v-equations."""
    u_v = _vals(u)
    v_v = _vals(v)
    z = red.z_of(v, w)
    f_v = _spacetime(_vals(f), grid)
    g_v = _spacetime(_vals(g), grid)
    a = [[_spacetime(coeffs.a[i][j], grid) for j in range(3)] for i in range(3)]

    def dot(vecfield, grads):
        return np.sum(vecfield * np.stack(grads, axis=1), axis=1)

    r1 = (
        fd.diff_time(u_v, grid.dt)
        - fd.laplacian(u_v, grid)
        - a[0][0] * u_v
        - z
        - f_v
    )
    r2 = (
        fd.diff_time(z, grid.dt)
        - fd.laplacian(z, grid)
        - dot(red.Avec, fd.spatial_gradient(z, grid))
        - red.a * z
        - red.e * u_v
        - dot(red.Bvec, fd.spatial_gradient(v_v, grid))
        - red.b * v_v
        - red.G
    )
    r3 = (
        fd.diff_time(v_v, grid.dt)
        - fd.laplacian(v_v, grid)
        - a[1][0] * u_v
        - red.d * v_v
        - red.c * z
        - g_v
    )
    sl = (slice(1, grid.nt),) + grid.interior_slices()
    return max(
        float(np.max(np.abs(r[sl]))) for r in (r1, r2, r3)
    )


def check_assumption_normal(fieldvec, omega, grid, tol_nu):
    """min over gamma of |field . nu| against tol_nu; returns (ok, margin)."""
    if not omega.gamma:
        raise ValueError("omega has empty gamma")
    normals = omega.gamma_normals(grid)
    arr = np.asarray(fieldvec, dtype=float)
    if arr.shape == (grid.dim,):
        arr = np.broadcast_to(
            arr.reshape((grid.dim,) + (1,) * grid.dim), (grid.dim,) + grid.shape
        )
    time_dep = arr.ndim == grid.dim + 2
    steps = range(grid.nt + 1) if time_dep else (0,)
    margin = np.inf
    for k in steps:
        cur = arr[k] if time_dep else arr
        for row, idx in enumerate(omega.gamma):
            vec = np.array([cur[ax][tuple(idx)] for ax in range(grid.dim)])
            margin = min(margin, abs(float(np.dot(vec, normals[row]))))
    return margin >= tol_nu, float(margin)


def restrict_time_window(grid, t_lo, t_hi, fields=()):
    """Restrict the grid (and optionally fields) to a time window containing
    theta; theta keeps its absolute position.  This realizes the reduction
    'work on (theta - delta, theta + delta)' as an explicit operation."""
    k0, k1 = grid.time_index(t_lo), grid.time_index(t_hi)
    if not k0 < grid.k_theta < k1:
        raise ValueError("the window must contain theta strictly inside")
    if k1 - k0 < 8:
        raise ValueError("window too short: needs at least 8 steps")
    sub = Grid(grid.dim, grid.extent, grid.nx, (k1 - k0) * grid.dt, k1 - k0,
               (grid.k_theta - k0) * grid.dt)
    out = [SpaceTimeField(sub, _vals(f)[k0:k1 + 1].copy()) for f in fields]
    return sub, out


def centered_window(grid, delta, fields=()):
    """Window (theta - delta, theta + delta), giving T' = 2 theta'."""
    return restrict_time_window(grid, grid.theta - delta, grid.theta + delta, fields)
