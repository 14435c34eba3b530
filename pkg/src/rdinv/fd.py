"""Finite-difference stencils shared by norms, transforms and audits.

All first derivatives are second-order centered with second-order one-sided
closures at array edges (the ``np.gradient`` convention).  Second derivatives
use the 3-point stencil in the interior and a 4-point one-sided stencil at the
edges, so they stay second-order accurate everywhere.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import cumulative_trapezoid


def diff_time(arr, dt):
    """First time derivative of a (nt+1, ...) array."""
    return np.gradient(arr, dt, axis=0, edge_order=2)


def diff_axis(arr, dx, axis):
    """First derivative along one axis."""
    return np.gradient(arr, dx, axis=axis, edge_order=2)


def second_diff(arr, dx, axis):
    """Second derivative along one axis, 3-point interior stencil."""
    out = np.empty_like(arr, dtype=float)
    a = np.moveaxis(arr, axis, 0)
    o = np.moveaxis(out, axis, 0)
    o[1:-1] = (a[2:] - 2.0 * a[1:-1] + a[:-2]) / dx**2
    o[0] = (2.0 * a[0] - 5.0 * a[1] + 4.0 * a[2] - a[3]) / dx**2
    o[-1] = (2.0 * a[-1] - 5.0 * a[-2] + 4.0 * a[-3] - a[-4]) / dx**2
    return out


def spatial_gradient(values, grid, time_dep=True):
    """Gradient of a spatial or space-time array; returns one array per axis."""
    off = 1 if time_dep else 0
    return [
        diff_axis(values, grid.dx[ax], axis=off + ax) for ax in range(grid.dim)
    ]


def laplacian(values, grid, time_dep=True):
    off = 1 if time_dep else 0
    out = np.zeros_like(values, dtype=float)
    for ax in range(grid.dim):
        out += second_diff(values, grid.dx[ax], axis=off + ax)
    return out


def cumint_from(arr, dt, k0):
    """Trapezoidal cumulative integral along axis 0, anchored at index k0:
    result[k] = integral from t_{k0} to t_k."""
    ct = cumulative_trapezoid(arr, dx=dt, axis=0, initial=0.0)
    return ct - ct[k0]


def diff_time_at(arr, dt, k):
    """Fourth-order centered first time derivative at index k (needs k +- 2)."""
    if k < 2 or k > arr.shape[0] - 3:
        raise ValueError(f"index {k} too close to the ends for the 5-point stencil")
    return (
        -arr[k + 2] + 8.0 * arr[k + 1] - 8.0 * arr[k - 1] + arr[k - 2]
    ) / (12.0 * dt)


def diff_time_at_forward(arr, dt, k):
    """Fourth-order one-sided (forward) first time derivative at index k.

    Preferred at an anchoring time when the levels below it would have to be
    produced by reverse-marching a parabolic step, which amplifies the
    high-frequency content of boundary-incompatible data.
    """
    if k > arr.shape[0] - 5:
        raise ValueError(f"index {k} too close to the end for the 5-point stencil")
    return (
        -25.0 * arr[k] + 48.0 * arr[k + 1] - 36.0 * arr[k + 2]
        + 16.0 * arr[k + 3] - 3.0 * arr[k + 4]
    ) / (12.0 * dt)


# One-sided 5-point derivative weights that are exact on cubics and have unit
# response to an arbitrarily stiff implicit-Euler relaxation mode integrated
# by the anchored trapezoid rule (the extra condition replaces 4th-order
# accuracy; it is what keeps boundary-incompatible snapshot data from
# polluting the derivative).
_ANCHORED_W = np.array([-2.0, 11.0 / 3.0, -2.5, 1.0, -1.0 / 6.0])


def diff_time_at_anchored(arr, dt, k):
    """Forward derivative at index k of an anchored-integral trajectory."""
    if k > arr.shape[0] - 5:
        raise ValueError(f"index {k} too close to the end for the 5-point stencil")
    acc = _ANCHORED_W[0] * arr[k]
    for j in range(1, 5):
        acc = acc + _ANCHORED_W[j] * arr[k + j]
    return acc / dt
