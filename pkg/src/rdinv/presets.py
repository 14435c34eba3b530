"""Named analytic presets and seeded smooth random fields.

Random instances are parametrized by low-order Fourier coefficients drawn
from a seeded generator, so the same instance can be materialized on any
grid; that is what makes the grid-refinement comparisons of the sweeps
meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import CoefficientSet2x2, CoefficientSet3x3, ProblemData, solve_2x2, solve_3x3
from .geometry import interval_mask


def _unit_coords(grid):
    out = []
    for ax in range(grid.dim):
        lo, hi = grid.extent[ax]
        out.append((grid.meshgrid()[ax] - lo) / (hi - lo))
    return out


def smooth_profile(rng, grid, amplitude=1.0, kmax=4, zero_boundary=False):
    """Random smooth spatial profile from a few Fourier modes, sup-norm
    bounded by ``amplitude``."""
    xs = _unit_coords(grid)
    field = np.zeros(grid.shape)
    for ax, xi in enumerate(xs):
        for j in range(1, kmax + 1):
            cj = rng.standard_normal() / j**2
            field = field + cj * np.sin(j * np.pi * xi)
            if not zero_boundary:
                field = field + (rng.standard_normal() / j**2) * np.cos(
                    j * np.pi * xi
                )
    if not zero_boundary:
        field = field + rng.standard_normal()
    sup = float(np.max(np.abs(field)))
    if sup > 0:
        field = field * (amplitude / sup) * float(rng.uniform(0.3, 1.0))
    return field


def smooth_positive_profile(rng, grid, low=0.8, high=2.0, kmax=3):
    """Smooth spatial profile with values in [low, high]."""
    raw = smooth_profile(rng, grid, amplitude=1.0, kmax=kmax)
    lo, hi = float(raw.min()), float(raw.max())
    span = hi - lo if hi > lo else 1.0
    return low + (high - low) * (raw - lo) / span


def smooth_time_modulation(rng, grid, amplitude=0.3, kmax=2):
    t = grid.t_nodes / grid.T
    mod = np.ones_like(t)
    for j in range(1, kmax + 1):
        mod = mod + amplitude * rng.standard_normal() / j * np.sin(j * np.pi * t)
    return mod


def smooth_spacetime(rng, grid, amplitude=1.0, kmax=4, zero_boundary=False):
    prof = smooth_profile(rng, grid, amplitude, kmax, zero_boundary)
    mod = smooth_time_modulation(rng, grid)
    return mod[(slice(None),) + (None,) * grid.dim] * prof[None]


def random_coefficients_2x2(rng, grid, bound=1.0, convection=True):
    """Random smooth coefficient set within the declared sup-norm bound; the
    cross-coupling convection field is kept bounded away from zero so the
    normal-component hypothesis holds on any boundary edge."""
    amp = 0.45 * bound

    def scal():
        return smooth_profile(rng, grid, amplitude=amp, kmax=3)

    def vect(floor=0.0):
        comps = []
        for _ in range(grid.dim):
            base = smooth_profile(rng, grid, amplitude=amp, kmax=2)
            if floor > 0.0:
                sign = 1.0 if rng.uniform() < 0.5 else -1.0
                base = sign * (floor + np.abs(base))
            comps.append(base)
        return np.stack(comps)

    return CoefficientSet2x2(
        grid,
        a=scal(), b=scal(), c=scal(), d=scal(),
        A=vect() if convection else None,
        B=vect(floor=0.1 * bound) if convection else None,
        C=vect() if convection else None,
        D=vect() if convection else None,
        sup_bound=bound if convection else None,
    )


def random_coefficients_3x3(rng, grid, bound=1.0, time_dep=True):
    """Random 3x3 reaction matrix satisfying the structural hypotheses: a13
    bounded away from zero and a12 with a nonzero normal derivative."""
    xs = _unit_coords(grid)

    def entry():
        prof = smooth_profile(rng, grid, amplitude=0.4 * bound, kmax=3)
        if not time_dep:
            return prof
        mod = smooth_time_modulation(rng, grid, amplitude=0.2)
        return mod[(slice(None),) + (None,) * grid.dim] * prof[None]

    a = [[entry() for _ in range(3)] for _ in range(3)]
    a[0][1] = 0.5 * bound * (0.6 + 0.5 * xs[0])   # grad a12 . nu != 0 on gamma
    a[0][2] = np.full(grid.shape, 0.6 * bound)    # |a13| floor
    return CoefficientSet3x3(grid, a, sup_bound=bound)


def carleman_instances_2x2(rng, grid, n, bound=1.0, source_amp=1.0):
    """Solved random instances of the zero-Dirichlet 2x2 system for the
    ratio audit: (coeffs, data, u, v) tuples."""
    out = []
    for _ in range(n):
        coeffs = random_coefficients_2x2(rng, grid, bound)
        data = ProblemData(
            grid, 2,
            sources=(
                smooth_spacetime(rng, grid, source_amp, zero_boundary=True),
                smooth_spacetime(rng, grid, source_amp, zero_boundary=True),
            ),
            initial=(
                smooth_profile(rng, grid, 1.0, zero_boundary=True),
                smooth_profile(rng, grid, 1.0, zero_boundary=True),
            ),
        )
        u, v = solve_2x2(coeffs, data, grid)
        out.append((coeffs, data, u, v))
    return out


def carleman_instances_3x3(rng, grid, n, bound=1.0, source_amp=1.0):
    out = []
    for _ in range(n):
        coeffs = random_coefficients_3x3(rng, grid, bound)
        data = ProblemData(
            grid, 3,
            sources=tuple(
                smooth_spacetime(rng, grid, source_amp, zero_boundary=True)
                for _ in range(3)
            ),
            initial=tuple(
                smooth_profile(rng, grid, 1.0, zero_boundary=True)
                for _ in range(3)
            ),
        )
        u, v, w = solve_3x3(coeffs, data, grid)
        out.append((coeffs, data, u, v, w))
    return out


@dataclass
class DifferencePairSpec:
    """Grid-transferable random instance for the stability sweep.

    All ingredients are analytic with seeded Fourier parameters, so the same
    physical instance can be evaluated on a refined grid.
    """

    seed: int
    bound: float = 1.0
    eps: float = 1.0
    convection: bool = True

    def materialize(self, grid):
        rng = np.random.default_rng(self.seed)
        coeffs = random_coefficients_2x2(rng, grid, self.bound, self.convection)
        Ut = smooth_positive_profile(rng, grid, 1.0, 2.0)
        Vt = smooth_positive_profile(rng, grid, 1.0, 2.0)
        y0 = self.eps * smooth_profile(rng, grid, 1.0, kmax=3, zero_boundary=True)
        z0 = self.eps * smooth_profile(rng, grid, 1.0, kmax=3, zero_boundary=True)
        return coeffs, Ut, Vt, y0, z0

    def rescaled(self, eps):
        return DifferencePairSpec(self.seed, self.bound, eps, self.convection)


# ---------------------------------------------------------------------------
# Named presets for the experiment runner
# ---------------------------------------------------------------------------

def coefficient_preset_2x2(name, grid, rng=None):
    x = _unit_coords(grid)[0]
    if name == "zero":
        return CoefficientSet2x2(grid, a=0.0, b=0.0, c=0.0, d=0.0)
    if name == "decoupled-heat":
        return CoefficientSet2x2(grid, a=0.0, b=0.0, c=0.0, d=0.0)
    if name == "weak-coupling":
        return CoefficientSet2x2(
            grid, a=-0.2, b=0.5, c=0.5, d=-0.2, B=(0.3,) * grid.dim,
        )
    if name == "convection":
        return CoefficientSet2x2(
            grid, a=0.2 * np.sin(np.pi * x), b=0.4, c=0.3, d=-0.1,
            A=(0.5,) * grid.dim, B=(0.3,) * grid.dim,
            C=(-0.2,) * grid.dim, D=(0.2,) * grid.dim,
        )
    if name == "random":
        if rng is None:
            raise ValueError("the 'random' preset needs a seeded generator")
        return random_coefficients_2x2(rng, grid)
    raise ValueError(f"unknown 2x2 coefficient preset {name!r}")


def coefficient_preset_3x3(name, grid, rng=None):
    x = _unit_coords(grid)[0]
    if name == "zero":
        return CoefficientSet3x3(grid, [[0.0] * 3 for _ in range(3)])
    if name == "diagonal":
        return CoefficientSet3x3(
            grid, [[0.7, 0.0, 0.0], [0.0, 0.7, 0.0], [0.0, 0.0, 0.7]]
        )
    if name == "coupled":
        return CoefficientSet3x3(
            grid,
            [[-0.1, 0.3 + 0.2 * x, 0.5],
             [0.5, -0.2, 0.2],
             [0.4, 0.3, -0.1]],
        )
    if name == "random":
        if rng is None:
            raise ValueError("the 'random' preset needs a seeded generator")
        return random_coefficients_3x3(rng, grid)
    raise ValueError(f"unknown 3x3 coefficient preset {name!r}")


def data_preset(name, grid, n_comp, rng=None):
    x = _unit_coords(grid)[0]
    if name == "zero":
        return ProblemData.zero(grid, n_comp)
    if name == "heat-sine":
        init = [np.sin(np.pi * x)] + [np.zeros(grid.shape)] * (n_comp - 1)
        return ProblemData(grid, n_comp, initial=tuple(init))
    if name == "sign-changing":
        init = [np.sin(2.0 * np.pi * x), -0.4 * np.sin(np.pi * x)]
        init += [np.zeros(grid.shape)] * (n_comp - 2)
        return ProblemData(grid, n_comp, initial=tuple(init[:n_comp]))
    if name == "random":
        if rng is None:
            raise ValueError("the 'random' preset needs a seeded generator")
        return ProblemData(
            grid, n_comp,
            sources=tuple(
                smooth_spacetime(rng, grid, 1.0, zero_boundary=True)
                for _ in range(n_comp)
            ),
            initial=tuple(
                smooth_profile(rng, grid, 1.0, zero_boundary=True)
                for _ in range(n_comp)
            ),
        )
    raise ValueError(f"unknown data preset {name!r}")


def default_masks(grid):
    """The standard nested regions: omega touching the right boundary,
    omega1 a boundary neighbourhood containing it, omega_prime a collar of
    omega near gamma."""
    lo = [b[0] for b in grid.extent]
    hi = [b[1] for b in grid.extent]
    span = [h - l for l, h in zip(lo, hi)]

    def frac(q):
        return [l + q * s for l, s in zip(lo, span)]

    omega = interval_mask(grid, frac(0.6), hi, "omega", gamma_edge=(0, +1))
    omega1_ind = interval_mask(grid, frac(0.55), hi, "omega1").indicator \
        | interval_mask(grid, lo, frac(0.1), "left").indicator
    from .geometry import mask_from_indicator
    omega1 = mask_from_indicator(grid, omega1_ind, "omega1")
    omega_prime = interval_mask(grid, frac(0.8), hi, "omega_prime",
                                gamma_edge=(0, +1))
    return omega, omega1, omega_prime
