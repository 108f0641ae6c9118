"""Dirichlet Laplace solves and the boundary lifts used by the estimate
monitors.

1D solves are exact linear interpolants evaluated on cell centres.  2D
solves run red-black SOR on the node lattice of the rectangle (the grid's
faces), with the over-relaxation factor at the model-problem optimum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dk.domain import Grid
from dk.errors import SolverError


@dataclass
class HarmonicField:
    """Solution of -Laplace u = 0 with Dirichlet data.

    ``values`` lives on cell centres in 1D and on the (nx+1, ny+1) node
    lattice in 2D.  ``normal_derivative`` holds outward-normal derivatives
    per boundary entry (two scalars in 1D; one array per side in 2D,
    computed with a second-order one-sided stencil).
    """

    grid: Grid
    values: np.ndarray
    boundary_data: dict
    normal_derivative: dict
    residual: float

    def max_interior(self) -> float:
        return float(np.max(self.values))

    def min_interior(self) -> float:
        return float(np.min(self.values))


def solve_dirichlet_laplace(grid: Grid, boundary_data, tol: float = 1e-10,
                            max_sweeps: int = 100_000) -> HarmonicField:
    """Solve -Laplace u = 0 with the given Dirichlet data.

    1D: ``boundary_data`` is (left, right); the solution is the exact line
    through the boundary values.  2D: ``boundary_data`` is a callable
    (x, y) -> value evaluated on boundary nodes; red-black SOR iterates
    until the max residual of the five-point stencil drops below ``tol``.
    """
    if grid.dimension == 1:
        left, right = (float(v) for v in boundary_data)
        ext = grid.extent
        slope = (right - left) / ext
        values = left + slope * grid.centers
        # interior second differences of a sampled line vanish to round-off
        lap = values[:-2] - 2.0 * values[1:-1] + values[2:]
        residual = float(np.max(np.abs(lap)) / grid.h ** 2) if values.size > 2 else 0.0
        return HarmonicField(
            grid=grid, values=values,
            boundary_data={"left": left, "right": right},
            normal_derivative={"left": -slope, "right": slope},
            residual=residual)

    fx, fy = grid.nodes
    nx, ny = fx.size - 1, fy.size - 1
    hx = fx[1] - fx[0]
    hy = fy[1] - fy[0]
    if abs(hx - hy) > 1e-12 * max(hx, hy):
        raise SolverError("2D solver requires square cells (hx == hy)")
    h = hx
    X, Y = np.meshgrid(fx, fy, indexing="ij")
    u = np.zeros((nx + 1, ny + 1))
    bd = np.vectorize(boundary_data)
    u[0, :] = bd(X[0, :], Y[0, :])
    u[-1, :] = bd(X[-1, :], Y[-1, :])
    u[:, 0] = bd(X[:, 0], Y[:, 0])
    u[:, -1] = bd(X[:, -1], Y[:, -1])
    # seed the interior with the mean of the data to shorten the transient
    interior_seed = float(np.mean(np.concatenate([u[0, :], u[-1, :], u[:, 0], u[:, -1]])))
    u[1:-1, 1:-1] = interior_seed

    omega = 2.0 / (1.0 + np.sin(np.pi * h / float(np.max(np.atleast_1d(grid.spec.extent)))))
    ii, jj = np.meshgrid(np.arange(1, nx), np.arange(1, ny), indexing="ij")
    red = ((ii + jj) % 2 == 0)
    black = ~red

    def sweep(mask):
        nb = 0.25 * (u[2:, 1:-1] + u[:-2, 1:-1] + u[1:-1, 2:] + u[1:-1, :-2])
        u[1:-1, 1:-1] = np.where(mask, (1 - omega) * u[1:-1, 1:-1] + omega * nb,
                                 u[1:-1, 1:-1])

    residual = np.inf
    for it in range(max_sweeps):
        sweep(red)
        sweep(black)
        if it % 8 == 0 or it == max_sweeps - 1:
            lap = (u[2:, 1:-1] + u[:-2, 1:-1] + u[1:-1, 2:] + u[1:-1, :-2]
                   - 4.0 * u[1:-1, 1:-1]) / h ** 2
            residual = float(np.max(np.abs(lap)))
            scale = max(1.0, float(np.max(np.abs(u))))
            if residual <= tol * scale / h ** 2 or residual <= tol:
                break
    else:
        raise SolverError(f"SOR did not converge: residual {residual:.3g}")

    def one_sided(u0, u1, u2):
        # outward derivative: value decreases into the domain direction
        return (3.0 * u0 - 4.0 * u1 + u2) / (2.0 * h)

    normal = {
        "left": one_sided(u[0, :], u[1, :], u[2, :]),
        "right": one_sided(u[-1, :], u[-2, :], u[-3, :]),
        "bottom": one_sided(u[:, 0], u[:, 1], u[:, 2]),
        "top": one_sided(u[:, -1], u[:, -2], u[:, -3]),
    }
    boundary = {side: normal[side] * 0 for side in normal}
    boundary = {"left": u[0, :].copy(), "right": u[-1, :].copy(),
                "bottom": u[:, 0].copy(), "top": u[:, -1].copy()}
    lap = (u[2:, 1:-1] + u[:-2, 1:-1] + u[1:-1, 2:] + u[1:-1, :-2]
           - 4.0 * u[1:-1, 1:-1]) / h ** 2
    return HarmonicField(grid=grid, values=u, boundary_data=boundary,
                         normal_derivative=normal,
                         residual=float(np.max(np.abs(lap))))


def density_lift(coeffs, grid: Grid, fbar) -> HarmonicField:
    """Harmonic lift of the boundary density Phi^-1(fbar).

    The lift matches the solution's boundary trace, so differences against
    it vanish on the boundary in the energy monitors.
    """
    fb = np.asarray(fbar, dtype=float)
    if np.any(fb < 0):
        raise ValueError("boundary data must be non-negative")
    if grid.dimension != 1:
        raise ValueError("density_lift is used by 1D monitors only")
    data = coeffs.phi_inverse(fb)
    return solve_dirichlet_laplace(grid, (data[0], data[1]))


def clamped_excess_lift(coeffs, grid: Grid, fbar, m1: float, m2: float) -> HarmonicField:
    """Harmonic lift of clip(Phi^-1(fbar) - M1, 0, M2 - M1).

    By the maximum principle the field is bounded by M2 - M1.
    """
    if not (0.0 < m1 < m2):
        raise ValueError(f"need 0 < M1 < M2, got ({m1}, {m2})")
    fb = np.asarray(fbar, dtype=float)
    if np.any(fb < 0):
        raise ValueError("boundary data must be non-negative")
    _, s_m_prime = coeffs.s_m(m1, m2)
    data = s_m_prime(coeffs.phi_inverse(fb))
    return solve_dirichlet_laplace(grid, (data[0], data[1]))


def log_data_lift(grid: Grid, fbar, delta: float) -> HarmonicField:
    """Harmonic lift of log(fbar + delta); delta = 0 requires fbar > 0."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    fb = np.asarray(fbar, dtype=float) + delta
    if np.any(fb <= 0):
        raise ValueError("log of non-positive boundary data")
    data = np.log(fb)
    return solve_dirichlet_laplace(grid, (data[0], data[1]))


def log_clipped_density_lift(coeffs, grid: Grid, fbar,
                             floor: float = 1e-12) -> HarmonicField:
    """Harmonic lift of log(min(Phi^-1(fbar), 1)).

    Used by the vacuum-decay monitor; requires the boundary density to sit
    above a positive floor so the logarithm stays finite.
    """
    fb = np.asarray(fbar, dtype=float)
    rho_b = coeffs.phi_inverse(fb)
    if np.any(rho_b < floor):
        raise ValueError("boundary density below positive floor; "
                         "log cutoff lift undefined")
    data = np.log(np.minimum(rho_b, 1.0))
    return solve_dirichlet_laplace(grid, (data[0], data[1]))
