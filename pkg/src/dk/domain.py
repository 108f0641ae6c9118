"""Discretised geometry: interval (core) or rectangle (harmonic solves only).

The SPDE stepper runs exclusively on the 1D interval, where boundary
integrals are two-point sums and harmonic lifts are exact linear
interpolants.  The rectangle exists so the Dirichlet Laplace solver can be
exercised in 2D; it is never used for SPDE runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dk.errors import ConfigError


@dataclass(frozen=True)
class DomainSpec:
    """Geometry request: dimension, per-axis extent and cell count."""

    dimension: int = 1
    extent: float | tuple[float, float] = 1.0
    n_cells: int | tuple[int, int] = 128

    def __post_init__(self):
        if self.dimension not in (1, 2):
            raise ConfigError(f"dimension must be 1 or 2, got {self.dimension}")
        ext = np.atleast_1d(np.asarray(self.extent, dtype=float))
        ncs = np.atleast_1d(np.asarray(self.n_cells, dtype=int))
        if ext.size != self.dimension or ncs.size != self.dimension:
            raise ConfigError("extent / n_cells arity must match dimension")
        if np.any(ext <= 0):
            raise ConfigError("extent must be positive")
        if np.any(ncs < 8):
            raise ConfigError(f"n_cells must be >= 8, got {self.n_cells}")


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred grid built from a :class:`DomainSpec`.

    ``boundary_cells`` lists (flat cell index, side) incidences; a corner
    cell of the rectangle appears once per touching side, matching the
    per-face bookkeeping that boundary integrals need.
    """

    spec: DomainSpec
    centers: np.ndarray          # (N,) in 1D, (N, 2) flattened row-major in 2D
    faces: np.ndarray            # (N+1,) face positions (1D only)
    h: float | tuple[float, float]
    boundary_cells: tuple = field(repr=False, default=())
    nodes: tuple = field(repr=False, default=())  # per-axis node coordinates

    @property
    def dimension(self) -> int:
        return self.spec.dimension

    @property
    def n(self) -> int:
        """Cell count along the axis (1D convenience accessor)."""
        if self.dimension != 1:
            raise ValueError("Grid.n is 1D-only; use spec.n_cells")
        return int(self.spec.n_cells)

    @property
    def extent(self) -> float:
        if self.dimension != 1:
            raise ValueError("Grid.extent scalar accessor is 1D-only")
        return float(self.spec.extent)


def build_grid(spec: DomainSpec) -> Grid:
    """Materialise cell centres, face positions and boundary incidences."""
    if spec.dimension == 1:
        n = int(spec.n_cells)
        ext = float(spec.extent)
        h = ext / n
        faces = np.linspace(0.0, ext, n + 1)
        centers = 0.5 * (faces[:-1] + faces[1:])
        boundary = ((0, "left"), (n - 1, "right"))
        return Grid(spec=spec, centers=centers, faces=faces, h=h,
                    boundary_cells=boundary, nodes=(faces,))

    nx, ny = (int(v) for v in np.atleast_1d(spec.n_cells))
    ex, ey = (float(v) for v in np.atleast_1d(spec.extent))
    hx, hy = ex / nx, ey / ny
    fx = np.linspace(0.0, ex, nx + 1)
    fy = np.linspace(0.0, ey, ny + 1)
    cx = 0.5 * (fx[:-1] + fx[1:])
    cy = 0.5 * (fy[:-1] + fy[1:])
    X, Y = np.meshgrid(cx, cy, indexing="ij")
    centers = np.column_stack([X.ravel(), Y.ravel()])
    boundary = []
    for j in range(ny):
        boundary.append((0 * ny + j, "left"))
        boundary.append(((nx - 1) * ny + j, "right"))
    for i in range(nx):
        boundary.append((i * ny + 0, "bottom"))
        boundary.append((i * ny + (ny - 1), "top"))
    return Grid(spec=spec, centers=centers, faces=fx, h=(hx, hy),
                boundary_cells=tuple(boundary), nodes=(fx, fy))


def distance_to_boundary(grid: Grid, x) -> float:
    """Exact Euclidean distance from an in-domain point to the boundary."""
    if grid.dimension == 1:
        xv = float(x)
        ext = grid.extent
        if xv < 0.0 or xv > ext:
            raise ValueError(f"point {xv} outside [0, {ext}]")
        return min(xv, ext - xv)
    xv, yv = float(x[0]), float(x[1])
    ex, ey = (float(v) for v in np.atleast_1d(grid.spec.extent))
    if not (0.0 <= xv <= ex and 0.0 <= yv <= ey):
        raise ValueError(f"point {(xv, yv)} outside rectangle")
    return min(xv, ex - xv, yv, ey - yv)


@dataclass(frozen=True)
class BoundaryCutoff:
    """Piecewise-linear spatial cutoff iota_gamma sampled on cell centres.

    values = min(d(x, boundary), gamma) / gamma; the signed discrete
    gradient uses one-sided differences oriented toward the interior, so
    its magnitude equals 1/gamma on cells strictly inside the boundary
    band and 0 strictly inside the interior region.
    """

    gamma: float
    values: np.ndarray
    gradient: np.ndarray


def iota_gamma(grid: Grid, gamma: float) -> BoundaryCutoff:
    """Boundary cutoff on the interval; rejects gamma outside (0, extent/2).

    The upper bound is the 1D analogue of the largest scale at which the
    closest boundary point stays unique.
    """
    if grid.dimension != 1:
        raise ValueError("iota_gamma is defined for the interval only")
    ext = grid.extent
    if not (0.0 < gamma < 0.5 * ext):
        raise ValueError(f"gamma must lie in (0, {0.5 * ext}), got {gamma}")
    x = grid.centers
    dist = np.minimum(x, ext - x)
    values = np.minimum(dist, gamma) / gamma

    # One-sided differences pointing inward: forward on the left half,
    # backward on the right half (ties resolved to forward).
    h = grid.h
    grad = np.zeros_like(values)
    left = x <= 0.5 * ext
    fwd = np.empty_like(values)
    fwd[:-1] = (values[1:] - values[:-1]) / h
    fwd[-1] = (values[-1] - values[-2]) / h
    bwd = np.empty_like(values)
    bwd[1:] = (values[1:] - values[:-1]) / h
    bwd[0] = fwd[0]
    grad[left] = fwd[left]
    grad[~left] = bwd[~left]
    return BoundaryCutoff(gamma=gamma, values=values, gradient=grad)
