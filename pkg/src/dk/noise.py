"""Correlated noise: truncated mode family f_k, derived spatial fields
F1 = sum f_k^2, F2 = sum f_k grad f_k, F3 = sum |grad f_k|^2, and seeded
Brownian increment streams.

The mode family is fixed to sines vanishing at the boundary, which keeps
the noise flux compatible with Dirichlet data and makes every F-field
analytic.  The infinite mode sum is represented by a truncation K plus a
reported tail bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator, Philox, SeedSequence

from dk.domain import Grid


@dataclass(frozen=True)
class NoiseModel:
    """Truncated noise with fields sampled on cell centres and faces."""

    grid: Grid
    K: int
    decay_p: float
    amplitude_scale: float
    amplitudes: np.ndarray          # (K,)
    modes_cells: np.ndarray         # (K, N)   f_k at centres
    dmodes_cells: np.ndarray        # (K, N)   f_k' at centres
    modes_faces: np.ndarray         # (K, N+1) f_k at faces
    F1: np.ndarray                  # (N,)
    F2: np.ndarray                  # (N,)
    F3: np.ndarray                  # (N,)
    div_F2: np.ndarray              # (N,)  analytic d/dx F2
    F1_faces: np.ndarray = field(repr=False, default=None)
    F2_faces: np.ndarray = field(repr=False, default=None)


def make_sine_modes(grid: Grid, K: int, decay_p: float,
                    amplitude_scale: float = 1.0) -> NoiseModel:
    """Mode family f_k(x) = a_k sin(k pi x / L) with a_k = scale * k^-p.

    K = 0 yields the deterministic PDE (all fields zero).  Negative decay
    is rejected when K > 0 since the F3 sum would grow without bound as
    the truncation is raised.
    """
    if K < 0:
        raise ValueError("mode count K must be >= 0")
    if K > 0 and decay_p < 0:
        raise ValueError("decay exponent p must be >= 0 when K > 0 "
                         "(F3 diverges with the truncation otherwise)")
    n = grid.n
    L = grid.extent
    x_c = grid.centers
    x_f = grid.faces
    if K == 0:
        z_c = np.zeros(n)
        return NoiseModel(grid=grid, K=0, decay_p=decay_p,
                          amplitude_scale=amplitude_scale,
                          amplitudes=np.zeros(0),
                          modes_cells=np.zeros((0, n)),
                          dmodes_cells=np.zeros((0, n)),
                          modes_faces=np.zeros((0, n + 1)),
                          F1=z_c, F2=z_c.copy(), F3=z_c.copy(),
                          div_F2=z_c.copy(),
                          F1_faces=np.zeros(n + 1), F2_faces=np.zeros(n + 1))

    k = np.arange(1, K + 1, dtype=float)
    a = amplitude_scale * k ** (-decay_p)
    w = k * np.pi / L                                   # (K,)
    modes_c = a[:, None] * np.sin(np.outer(w, x_c))
    dmodes_c = (a * w)[:, None] * np.cos(np.outer(w, x_c))
    modes_f = a[:, None] * np.sin(np.outer(w, x_f))
    dmodes_f = (a * w)[:, None] * np.cos(np.outer(w, x_f))

    F1 = np.sum(modes_c ** 2, axis=0)
    F2 = np.sum(modes_c * dmodes_c, axis=0)
    F3 = np.sum(dmodes_c ** 2, axis=0)
    # d/dx sum f f' = sum (f'^2 + f f'')  with f'' = -w^2 f
    div_F2 = F3 - np.sum((w ** 2)[:, None] * modes_c ** 2, axis=0)
    F1_f = np.sum(modes_f ** 2, axis=0)
    F2_f = np.sum(modes_f * dmodes_f, axis=0)

    return NoiseModel(grid=grid, K=K, decay_p=decay_p,
                      amplitude_scale=amplitude_scale, amplitudes=a,
                      modes_cells=modes_c, dmodes_cells=dmodes_c,
                      modes_faces=modes_f, F1=F1, F2=F2, F3=F3,
                      div_F2=div_F2, F1_faces=F1_f, F2_faces=F2_f)


@dataclass
class NoiseReport:
    max_F1: float
    max_F2: float
    max_F3: float
    max_div_F2: float
    tail_bound: float
    cauchy_schwarz_ok: bool

    def as_dict(self):
        return {"max_F1": self.max_F1, "max_F2": self.max_F2,
                "max_F3": self.max_F3, "max_div_F2": self.max_div_F2,
                "tail_bound": self.tail_bound,
                "cauchy_schwarz_ok": self.cauchy_schwarz_ok}


def check_noise_assumptions(model: NoiseModel) -> NoiseReport:
    """Field magnitudes, boundedness of div F2, and the truncation tail.

    The tail bound is sum_{k>K} a_k^2 <= scale^2 K^(1-2p)/(2p-1) for
    p > 1/2 and infinite otherwise (reported, not graded).
    """
    if model.K == 0:
        tail = 0.0
    elif model.decay_p > 0.5:
        tail = (model.amplitude_scale ** 2
                * model.K ** (1.0 - 2.0 * model.decay_p)
                / (2.0 * model.decay_p - 1.0))
    else:
        tail = float("inf")
    cs_ok = bool(np.all(model.F2 ** 2 <= model.F1 * model.F3 + 1e-12))
    return NoiseReport(
        max_F1=float(np.max(np.abs(model.F1))) if model.F1.size else 0.0,
        max_F2=float(np.max(np.abs(model.F2))) if model.F2.size else 0.0,
        max_F3=float(np.max(np.abs(model.F3))) if model.F3.size else 0.0,
        max_div_F2=float(np.max(np.abs(model.div_F2))) if model.div_F2.size else 0.0,
        tail_bound=tail, cauchy_schwarz_ok=cs_ok)


class BrownianStream:
    """Per-member family of K counter-based Gaussian substreams.

    Substream k is a Philox generator keyed by (master_seed, member_id, k),
    so identical (master_seed, member_id) replays bit-for-bit and members
    are independent regardless of scheduling.  Increments over a step dt
    are sqrt(dt) * N(0,1) draws, one per mode, consumed in order.
    """

    def __init__(self, master_seed: int, member_id: int, K: int):
        self.master_seed = int(master_seed)
        self.member_id = int(member_id)
        self.K = int(K)
        self._gens = [
            Generator(Philox(SeedSequence(entropy=self.master_seed,
                                          spawn_key=(self.member_id, k))))
            for k in range(self.K)
        ]

    def standard_block(self, n_steps: int) -> np.ndarray:
        """Draw (n_steps, K) standard normals, one column per substream.

        Column k of the block equals the next n_steps per-step draws of
        substream k, so block and step-by-step consumption agree exactly.
        """
        if self.K == 0:
            return np.zeros((n_steps, 0))
        cols = [g.standard_normal(n_steps) for g in self._gens]
        return np.stack(cols, axis=1)


def sample_increments(stream: BrownianStream, dt: float) -> np.ndarray:
    """K independent Gaussian increments with variance dt; advances state."""
    if dt < 0:
        raise ValueError("dt must be non-negative")
    z = stream.standard_block(1)[0]
    return np.sqrt(dt) * z
