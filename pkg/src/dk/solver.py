"""Time stepping for the regularised equation in Ito form (explicit
correction terms) and Stratonovich form (midpoint-in-noise Heun), plus the
ensemble driver.

The stepper is written against states of shape (..., N): a single run is
(N,), an ensemble is (B, N) and a coupled-pair ensemble is (2, P, N) with
one increment vector per pair broadcast across the leading axis.  All
per-step work is vectorised over the leading dimensions, which is what
makes 100-member ensembles affordable at desk scale.

Finite-volume layout: cell centres x_i, faces x_{i+1/2}.  The total face
flux of the Ito form is

    G = [Phi'(rho) + alpha + 0.5*F1*(sigma'(rho))^2] * d_x rho
        + 0.5*sigma(rho)*sigma'(rho)*F2 - nu(rho) - sigma(rho) * xi_dot

and a step adds dt * (flux divergence).  Face coefficients use arithmetic
means of cell values; sigma is applied to the face-averaged density.
Dirichlet data enters through ghost values Phi^-1(fbar) located on the
boundary faces, so boundary-face gradients span half a cell and the trace
is enforced at the face itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from dk.domain import Grid
from dk.errors import BlowupError, ConfigError, SolverError
from dk.noise import BrownianStream, NoiseModel

_RNG_BLOCK = 2048


@dataclass(frozen=True)
class BCSpec:
    kind: str = "dirichlet"            # 'dirichlet' | 'periodic'
    fbar: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.kind not in ("dirichlet", "periodic"):
            raise ConfigError(f"unknown bc kind {self.kind!r}", key="solver.bc")
        if self.kind == "dirichlet" and any(v < 0 for v in self.fbar):
            raise ConfigError("Dirichlet data for Phi(rho) must be non-negative",
                              key="solver.fbar")


@dataclass(frozen=True)
class SolverConfig:
    T: float
    alpha: float = 0.0
    scheme: str = "ito_euler"          # 'ito_euler' | 'stratonovich_heun' | 'galerkin_spectral'
    dt: Optional[float] = None         # fixed step; None selects the CFL policy
    cfl_theta: float = 0.5
    dt_cap: float = 1e-2
    positivity: str = "clip"           # 'clip' | 'reject'
    snapshot_every: int = 0            # 0: initial/final only
    bc: BCSpec = field(default_factory=BCSpec)
    galerkin_modes: Optional[int] = None

    def __post_init__(self):
        if self.scheme not in ("ito_euler", "stratonovich_heun", "galerkin_spectral"):
            raise ConfigError(f"unknown scheme {self.scheme!r}", key="solver.scheme")
        if self.positivity not in ("clip", "reject"):
            raise ConfigError(f"unknown positivity mode {self.positivity!r}",
                              key="solver.positivity")
        if self.T < 0:
            raise ConfigError("final time must be >= 0", key="solver.T")
        if not (0.0 < self.cfl_theta <= 1.0):
            raise ConfigError("cfl_theta must lie in (0, 1]", key="solver.cfl_theta")


@dataclass
class FieldState:
    """Solution values on the grid at one instant (single member)."""

    rho: np.ndarray
    t: float = 0.0
    alpha: float = 0.0
    step_index: int = 0


class StepperContext:
    """Precomputed per-run arrays binding grid, coefficients, noise and BC."""

    def __init__(self, grid: Grid, coeffs, noise: NoiseModel, cfg: SolverConfig):
        if grid.dimension != 1:
            raise ConfigError("SPDE runs are restricted to the interval")
        self.grid = grid
        self.coeffs = coeffs
        self.noise = noise
        self.cfg = cfg
        self.h = grid.h
        self.n = grid.n
        self.periodic = cfg.bc.kind == "periodic"
        self.alpha = cfg.alpha
        self.F1_c = noise.F1
        self.F2_f = noise.F2_faces
        self.half_F2_f = 0.5 * noise.F2_faces
        self.modes_f = noise.modes_faces        # (K, N+1)
        self.K = noise.K
        self.has_nu = coeffs.nu_kind != "zero"
        if self.periodic:
            self.rho_left = self.rho_right = None
            self.ghost_ito = self.ghost_strat = (None, None)
        else:
            fb = np.asarray(cfg.bc.fbar, dtype=float)
            rb = coeffs.phi_inverse(fb)
            self.rho_left = float(rb[0])
            self.rho_right = float(rb[1])
            # ghost-cell diffusion coefficients are state-independent
            cl = float(coeffs.phi_prime(max(self.rho_left, 0.0))) + self.alpha
            cr = float(coeffs.phi_prime(max(self.rho_right, 0.0))) + self.alpha
            self.ghost_strat = (cl, cr)
            if self.K:
                f1b = noise.F1_faces
                cl += 0.5 * float(f1b[0]) * float(coeffs.sigma_prime(max(self.rho_left, 0.0))) ** 2
                cr += 0.5 * float(f1b[-1]) * float(coeffs.sigma_prime(max(self.rho_right, 0.0))) ** 2
            self.ghost_ito = (cl, cr)

    # -- face assembly ----------------------------------------------------

    def face_gradient(self, rho):
        lead = rho.shape[:-1]
        g = np.empty(lead + (self.n + 1,))
        g[..., 1:-1] = (rho[..., 1:] - rho[..., :-1]) / self.h
        if self.periodic:
            wrap = (rho[..., 0] - rho[..., -1]) / self.h
            g[..., 0] = wrap
            g[..., -1] = wrap
        else:
            g[..., 0] = (rho[..., 0] - self.rho_left) * (2.0 / self.h)
            g[..., -1] = (self.rho_right - rho[..., -1]) * (2.0 / self.h)
        return g

    def face_mean(self, q, q_left, q_right):
        """Arithmetic face mean of a cell quantity, with ghost values."""
        lead = q.shape[:-1]
        out = np.empty(lead + (self.n + 1,))
        out[..., 1:-1] = 0.5 * (q[..., 1:] + q[..., :-1])
        if self.periodic:
            wrap = 0.5 * (q[..., 0] + q[..., -1])
            out[..., 0] = wrap
            out[..., -1] = wrap
        else:
            out[..., 0] = 0.5 * (q[..., 0] + q_left)
            out[..., -1] = 0.5 * (q[..., -1] + q_right)
        return out

    def face_density(self, rho):
        if self.periodic:
            return self.face_mean(rho, None, None)
        return self.face_mean(rho, self.rho_left, self.rho_right)

    # -- cell diffusion coefficients ---------------------------------------

    def cell_coef_ito(self, rho_pos):
        c = self.coeffs.phi_prime(rho_pos)
        if self.alpha:
            c += self.alpha
        if self.K:
            sp = self.coeffs.sigma_prime(rho_pos)
            c += 0.5 * self.F1_c * sp * sp
        return c

    # -- fluxes -------------------------------------------------------------

    def drift_flux_ito(self, rho):
        """Unit-time face flux of the Ito form (exposed for tests)."""
        rho_pos = np.maximum(rho, 0.0)
        flux = self.face_mean(self.cell_coef_ito(rho_pos), *self.ghost_ito)
        flux *= self.face_gradient(rho)
        if self.K or self.has_nu:
            rho_f = self.face_density(rho)
            np.maximum(rho_f, 0.0, out=rho_f)
            if self.K:
                flux += self.coeffs.sigma(rho_f) * self.coeffs.sigma_prime(rho_f) \
                    * self.half_F2_f
            if self.has_nu:
                flux -= self.coeffs.nu(rho_f)
        return flux

    def noise_flux_increment(self, rho, dW):
        """Stochastic face flux integrated over the step: -sigma(rho_f) sum_k f_k dW_k."""
        if self.K == 0:
            return 0.0
        rho_f = np.maximum(self.face_density(rho), 0.0)
        field_f = np.matmul(dW, self.modes_f)     # (..., N+1)
        return -self.coeffs.sigma(rho_f) * field_f

    # -- steps ----------------------------------------------------------------

    def step_ito(self, rho, dt, dW):
        rho_pos = np.maximum(rho, 0.0)
        coef_f = self.face_mean(self.cell_coef_ito(rho_pos), *self.ghost_ito)
        total = coef_f
        total *= self.face_gradient(rho)
        if self.K or self.has_nu:
            rho_f = self.face_density(rho)
            np.maximum(rho_f, 0.0, out=rho_f)
            if self.K:
                sig_f = self.coeffs.sigma(rho_f)
                total += sig_f * self.coeffs.sigma_prime(rho_f) * self.half_F2_f
            if self.has_nu:
                total -= self.coeffs.nu(rho_f)
            total *= dt
            if self.K:
                noise = np.matmul(dW, self.modes_f)
                noise *= sig_f
                total -= noise
        else:
            total *= dt
        new = rho + (total[..., 1:] - total[..., :-1]) / self.h
        net = total[..., -1] - total[..., 0]
        return new, net

    def step_strat(self, rho, dt, dW):
        rho_pos = np.maximum(rho, 0.0)
        drift = self.face_mean(self.coeffs.phi_prime(rho_pos) + self.alpha,
                               *self.ghost_strat)
        drift *= self.face_gradient(rho)
        if self.has_nu:
            rho_f0 = np.maximum(self.face_density(rho), 0.0)
            drift -= self.coeffs.nu(rho_f0)
        drift *= dt
        if self.K:
            field_f = np.matmul(dW, self.modes_f)     # shared by both stages
            s0 = -self.coeffs.sigma(np.maximum(self.face_density(rho), 0.0)) * field_f
            stage = drift + s0
            pred = rho + (stage[..., 1:] - stage[..., :-1]) / self.h
            s1 = -self.coeffs.sigma(np.maximum(self.face_density(pred), 0.0)) * field_f
            total = drift
            total += 0.5 * (s0 + s1)
        else:
            total = drift
        new = rho + (total[..., 1:] - total[..., :-1]) / self.h
        net = total[..., -1] - total[..., 0]
        return new, net

    def stable_dt(self, rho) -> float:
        """theta = 1 parabolic bound h^2 / (2 max cell coefficient)."""
        coef = self.cell_coef_ito(np.maximum(rho, 0.0))
        cmax = float(np.max(coef))
        if not np.isfinite(cmax):
            raise SolverError("CFL collapse: unbounded diffusion coefficient "
                              "(degenerate Phi' or sigma' at the current state)")
        if cmax <= 0.0:
            return self.cfg.dt_cap
        return self.h ** 2 / (2.0 * cmax)


def cfl_dt(state: FieldState, coeffs, noise: NoiseModel,
           theta: float = 0.5, cap: float = 1e-2,
           bc: BCSpec = None) -> float:
    """dt = theta * h^2 / (2 max_cell[Phi'(rho) + alpha + 0.5 F1 sigma'(rho)^2]).

    The max is over the current state; sigma' is whatever the coefficient
    set carries (smoothed sigma_n when smoothing is enabled).  Degenerate
    maxima fall back to the cap.
    """
    cfg = SolverConfig(T=1.0, alpha=state.alpha, dt_cap=cap,
                       bc=bc or BCSpec(kind="periodic"))
    ctx = StepperContext(noise.grid, coeffs, noise, cfg)
    return min(theta * ctx.stable_dt(np.asarray(state.rho)), cap)


def _wrap_state(state: FieldState, rho_new, dt) -> FieldState:
    return FieldState(rho=rho_new, t=state.t + dt, alpha=state.alpha,
                      step_index=state.step_index + 1)


def step_ito(state: FieldState, cfg: SolverConfig, coeffs, noise: NoiseModel,
             dW: np.ndarray, dt: Optional[float] = None) -> FieldState:
    """Single conservative Euler-Maruyama step of the Ito-form equation."""
    ctx = StepperContext(noise.grid, coeffs, noise, cfg)
    dt = cfg.dt if dt is None else dt
    if dt is None:
        raise ConfigError("explicit dt required (config dt or argument)")
    rho_new, _ = ctx.step_ito(np.asarray(state.rho, dtype=float), dt, dW)
    if not np.all(np.isfinite(rho_new)):
        raise BlowupError(state.step_index, state.t)
    if cfg.positivity == "clip":
        rho_new = np.maximum(rho_new, 0.0)
    return _wrap_state(state, rho_new, dt)


def step_stratonovich_heun(state: FieldState, cfg: SolverConfig, coeffs,
                           noise: NoiseModel, dW: np.ndarray,
                           dt: Optional[float] = None) -> FieldState:
    """Predictor-corrector step of the Stratonovich form: the drift is a
    plain Euler update without the Ito correction terms, and the noise flux
    is the average of the start- and predictor-state fluxes driven by the
    same increments."""
    ctx = StepperContext(noise.grid, coeffs, noise, cfg)
    dt = cfg.dt if dt is None else dt
    if dt is None:
        raise ConfigError("explicit dt required (config dt or argument)")
    rho_new, _ = ctx.step_strat(np.asarray(state.rho, dtype=float), dt, dW)
    if not np.all(np.isfinite(rho_new)):
        raise BlowupError(state.step_index, state.t)
    if cfg.positivity == "clip":
        rho_new = np.maximum(rho_new, 0.0)
    return _wrap_state(state, rho_new, dt)


# ---------------------------------------------------------------------------
# run driver
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    grid: Grid
    times: np.ndarray                  # (S,)
    snapshots: np.ndarray              # (S, ..., N)
    clip_added: np.ndarray             # (...,) mass added by clipping
    boundary_net: np.ndarray           # (...,) net boundary inflow (mass units)
    n_steps: int
    dt_min: float
    dt_max: float
    accumulated: dict
    recorded: Optional[dict] = None    # step-level record when requested

    @property
    def final(self) -> np.ndarray:
        return self.snapshots[-1]

    @property
    def mass(self) -> np.ndarray:
        """Total mass per snapshot (integral of rho)."""
        return np.sum(self.snapshots, axis=-1) * self.grid.h

    def steps(self):
        """Iterate (t, dt, rho) over the recorded step-level trajectory.

        Falls back to snapshot resolution with a stride-bias warning when
        per-step recording was not enabled.
        """
        if self.recorded is not None:
            times = self.recorded["t"]
            dts = self.recorded["dt"]
            states = self.recorded["rho"]
            for i in range(len(dts)):
                yield times[i], dts[i], states[i]
        else:
            import warnings
            warnings.warn("trajectory recorded at snapshot stride only; "
                          "time integrals carry stride bias", stacklevel=2)
            for i in range(len(self.times) - 1):
                yield (float(self.times[i]),
                       float(self.times[i + 1] - self.times[i]),
                       self.snapshots[i])


def _draw_blocks(streams, n, k):
    """(n, P, K) standard normals, one (n, K) block per member stream."""
    if k == 0 or not streams:
        return np.zeros((n, max(len(streams), 1), 0))
    return np.stack([s.standard_block(n) for s in streams], axis=1)


def run(grid: Grid, coeffs, noise: NoiseModel, cfg: SolverConfig,
        rho0: np.ndarray, streams=None, accumulators=(),
        record_steps: bool = False, pairwise: bool = False) -> RunResult:
    """Step from t=0 to T, emitting snapshots and feeding accumulators.

    ``rho0`` has shape (..., N).  ``streams`` supplies one BrownianStream
    per noise member; with ``pairwise=True`` the state is (2, P, N) and
    pair p's two rows consume identical increments (the coupled-run
    contract).  Accumulators see the pre-step state plus the increments
    consumed by that step.
    """
    rho = np.array(rho0, dtype=float, copy=True)
    if rho.shape[-1] != grid.n:
        raise ConfigError("initial data does not match the grid")
    lead = rho.shape[:-1]
    if streams is None:
        streams = []
    n_members = len(streams)
    if noise.K > 0:
        expected = lead[-1] if (pairwise and len(lead) == 2) else (lead[0] if lead else 1)
        if n_members != max(expected, 1):
            raise ConfigError(f"need {expected} streams, got {n_members}")

    if cfg.scheme == "galerkin_spectral":
        from dk.galerkin import GalerkinScheme
        scheme = GalerkinScheme(grid, coeffs, noise, cfg)
    else:
        scheme = _FVScheme(grid, coeffs, noise, cfg)

    state = scheme.init_state(rho)
    h = grid.h
    clip_added = np.zeros(lead if lead else ())
    boundary_net = np.zeros(lead if lead else ())

    snap_times = [0.0]
    snaps = [scheme.to_grid(state).copy()]
    rec = {"t": [], "dt": [], "rho": [], "dW": []} if record_steps else None

    for acc in accumulators:
        if hasattr(acc, "on_snapshot"):
            acc.on_snapshot(0.0, snaps[0])

    t = 0.0
    step_idx = 0
    dt_min, dt_max = np.inf, 0.0
    block = None
    block_pos = 0
    use_blocks = noise.K > 0 and cfg.positivity != "reject"
    tiny = 1e-14 * max(cfg.T, 1.0)

    while t < cfg.T - tiny:
        rho_pre = scheme.to_grid(state)
        if cfg.dt is not None:
            dt = cfg.dt
            if step_idx == 0 and dt > scheme.stable_dt_bound(state) * (1.0 + 1e-9):
                raise ConfigError(
                    f"fixed dt {dt:.3g} violates the CFL bound "
                    f"{scheme.stable_dt_bound(state):.3g} at the initial state",
                    key="solver.dt")
        else:
            dt = min(cfg.cfl_theta * scheme.stable_dt_bound(state), cfg.dt_cap)
        dt = min(dt, cfg.T - t)

        if noise.K > 0:
            if use_blocks:
                if block is None or block_pos >= block.shape[0]:
                    block = _draw_blocks(streams, _RNG_BLOCK, noise.K)
                    block_pos = 0
                z = block[block_pos]
                block_pos += 1
            else:
                z = _draw_blocks(streams, 1, noise.K)[0]
            dW = np.sqrt(dt) * z          # (P, K)
            if pairwise and len(lead) == 2:
                pass                       # broadcasting over axis 0 couples the pair
            elif not lead:
                dW = dW[0]
        else:
            dW = np.zeros(lead + (0,)) if lead else np.zeros(0)

        for acc in accumulators:
            acc.on_step(t, dt, rho_pre, dW)
        if rec is not None:
            rec["t"].append(t)
            rec["dt"].append(dt)
            rec["rho"].append(rho_pre.copy())
            rec["dW"].append(np.array(dW, copy=True))

        if cfg.positivity == "reject":
            sub_dt = dt
            for _ in range(40):
                new_state, net = scheme.step(state, sub_dt, dW)
                cand = scheme.to_grid(new_state)
                if np.all(cand >= 0.0):
                    break
                sub_dt *= 0.5
                z = _draw_blocks(streams, 1, noise.K)[0] if noise.K else None
                dW = np.sqrt(sub_dt) * z if noise.K else dW
            else:
                raise SolverError("reject-step positivity failed after 40 halvings")
            dt = sub_dt
            state = new_state
        else:
            state, net = scheme.step(state, dt, dW)
            cand = scheme.to_grid(state)
            if not np.all(np.isfinite(cand)):
                raise BlowupError(step_idx, t)
            neg = np.minimum(cand, 0.0)
            if np.any(neg < 0.0):
                clip_added += -np.sum(neg, axis=-1) * h
                state = scheme.clip_state(state)

        boundary_net += net
        t += dt
        step_idx += 1
        dt_min = min(dt_min, dt)
        dt_max = max(dt_max, dt)

        at_end = t >= cfg.T - tiny
        if at_end or (cfg.snapshot_every and step_idx % cfg.snapshot_every == 0):
            rho_now = scheme.to_grid(state).copy()
            if not np.all(np.isfinite(rho_now)):
                raise BlowupError(step_idx, t)
            snap_times.append(t)
            snaps.append(rho_now)
            for acc in accumulators:
                if hasattr(acc, "on_snapshot"):
                    acc.on_snapshot(t, rho_now)

    if len(snap_times) == 1:            # T == 0: echo the initial state
        snap_times.append(0.0)
        snaps.append(snaps[0].copy())

    recorded = None
    if rec is not None:
        recorded = {"t": np.array(rec["t"]), "dt": np.array(rec["dt"]),
                    "rho": np.array(rec["rho"]), "dW": np.array(rec["dW"])}

    return RunResult(
        grid=grid, times=np.array(snap_times), snapshots=np.array(snaps),
        clip_added=np.atleast_1d(clip_added), boundary_net=np.atleast_1d(boundary_net),
        n_steps=step_idx, dt_min=float(dt_min) if step_idx else 0.0,
        dt_max=float(dt_max), recorded=recorded,
        accumulated={getattr(a, "name", type(a).__name__): a.finalize()
                     for a in accumulators if hasattr(a, "finalize")})


class _FVScheme:
    """Finite-volume Ito / Stratonovich stepping behind the run driver."""

    def __init__(self, grid, coeffs, noise, cfg):
        self.ctx = StepperContext(grid, coeffs, noise, cfg)
        self.strat = cfg.scheme == "stratonovich_heun"

    def init_state(self, rho):
        return rho

    def to_grid(self, state):
        return state

    def step(self, state, dt, dW):
        if self.strat:
            return self.ctx.step_strat(state, dt, dW)
        return self.ctx.step_ito(state, dt, dW)

    def clip_state(self, state):
        return np.maximum(state, 0.0)

    def stable_dt_bound(self, state):
        return self.ctx.stable_dt(state)


# ---------------------------------------------------------------------------
# coupled pairs
# ---------------------------------------------------------------------------

@dataclass
class PairResult:
    times: np.ndarray            # (S,)
    distances: np.ndarray        # (S, P) L1 distances per snapshot
    initial_distance: np.ndarray  # (P,)
    run: RunResult

    @property
    def running_sup(self) -> np.ndarray:
        return np.maximum.accumulate(self.distances, axis=0)


def run_coupled_ensemble(grid: Grid, coeffs, noise: NoiseModel, cfg: SolverConfig,
                         rho0_a: np.ndarray, rho0_b: np.ndarray,
                         streams) -> PairResult:
    """P coupled pairs on shared noise; returns per-snapshot L1 distances."""
    p = len(streams) if streams else 1
    a = np.broadcast_to(np.asarray(rho0_a, float), (p, grid.n))
    b = np.broadcast_to(np.asarray(rho0_b, float), (p, grid.n))
    rho0 = np.stack([a, b], axis=0)            # (2, P, N)
    res = run(grid, coeffs, noise, cfg, rho0, streams=streams, pairwise=True)
    dist = np.sum(np.abs(res.snapshots[:, 0] - res.snapshots[:, 1]), axis=-1) * grid.h
    return PairResult(times=res.times, distances=dist,
                      initial_distance=dist[0], run=res)


def run_coupled_pair(grid: Grid, coeffs, noise: NoiseModel, cfg: SolverConfig,
                     rho0_a: np.ndarray, rho0_b: np.ndarray,
                     stream: BrownianStream) -> PairResult:
    """Single coupled pair; both runs consume identical increments."""
    res = run_coupled_ensemble(grid, coeffs, noise, cfg, rho0_a, rho0_b,
                               [stream] if stream is not None else [])
    return PairResult(times=res.times, distances=res.distances[:, 0:1],
                      initial_distance=res.initial_distance[0:1], run=res.run)
