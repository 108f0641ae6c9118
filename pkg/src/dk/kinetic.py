"""Kinetic-formulation machinery: the level-set indicator chi, banded
estimates of the dissipation measure q = (Phi'(rho)+alpha)|grad rho|^2
concentrated on xi = rho, velocity/space cutoffs and mollifiers, the
kinetic-equation residual harness, and decay/vanishing diagnostics.

Velocity bands realise the delta function delta_0(xi - rho) exactly for
band-integrated quantities, which is the only way the measure is ever
consumed here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dk.domain import Grid
from dk.errors import SupportError
from dk.quadrature import adaptive_simpson


# ---------------------------------------------------------------------------
# cutoffs and mollifiers
# ---------------------------------------------------------------------------

def phi_beta(beta: float):
    """Non-decreasing piecewise-linear cutoff: 0 below beta/2, 1 above beta,
    slope 2/beta in between."""
    if not (0.0 < beta):
        raise ValueError("beta must be positive")

    def f(xi):
        return np.clip((np.asarray(xi, float) - 0.5 * beta) * (2.0 / beta), 0.0, 1.0)

    return f


def zeta_m(m_level: int):
    """Non-increasing piecewise-linear cutoff: 1 below M, 0 above M+1."""
    if m_level < 1:
        raise ValueError("M must be >= 1")

    def f(xi):
        return np.clip(float(m_level) + 1.0 - np.asarray(xi, float), 0.0, 1.0)

    return f


def phi_beta_smooth(beta: float):
    """C^2 smoothstep version of phi_beta (quintic transition on [b/2, b])."""

    def f(xi):
        u = np.clip((np.asarray(xi, float) - 0.5 * beta) * (2.0 / beta), 0.0, 1.0)
        return u ** 3 * (10.0 - 15.0 * u + 6.0 * u ** 2)

    return f


def vacuum_cutoff(beta: float):
    """Phi_beta(xi) = smooth-phi_beta(xi) * xi: the identity cut off near 0."""
    smooth = phi_beta_smooth(beta)

    def f(xi):
        x = np.asarray(xi, float)
        return smooth(x) * x

    return f


class Mollifier:
    """Standard compactly supported bump kernel at a given scale.

    kernel(s) ~ exp(-1/(1-s^2)) on |s|<1, normalised to unit mass; the
    scaled kernel is kernel(x/scale)/scale.
    """

    def __init__(self, scale: float):
        if not (0.0 < scale):
            raise ValueError("mollifier scale must be positive")
        self.scale = scale
        self._norm = adaptive_simpson(self._raw, -1.0, 1.0, tol=1e-12)

    @staticmethod
    def _raw(s):
        s = np.asarray(s, float)
        inside = np.abs(s) < 1.0
        out = np.zeros_like(s, dtype=float)
        with np.errstate(divide="ignore", over="ignore"):
            vals = np.exp(-1.0 / np.maximum(1.0 - s ** 2, 1e-300))
        return np.where(inside, vals, out) if out.ndim else (float(vals) if inside else 0.0)

    def __call__(self, x):
        return self._raw(np.asarray(x, float) / self.scale) / (self._norm * self.scale)

    def mass(self, n_points: int = 20001) -> float:
        xs = np.linspace(-self.scale, self.scale, n_points)
        return float(np.trapz(self(xs), xs))


@dataclass(frozen=True)
class CutoffBundle:
    """Velocity cutoffs phi_beta / zeta_M, mollifiers at scales (eps, delta),
    and the vacuum cutoff identity Phi_beta(xi) = smooth-phi_beta(xi)*xi."""

    beta: float
    m_level: int
    eps: float
    delta: float
    phi_beta: callable = field(init=False, default=None)
    zeta_m: callable = field(init=False, default=None)
    kappa_eps: Mollifier = field(init=False, default=None)
    kappa_delta: Mollifier = field(init=False, default=None)
    phi_beta_identity: callable = field(init=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "phi_beta", phi_beta(self.beta))
        object.__setattr__(self, "zeta_m", zeta_m(self.m_level))
        object.__setattr__(self, "kappa_eps", Mollifier(self.eps))
        object.__setattr__(self, "kappa_delta", Mollifier(self.delta))
        object.__setattr__(self, "phi_beta_identity", vacuum_cutoff(self.beta))


# ---------------------------------------------------------------------------
# kinetic function and measure histogram
# ---------------------------------------------------------------------------

def kinetic_function(rho: np.ndarray, xi_grid: np.ndarray) -> np.ndarray:
    """chi[i, l] = 1 iff 0 <= xi_l <= rho_i (velocity level-set indicator)."""
    xi = np.asarray(xi_grid, float)
    if xi.ndim != 1 or np.any(np.diff(xi) <= 0) or xi[0] < 0:
        raise ValueError("xi_grid must be strictly increasing and non-negative")
    r = np.asarray(rho, float)[..., None]
    return ((xi[None, :] >= 0.0) & (xi[None, :] <= r)).astype(np.uint8)


def default_band_edges(j_min_exp: int = 7, m_max: int = 8) -> np.ndarray:
    """[0, 2^-j_min, ..., 1/2, 1, 2, ..., m_max+1]: dyadic bands [b/2, b]
    plus unit bands [M, M+1], with a sub-dyadic catch-all at the bottom."""
    dyadic = [2.0 ** (-j) for j in range(j_min_exp, 0, -1)]
    units = list(np.arange(1.0, m_max + 2.0))
    return np.array([0.0] + dyadic + units)


class KineticHistogram:
    """Band x time-window totals of the dissipation density
    (Phi'(rho) + alpha) |D rho|^2 restricted to {rho in band}.

    Gradients use centred differences in the interior and one-sided
    differences on boundary-adjacent cells.  Masses are non-negative and
    additive over bands, time windows and ensemble merges.
    """

    def __init__(self, band_edges: np.ndarray, t0: float, t1: float,
                 n_windows: int = 1):
        self.band_edges = np.asarray(band_edges, float)
        if np.any(np.diff(self.band_edges) <= 0):
            raise ValueError("band edges must be strictly increasing")
        self.time_edges = np.linspace(t0, t1, n_windows + 1)
        self.mass = np.zeros((self.band_edges.size - 1, n_windows))
        self.overflow = 0.0
        self._n_members = 1

    def copy_empty(self):
        return KineticHistogram(self.band_edges, self.time_edges[0],
                                self.time_edges[-1], self.time_edges.size - 1)

    def window_index(self, t: float) -> int:
        idx = int(np.searchsorted(self.time_edges, t, side="right") - 1)
        return min(max(idx, 0), self.mass.shape[1] - 1)

    def add_state(self, t: float, dt: float, rho: np.ndarray, h: float,
                  coeffs, alpha: float):
        rho2 = np.atleast_2d(np.asarray(rho, float).reshape(-1, rho.shape[-1]))
        grad = centered_gradient(rho2, h)
        weight = (coeffs.phi_prime(np.maximum(rho2, 0.0)) + alpha) * grad ** 2 * h * dt
        hist, _ = np.histogram(rho2.ravel(), bins=self.band_edges,
                               weights=weight.ravel())
        self.mass[:, self.window_index(t)] += hist
        self.overflow += float(np.sum(weight[rho2 > self.band_edges[-1]]))

    def merge(self, other: "KineticHistogram"):
        if not np.array_equal(other.band_edges, self.band_edges):
            raise ValueError("histogram band mismatch")
        self.mass += other.mass
        self.overflow += other.overflow
        return self

    def band_mass(self, lo: float, hi: float) -> float:
        i = int(np.searchsorted(self.band_edges, lo))
        j = int(np.searchsorted(self.band_edges, hi))
        if not (np.isclose(self.band_edges[i], lo) and np.isclose(self.band_edges[j], hi)):
            raise KeyError(f"band [{lo}, {hi}] does not align with edges")
        return float(np.sum(self.mass[i:j, :]))

    def total_mass(self) -> float:
        return float(np.sum(self.mass)) + self.overflow

    def rows(self):
        """(band_lo, band_hi, t0, t1, mass) rows for CSV export."""
        out = []
        for b in range(self.mass.shape[0]):
            for w in range(self.mass.shape[1]):
                out.append((float(self.band_edges[b]), float(self.band_edges[b + 1]),
                            float(self.time_edges[w]), float(self.time_edges[w + 1]),
                            float(self.mass[b, w])))
        return out


def centered_gradient(rho: np.ndarray, h: float) -> np.ndarray:
    """Centred differences interior, one-sided at boundary-adjacent cells."""
    g = np.empty_like(rho)
    g[..., 1:-1] = (rho[..., 2:] - rho[..., :-2]) / (2.0 * h)
    g[..., 0] = (rho[..., 1] - rho[..., 0]) / h
    g[..., -1] = (rho[..., -1] - rho[..., -2]) / h
    return g


def forward_gradient(rho: np.ndarray, h: float) -> np.ndarray:
    """Forward face differences (backward at the last cell): the first-order
    quadrature used by the residual and integration-by-parts checks."""
    g = np.empty_like(rho)
    g[..., :-1] = (rho[..., 1:] - rho[..., :-1]) / h
    g[..., -1] = (rho[..., -1] - rho[..., -2]) / h
    return g


def accumulate_kinetic_measure(trajectory, alpha: float, coeffs,
                               hist: KineticHistogram, h: float) -> KineticHistogram:
    """Fold a trajectory's steps into the histogram (pre-state weighting)."""
    for t, dt, rho in trajectory:
        hist.add_state(t, dt, rho, h, coeffs, alpha)
    return hist


def decay_at_zero(hist: KineticHistogram):
    """Dyadic series (beta, mass[beta/2, beta] / beta), beta = 2^-j."""
    edges = hist.band_edges
    out = []
    for i in range(edges.size - 1):
        lo, hi = edges[i], edges[i + 1]
        if hi <= 1.0 and lo > 0.0 and np.isclose(lo, 0.5 * hi):
            beta = hi
            out.append((float(beta), float(np.sum(hist.mass[i, :]) / beta)))
    return sorted(out, key=lambda p: -p[0])


def vanish_at_infinity(hist: KineticHistogram):
    """Unit-band series (M, mass[M, M+1]) for integer M >= 1."""
    edges = hist.band_edges
    out = []
    for i in range(edges.size - 1):
        lo, hi = edges[i], edges[i + 1]
        if lo >= 1.0 and np.isclose(hi - lo, 1.0):
            out.append((float(lo), float(np.sum(hist.mass[i, :]))))
    return out


# ---------------------------------------------------------------------------
# test functions and the kinetic-equation residual
# ---------------------------------------------------------------------------

def _bump(s):
    s = np.asarray(s, float)
    inside = np.abs(s) < 1.0
    return np.where(inside, (1.0 - s ** 2) ** 3, 0.0)


def _bump_prime(s):
    s = np.asarray(s, float)
    inside = np.abs(s) < 1.0
    return np.where(inside, -6.0 * s * (1.0 - s ** 2) ** 2, 0.0)


def _bump_integral(s):
    # integral of (1-u^2)^3 from -1 to s; total mass 32/35
    s = np.clip(np.asarray(s, float), -1.0, 1.0)
    p = lambda u: u - u ** 3 + 0.6 * u ** 5 - u ** 7 / 7.0
    return p(s) - p(-1.0)


@dataclass(frozen=True)
class BumpTestFunction:
    """psi(x, xi) = bump((x-x0)/rx) * bump((xi-xi0)/rxi), C^2 with compact
    support; the default two-parameter family for the kinetic checks."""

    x0: float
    rx: float
    xi0: float
    rxi: float

    def check_support(self, extent: float):
        if not (0.0 < self.x0 - self.rx and self.x0 + self.rx < extent):
            raise SupportError(f"x-support [{self.x0 - self.rx}, {self.x0 + self.rx}] "
                               f"not compact in (0, {extent})")
        if not (self.xi0 - self.rxi > 0.0):
            raise SupportError("velocity support must avoid 0")

    def space(self, x):
        return _bump((np.asarray(x, float) - self.x0) / self.rx)

    def space_prime(self, x):
        return _bump_prime((np.asarray(x, float) - self.x0) / self.rx) / self.rx

    def vel(self, xi):
        return _bump((np.asarray(xi, float) - self.xi0) / self.rxi)

    def vel_prime(self, xi):
        return _bump_prime((np.asarray(xi, float) - self.xi0) / self.rxi) / self.rxi

    def vel_integral(self, xi):
        """integral_0^xi of the velocity factor (closed form)."""
        lo = (0.0 - self.xi0) / self.rxi
        s = (np.asarray(xi, float) - self.xi0) / self.rxi
        return self.rxi * (_bump_integral(s) - _bump_integral(lo))

    def value(self, x, xi):
        return self.space(x) * self.vel(xi)


def chi_pairing(rho, x, psi: BumpTestFunction, h: float) -> float:
    """integral over x and xi of chi(x, xi) psi(x, xi): exact in xi via the
    closed-form velocity antiderivative, midpoint quadrature in x."""
    return float(np.sum(psi.space(x) * psi.vel_integral(np.maximum(rho, 0.0))) * h)


@dataclass
class ResidualRecord:
    residual: float
    terms: dict
    n_steps: int

    def as_dict(self):
        return {"residual": self.residual, "n_steps": self.n_steps,
                "terms": {k: float(v) for k, v in self.terms.items()}}


class ResidualAccumulator:
    """Per-step accumulation of every term of the regularised kinetic
    equation against a fixed test function.

    Works on single-member states (N,) or batches (B, N); terms are summed
    per member.  Gradients use the forward-face quadrature, making the
    deterministic residual first-order in h (which is what the refinement
    checks grade).
    """

    name = "kinetic_residual"

    def __init__(self, grid: Grid, coeffs, noise, alpha: float,
                 psi: BumpTestFunction):
        psi.check_support(grid.extent)
        self.grid = grid
        self.coeffs = coeffs
        self.noise = noise
        self.alpha = alpha
        self.psi = psi
        x = grid.centers
        self.sp = psi.space(x)
        self.spx = psi.space_prime(x)
        self.first_state = None
        self.last_state = None
        self.terms = None
        self.n_steps = 0

    def _ensure(self, lead):
        if self.terms is None:
            z = lambda: np.zeros(lead)
            self.terms = {k: z() for k in
                          ("flux", "measure", "ito", "martingale", "nu")}

    def on_step(self, t, dt, rho, dW):
        c = self.coeffs
        nm = self.noise
        h = self.grid.h
        rho = np.asarray(rho, float)
        lead = rho.shape[:-1]
        self._ensure(lead)
        if self.first_state is None:
            self.first_state = rho.copy()
        self.n_steps += 1

        rp = np.maximum(rho, 0.0)
        grad = forward_gradient(rho, h)
        w = self.psi.vel(rp)            # velocity factor at xi = rho
        wp = self.psi.vel_prime(rp)
        phip = c.phi_prime(rp)

        # flux against grad psi (x-part), including the alpha term
        flux_density = (phip + self.alpha) * grad
        if nm.K:
            sigp = c.sigma_prime(rp)
            sig = c.sigma(rp)
            flux_density = flux_density + 0.5 * nm.F1 * sigp ** 2 * grad \
                + 0.5 * sig * sigp * nm.F2
        self.terms["flux"] += dt * h * np.sum(flux_density * self.spx * w, axis=-1)

        # explicit measure term against d_xi psi
        self.terms["measure"] += dt * h * np.sum(
            (phip + self.alpha) * grad ** 2 * self.sp * wp, axis=-1)

        if nm.K:
            ito_density = sig * sigp * grad * nm.F2 + sig ** 2 * nm.F3
            self.terms["ito"] += 0.5 * dt * h * np.sum(
                ito_density * self.sp * wp, axis=-1)

            # martingale pairing: psi(x, rho) * div(sigma(rho) dxi) expanded
            # over modes as f_k d_x sigma(rho) + sigma(rho) f_k'
            psi_vals = self.sp * w
            dsig = sigp * grad
            a_k = h * np.sum(psi_vals[..., None, :]
                             * (nm.modes_cells * dsig[..., None, :]
                                + nm.dmodes_cells * sig[..., None, :]), axis=-1)
            self.terms["martingale"] += np.sum(a_k * dW, axis=-1)

        if c.nu_kind != "zero":
            nu_div = c.nu_prime(rp) * grad
            self.terms["nu"] += dt * h * np.sum(self.sp * w * nu_div, axis=-1)

    def on_snapshot(self, t, rho):
        self.last_state = np.asarray(rho, float).copy()

    def finalize(self):
        h = self.grid.h
        x = self.grid.centers
        lead = self.first_state.shape[:-1]
        time_term = np.zeros(lead)
        flat_first = self.first_state.reshape(-1, x.size)
        flat_last = self.last_state.reshape(-1, x.size)
        tt = np.array([chi_pairing(flat_last[i], x, self.psi, h)
                       - chi_pairing(flat_first[i], x, self.psi, h)
                       for i in range(flat_first.shape[0])])
        time_term = tt.reshape(lead) if lead else float(tt[0])

        t_ = self.terms
        residual = (time_term + t_["flux"] + t_["measure"] - t_["ito"]
                    + t_["martingale"] + t_["nu"])
        terms = {"time": time_term, "flux": t_["flux"], "measure": t_["measure"],
                 "ito": t_["ito"], "martingale": t_["martingale"], "nu": t_["nu"],
                 "residual": residual}
        return terms


def kinetic_equation_residual(run_result, psi: BumpTestFunction, coeffs,
                              noise, alpha: float) -> ResidualRecord:
    """Evaluate the kinetic-equation residual over a recorded trajectory.

    Requires per-step recording (states + consumed increments); the
    returned record carries the term breakdown.
    """
    if run_result.recorded is None:
        raise ValueError("residual evaluation needs record_steps=True")
    acc = ResidualAccumulator(run_result.grid, coeffs, noise, alpha, psi)
    rec = run_result.recorded
    for i in range(rec["dt"].size):
        acc.on_step(rec["t"][i], rec["dt"][i], rec["rho"][i], rec["dW"][i])
    acc.first_state = rec["rho"][0]
    acc.on_snapshot(run_result.times[-1], run_result.snapshots[-1])
    terms = acc.finalize()
    res = terms["residual"]
    scalar = float(res) if np.ndim(res) == 0 else float(np.mean(res))
    return ResidualRecord(residual=scalar,
                          terms={k: (float(v) if np.ndim(v) == 0 else float(np.mean(v)))
                                 for k, v in terms.items()},
                          n_steps=acc.n_steps)


def integration_by_parts_check(rho: np.ndarray, grid: Grid,
                               psi: BumpTestFunction) -> dict:
    """Compare integral of grad_x psi * chi against -integral psi(x, rho) grad rho.

    Both sides by quadrature; the gradient uses forward face differences,
    so the discrepancy for curved states is first order in h.
    """
    psi.check_support(grid.extent)
    x = grid.centers
    h = grid.h
    rp = np.maximum(np.asarray(rho, float), 0.0)
    lhs = float(np.sum(psi.space_prime(x) * psi.vel_integral(rp)) * h)
    grad = forward_gradient(rp, h)
    rhs = -float(np.sum(psi.space(x) * psi.vel(rp) * grad) * h)
    return {"lhs": lhs, "rhs": rhs, "discrepancy": abs(lhs - rhs)}
