"""Spectral Galerkin mode: the zero-boundary reformulation u = rho - g in a
sine basis, stepped by Euler-Maruyama with pseudo-spectral evaluation of the
nonlinear terms, plus a Fourier variant for periodic runs.

The sine basis is discretely orthonormal on the cell-centred grid under the
quadrature weight h, so projection and reconstruction are exact matrix
transforms up to mode N-1 (the grid Nyquist).
"""

from __future__ import annotations

import numpy as np

from dk.domain import Grid
from dk.errors import ConfigError


def sine_basis(grid: Grid, n_modes: int):
    """Return (E, Ed): basis values and derivatives on cell centres.

    E[i, k] = sqrt(2/L) sin((k+1) pi x_i / L); h * E.T @ E = identity.
    """
    if n_modes > grid.n - 1:
        raise ConfigError(f"mode count {n_modes} exceeds the grid Nyquist "
                          f"{grid.n - 1}", key="solver.galerkin_modes")
    L = grid.extent
    k = np.arange(1, n_modes + 1, dtype=float)
    w = k * np.pi / L
    amp = np.sqrt(2.0 / L)
    E = amp * np.sin(np.outer(grid.centers, w))
    Ed = amp * w[None, :] * np.cos(np.outer(grid.centers, w))
    return E, Ed


def project_modes(grid: Grid, field: np.ndarray, n_modes: int) -> np.ndarray:
    """L2 projection onto the first n_modes sine modes (exact quadrature)."""
    E, _ = sine_basis(grid, n_modes)
    return grid.h * (field @ E)


def reconstruct_modes(grid: Grid, coeffs_modal: np.ndarray) -> np.ndarray:
    E, _ = sine_basis(grid, coeffs_modal.shape[-1])
    return coeffs_modal @ E.T


class GalerkinScheme:
    """Driver-facing spectral scheme (Dirichlet sine or periodic Fourier)."""

    def __init__(self, grid: Grid, coeffs, noise, cfg):
        self.grid = grid
        self.coeffs = coeffs
        self.noise = noise
        self.cfg = cfg
        self.periodic = cfg.bc.kind == "periodic"
        self.h = grid.h
        self.n = grid.n
        self.alpha = cfg.alpha
        if self.periodic:
            self.k_ang = 2.0 * np.pi * np.fft.rfftfreq(self.n, d=self.h)
            self.lam_max = float(np.max(self.k_ang) ** 2)
        else:
            m = cfg.galerkin_modes or (grid.n - 1)
            self.M = m
            self.E, self.Ed = sine_basis(grid, m)
            fb = np.asarray(cfg.bc.fbar, dtype=float)
            rb = coeffs.phi_inverse(fb)
            ext = grid.extent
            self.g_slope = (rb[1] - rb[0]) / ext
            self.g_vals = rb[0] + self.g_slope * grid.centers
            self.lam_max = (m * np.pi / ext) ** 2

    # -- state plumbing -----------------------------------------------------

    def init_state(self, rho):
        if self.periodic:
            return np.array(rho, dtype=float, copy=True)
        return self.h * ((rho - self.g_vals) @ self.E)

    def to_grid(self, state):
        if self.periodic:
            return state
        return self.g_vals + state @ self.E.T

    def clip_state(self, state):
        # best-effort positivity: clip on the grid, re-project
        rho = np.maximum(self.to_grid(state), 0.0)
        return self.init_state(rho)

    # -- dynamics ------------------------------------------------------------

    def _pointwise_flux(self, rho, drho):
        c = self.coeffs
        rp = np.maximum(rho, 0.0)
        coef = c.phi_prime(rp) + self.alpha
        if self.noise.K:
            coef = coef + 0.5 * self.noise.F1 * c.sigma_prime(rp) ** 2
        G = coef * drho
        if self.noise.K:
            G = G + 0.5 * c.sigma(rp) * c.sigma_prime(rp) * self.noise.F2
        if c.nu_kind != "zero":
            G = G - c.nu(rp)
        return G

    def _spectral_derivative(self, f):
        F = np.fft.rfft(f, axis=-1)
        F = F * (1j * self.k_ang)
        if self.n % 2 == 0:
            F[..., -1] = 0.0       # drop the unresolved Nyquist derivative
        return np.fft.irfft(F, n=self.n, axis=-1)

    def step(self, state, dt, dW):
        if self.periodic:
            rho = state
            drho = self._spectral_derivative(rho)
            G = self._pointwise_flux(rho, drho)
            update = dt * self._spectral_derivative(G)
            if self.noise.K:
                stoch = self.coeffs.sigma(np.maximum(rho, 0.0)) \
                    * np.matmul(dW, self.noise.modes_cells)
                update = update - self._spectral_derivative(stoch)
            return rho + update, np.zeros(state.shape[:-1])

        a = state
        u = a @ self.E.T
        rho = self.g_vals + u
        drho = self.g_slope + a @ self.Ed.T
        G = self._pointwise_flux(rho, drho)
        da = -dt * self.h * (G @ self.Ed)
        if self.noise.K:
            noise_cells = self.coeffs.sigma(np.maximum(rho, 0.0)) \
                * np.matmul(dW, self.noise.modes_cells)
            da = da + self.h * (noise_cells @ self.Ed)
        return a + da, np.zeros(a.shape[:-1])

    def stable_dt_bound(self, state):
        rho = np.maximum(self.to_grid(state), 0.0)
        c = self.coeffs
        coef = c.phi_prime(rho) + self.alpha
        if self.noise.K:
            coef = coef + 0.5 * self.noise.F1 * c.sigma_prime(rho) ** 2
        cmax = float(np.max(coef))
        if cmax <= 0.0:
            return self.cfg.dt_cap
        return 2.0 / (self.lam_max * cmax)


def galerkin_step(modal_state: np.ndarray, cfg, coeffs, noise,
                  dW: np.ndarray, dt: float) -> np.ndarray:
    """One Euler-Maruyama step in modal space (Dirichlet sine basis)."""
    scheme = GalerkinScheme(noise.grid, coeffs, noise, cfg)
    new, _ = scheme.step(np.asarray(modal_state, dtype=float), dt, dW)
    return new
