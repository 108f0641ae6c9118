"""The nonlinearity triple (Phi, sigma, nu) with derivatives, antiderivative
handles, the C^1 smoothing sigma_n, and numerical validators for the
uniqueness / existence assumption lists.

Model cases (Phi = xi^m with sigma = sqrt(xi) or Phi^(1/2)) carry closed
forms; anything else falls back to adaptive-Simpson antiderivatives.
All scalar handles are vectorised over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from dk.quadrature import antiderivative

_XI_GRID_DEFAULT = np.geomspace(1e-4, 10.0, 241)


def _as_float_array(xi):
    return np.asarray(xi, dtype=float)


@dataclass(frozen=True)
class CoefficientSet:
    """Scalar functions on [0, inf) describing one equation instance.

    Antiderivative conventions:

    * ``theta_phi``            Theta(0) = 0,  Theta' = sqrt(Phi')
    * ``theta_nu``             Theta(0) = 0,  Theta' = nu
    * ``theta_sigma_over_xi``  Theta(1) = 0,  Theta' = sigma*sigma'/xi
    * ``theta_phi_sigma``      Theta(1) = 0,  Theta' = Phi'*sigma*sigma'/Phi
    * ``theta_phi_nu``         Theta(0) = 0,  Theta' = Phi'*nu/Phi
    * ``psi_sigma_factory(c)`` Psi(1) = 0,    Psi'  = c*(sigma')^2
      (``c`` is the sup of the noise field F1; use :func:`bind_noise`)
    * ``log_phi_integral``     I(0) = 0,      I'    = log(Phi)
    * ``s_fun`` / ``s_fun_prime``  S(0) = 0, S'(xi) = log(min(xi, 1))
    """

    m: float
    phi: Callable
    phi_prime: Callable
    phi_inverse: Callable
    sigma: Callable
    sigma_prime: Callable
    nu: Callable
    nu_prime: Callable
    theta_phi: Callable
    theta_nu: Callable
    theta_sigma_over_xi: Callable
    theta_phi_sigma: Callable
    theta_phi_nu: Callable
    psi_sigma_factory: Callable
    log_phi_integral: Callable
    sigma_kind: str = "sqrt"
    nu_kind: str = "zero"
    nu_c: float = 0.0
    smoothing_n: Optional[int] = None
    psi_sigma: Optional[Callable] = field(default=None, repr=False)

    # -- velocity-space helpers shared by the kinetic machinery ----------

    @staticmethod
    def s_fun(xi):
        """S with S(0)=0 and S''(xi) = 1/xi on [0,1]; constant -1 above 1."""
        z = np.minimum(_as_float_array(xi), 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(z > 0.0, z * np.log(np.maximum(z, 1e-300)) - z, 0.0)
        return out

    @staticmethod
    def s_fun_prime(xi):
        z = np.minimum(_as_float_array(xi), 1.0)
        with np.errstate(divide="ignore"):
            return np.log(z)

    @staticmethod
    def s_m(m1: float, m2: float):
        """Return (S_M, S_M') with S_M'' = 1 on (m1, m2), S_M(0)=S_M'(0)=0."""
        if not (0.0 < m1 < m2):
            raise ValueError(f"need 0 < M1 < M2, got ({m1}, {m2})")
        width = m2 - m1

        def s_m_prime(xi):
            return np.clip(_as_float_array(xi) - m1, 0.0, width)

        def s_m_fun(xi):
            x = _as_float_array(xi)
            mid = 0.5 * np.clip(x - m1, 0.0, width) ** 2
            top = width * np.maximum(x - m2, 0.0)
            return mid + top

        return s_m_fun, s_m_prime


def bind_noise(coeffs: CoefficientSet, noise_model) -> CoefficientSet:
    """Attach Psi_sigma using the sup of the model's F1 field."""
    f1_max = float(np.max(noise_model.F1)) if noise_model.K > 0 else 0.0
    return replace(coeffs, psi_sigma=coeffs.psi_sigma_factory(f1_max))


def make_model_case(m: float, sigma_kind: str = "sqrt",
                    nu_kind: str = "zero", nu_c: float = 0.0) -> CoefficientSet:
    """Power-law diffusion Phi = xi^m with the degenerate noise coefficients.

    sigma_kind 'sqrt' gives sigma = sqrt(xi); 'phi_sqrt' gives xi^(m/2).
    nu is zero or linear (nu_kind='linear' with slope ``nu_c``).
    """
    if m <= 0:
        raise ValueError(f"growth exponent m must be positive, got {m}")
    if sigma_kind not in ("sqrt", "phi_sqrt"):
        raise ValueError(f"unknown sigma_kind {sigma_kind!r}")
    if nu_kind not in ("zero", "linear"):
        raise ValueError(f"unknown nu_kind {nu_kind!r}")

    def phi(xi):
        return np.maximum(_as_float_array(xi), 0.0) ** m

    if m == 1.0:
        def phi_prime(xi):
            return np.ones_like(_as_float_array(xi))
    elif m == 2.0:
        def phi_prime(xi):
            return 2.0 * np.maximum(_as_float_array(xi), 0.0)
    else:
        def phi_prime(xi):
            x = np.maximum(_as_float_array(xi), 0.0)
            with np.errstate(divide="ignore"):
                return m * x ** (m - 1.0)

    def phi_inverse(eta):
        return np.maximum(_as_float_array(eta), 0.0) ** (1.0 / m)

    s_exp = 0.5 if sigma_kind == "sqrt" else 0.5 * m

    if s_exp == 0.5:
        def sigma(xi):
            return np.sqrt(np.maximum(_as_float_array(xi), 0.0))

        def sigma_prime(xi):
            x = np.maximum(_as_float_array(xi), 0.0)
            with np.errstate(divide="ignore"):
                return 0.5 / np.sqrt(x)
    elif s_exp == 1.0:
        def sigma(xi):
            return np.maximum(_as_float_array(xi), 0.0)

        def sigma_prime(xi):
            return np.ones_like(_as_float_array(xi))
    else:
        def sigma(xi):
            return np.maximum(_as_float_array(xi), 0.0) ** s_exp

        def sigma_prime(xi):
            x = np.maximum(_as_float_array(xi), 0.0)
            with np.errstate(divide="ignore"):
                return s_exp * x ** (s_exp - 1.0)

    if nu_kind == "zero":
        nu = lambda xi: np.zeros_like(_as_float_array(xi))
        nu_prime = lambda xi: np.zeros_like(_as_float_array(xi))
        theta_nu = lambda xi: np.zeros_like(_as_float_array(xi))
        theta_phi_nu = lambda xi: np.zeros_like(_as_float_array(xi))
    else:
        nu = lambda xi: nu_c * _as_float_array(xi)
        nu_prime = lambda xi: np.full_like(_as_float_array(xi), nu_c)
        theta_nu = lambda xi: 0.5 * nu_c * _as_float_array(xi) ** 2
        # Phi' * (c xi) / Phi = c m, so the antiderivative is linear.
        theta_phi_nu = lambda xi: nu_c * m * _as_float_array(xi)

    def theta_phi(xi):
        x = np.maximum(_as_float_array(xi), 0.0)
        return (2.0 * np.sqrt(m) / (m + 1.0)) * x ** (0.5 * (m + 1.0))

    def _log_from_one(scale):
        def f(xi):
            with np.errstate(divide="ignore"):
                return scale * np.log(_as_float_array(xi))
        return f

    def _power_from_one(scale, p):
        # scale * integral_1^xi s^(p-1) ds
        if p == 0.0:
            return _log_from_one(scale)

        def f(xi):
            return (scale / p) * (_as_float_array(xi) ** p - 1.0)
        return f

    # sigma*sigma'/xi = s_exp * xi^(2 s_exp - 2)
    theta_sigma_over_xi = _power_from_one(s_exp, 2.0 * s_exp - 1.0)
    # Phi'*sigma*sigma'/Phi = m * s_exp * xi^(2 s_exp - 2)
    theta_phi_sigma = _power_from_one(m * s_exp, 2.0 * s_exp - 1.0)

    def psi_sigma_factory(f1_max):
        # (sigma')^2 = s_exp^2 xi^(2 s_exp - 2)
        return _power_from_one(f1_max * s_exp ** 2, 2.0 * s_exp - 1.0)

    def log_phi_integral(xi):
        x = np.maximum(_as_float_array(xi), 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(x > 0.0, m * (x * np.log(np.maximum(x, 1e-300)) - x), 0.0)
        return out

    return CoefficientSet(
        m=m, phi=phi, phi_prime=phi_prime, phi_inverse=phi_inverse,
        sigma=sigma, sigma_prime=sigma_prime, nu=nu, nu_prime=nu_prime,
        theta_phi=theta_phi, theta_nu=theta_nu,
        theta_sigma_over_xi=theta_sigma_over_xi,
        theta_phi_sigma=theta_phi_sigma, theta_phi_nu=theta_phi_nu,
        psi_sigma_factory=psi_sigma_factory,
        log_phi_integral=log_phi_integral,
        sigma_kind=sigma_kind, nu_kind=nu_kind, nu_c=nu_c,
    )


def make_custom_case(m, phi, phi_prime, phi_inverse, sigma, sigma_prime,
                     nu=None, nu_prime=None, quad_tol=1e-10) -> CoefficientSet:
    """Build a set from raw callables, with quadrature antiderivatives."""
    nu = nu or (lambda xi: np.zeros_like(_as_float_array(xi)))
    nu_prime = nu_prime or (lambda xi: np.zeros_like(_as_float_array(xi)))

    theta_phi = antiderivative(lambda s: np.sqrt(max(float(phi_prime(s)), 0.0)),
                               anchor=0.0, tol=quad_tol)
    theta_nu = antiderivative(lambda s: float(nu(s)), anchor=0.0, tol=quad_tol)
    theta_sig = antiderivative(lambda s: float(sigma(s)) * float(sigma_prime(s)) / s,
                               anchor=1.0, tol=quad_tol)
    theta_phi_sig = antiderivative(
        lambda s: float(phi_prime(s)) * float(sigma(s)) * float(sigma_prime(s)) / float(phi(s)),
        anchor=1.0, tol=quad_tol)
    theta_phi_nu = antiderivative(
        lambda s: float(phi_prime(s)) * float(nu(s)) / float(phi(s)),
        anchor=0.0, tol=quad_tol)

    def psi_sigma_factory(f1_max):
        return antiderivative(lambda s: f1_max * float(sigma_prime(s)) ** 2,
                              anchor=1.0, tol=quad_tol)

    log_phi_integral = antiderivative(
        lambda s: np.log(max(float(phi(s)), 1e-300)), anchor=1e-12, tol=quad_tol)

    return CoefficientSet(
        m=m, phi=phi, phi_prime=phi_prime, phi_inverse=phi_inverse,
        sigma=sigma, sigma_prime=sigma_prime, nu=nu, nu_prime=nu_prime,
        theta_phi=theta_phi, theta_nu=theta_nu,
        theta_sigma_over_xi=theta_sig, theta_phi_sigma=theta_phi_sig,
        theta_phi_nu=theta_phi_nu, psi_sigma_factory=psi_sigma_factory,
        log_phi_integral=log_phi_integral, sigma_kind="custom", nu_kind="custom",
    )


def smooth_sigma(coeffs: CoefficientSet, n: int) -> CoefficientSet:
    """Replace sigma by the C^1 blend sigma_n.

    sigma_n equals sigma on [1/n, n]; on [0, 1/n] it is the quadratic
    matching value and slope at 1/n with sigma_n(0) = 0; above n it is the
    constant sigma(n) with sigma_n' = 0 (the cap junction is the one
    deliberate C^0 kink).  sigma-derived antiderivatives are recomputed by
    quadrature with breakpoints at the junctions.
    """
    if n < 1:
        raise ValueError(f"smoothing level n must be >= 1, got {n}")
    lo = 1.0 / n
    hi = float(n)
    v = float(coeffs.sigma(lo))
    d = float(coeffs.sigma_prime(lo))
    a = (d * lo - v) / lo ** 2
    b = (2.0 * v - d * lo) / lo
    cap = float(coeffs.sigma(hi))
    base_sigma, base_sigma_prime = coeffs.sigma, coeffs.sigma_prime

    def sigma_n(xi):
        x = _as_float_array(xi)
        xc = np.maximum(x, 0.0)
        blend = (a * xc + b) * xc
        # base sigma evaluated at >= lo only, so its vacuum singularity is moot
        mid = base_sigma(np.maximum(xc, lo))
        return np.where(xc < lo, blend, np.where(xc > hi, cap, mid))

    def sigma_n_prime(xi):
        x = _as_float_array(xi)
        xc = np.maximum(x, 0.0)
        blend = 2.0 * a * xc + b
        mid = base_sigma_prime(np.maximum(xc, lo))
        return np.where(xc < lo, blend, np.where(xc > hi, 0.0, mid))

    brk = (0.0, lo, hi)
    theta_sig = antiderivative(
        lambda s: float(sigma_n(s)) * float(sigma_n_prime(s)) / s if s > 0 else b * b,
        anchor=1.0, breakpoints=brk)
    theta_phi_sig = antiderivative(
        lambda s: float(coeffs.phi_prime(s)) * float(sigma_n(s)) * float(sigma_n_prime(s))
        / max(float(coeffs.phi(s)), 1e-300),
        anchor=1.0, breakpoints=brk)

    def psi_sigma_factory(f1_max):
        return antiderivative(lambda s: f1_max * float(sigma_n_prime(s)) ** 2,
                              anchor=1.0, breakpoints=brk)

    return replace(coeffs, sigma=sigma_n, sigma_prime=sigma_n_prime,
                   theta_sigma_over_xi=theta_sig, theta_phi_sigma=theta_phi_sig,
                   psi_sigma_factory=psi_sigma_factory, smoothing_n=n,
                   psi_sigma=None)


# ---------------------------------------------------------------------------
# assumption validators
# ---------------------------------------------------------------------------

@dataclass
class AssumptionItem:
    item_id: str
    label: str
    passed: bool
    fitted_constant: float
    witness: str = ""

    def as_dict(self):
        return {"item": self.item_id, "label": self.label, "passed": bool(self.passed),
                "fitted_constant": float(self.fitted_constant), "witness": self.witness}


@dataclass
class AssumptionReport:
    name: str
    items: list

    @property
    def all_passed(self) -> bool:
        return all(it.passed for it in self.items)

    def item(self, item_id: str) -> AssumptionItem:
        for it in self.items:
            if it.item_id == item_id:
                return it
        raise KeyError(item_id)

    def as_dict(self):
        return {"report": self.name, "all_passed": self.all_passed,
                "items": [it.as_dict() for it in self.items]}


def _tail_log_slope(xi, ratio, tail="high"):
    """Log-log slope of ratio on the outer decade; detects unbounded sups."""
    xi = np.asarray(xi, float)
    ratio = np.asarray(ratio, float)
    ok = np.isfinite(ratio) & (ratio > 0)
    xi, ratio = xi[ok], ratio[ok]
    if xi.size < 4:
        return 0.0
    if tail == "high":
        sel = xi >= xi.max() / 10.0
    else:
        sel = xi <= xi.min() * 10.0
    if np.count_nonzero(sel) < 3:
        return 0.0
    lx, lr = np.log(xi[sel]), np.log(ratio[sel])
    slope = np.polyfit(lx, lr, 1)[0]
    return float(slope)


def _sup_item(item_id, label, xi, ratio, tail="high", slope_tol=0.05):
    ratio = np.asarray(ratio, float)
    finite = np.isfinite(ratio)
    fitted = float(np.max(ratio[finite])) if finite.any() else float("inf")
    slope = _tail_log_slope(xi, ratio, tail=tail)
    if tail == "high":
        unbounded = slope > slope_tol
    else:
        unbounded = slope < -slope_tol
    passed = finite.all() and not unbounded
    witness = f"max ratio {fitted:.4g}, {tail}-tail log-slope {slope:+.3f}"
    return AssumptionItem(item_id, label, passed, fitted, witness)


def validate_uniqueness_assumptions(coeffs: CoefficientSet, xi_grid=None) -> AssumptionReport:
    """Numerical check of the structural uniqueness assumptions.

    Items: (2) Phi strictly increasing from 0; (3) at least linear decay
    of sigma^2 at 0; (4)/(5) bounded oscillation of sigma^2 and |nu| at
    infinity, with fitted constants.
    """
    xi = _XI_GRID_DEFAULT if xi_grid is None else np.asarray(xi_grid, float)
    items = []

    phi_vals = coeffs.phi(xi)
    increasing = bool(np.all(np.diff(phi_vals) > 0))
    at_zero = abs(float(coeffs.phi(0.0))) < 1e-12
    items.append(AssumptionItem(
        "U2", "Phi strictly increasing with Phi(0)=0",
        increasing and at_zero, 0.0,
        f"Phi(0)={float(coeffs.phi(0.0)):.3g}, min increment "
        f"{float(np.min(np.diff(phi_vals))):.3g}"))

    sig2 = coeffs.sigma(xi) ** 2
    low = xi <= 0.1
    items.append(_sup_item("U3", "sigma^2(xi)/xi bounded near 0",
                           xi[low], sig2[low] / xi[low], tail="low"))

    runmax_sig2 = np.maximum.accumulate(sig2)
    items.append(_sup_item("U4", "sup_[0,xi] sigma^2 <= c(1+xi+sigma^2(xi))",
                           xi, runmax_sig2 / (1.0 + xi + sig2)))

    nu_abs = np.abs(coeffs.nu(xi))
    runmax_nu = np.maximum.accumulate(nu_abs)
    items.append(_sup_item("U5", "sup_[0,xi] |nu| <= c(1+xi+|nu(xi)|)",
                           xi, runmax_nu / (1.0 + xi + nu_abs)))

    return AssumptionReport("uniqueness", items)


def validate_existence_assumptions(coeffs: CoefficientSet, noise, fbar,
                                   xi_grid=None) -> AssumptionReport:
    """Numerical check of the 11-item existence assumption list.

    ``fbar`` is the (left, right) Dirichlet data for Phi(rho); boundary
    integrability items are evaluated on the discrete two-point boundary.
    Item 6 references an unspecified delta-dependence; it is checked at
    delta in {0.1, 0.01} and both constants are reported.
    """
    xi = _XI_GRID_DEFAULT if xi_grid is None else np.asarray(xi_grid, float)
    m = coeffs.m
    items = []
    fb = np.asarray(fbar, dtype=float).ravel()
    if np.any(fb < 0):
        raise ValueError("boundary data must be non-negative")

    phi_vals = coeffs.phi(xi)
    phip_vals = coeffs.phi_prime(xi)
    sig = coeffs.sigma(xi)
    sigp = coeffs.sigma_prime(xi)
    base = 1.0 + xi + phi_vals

    ok1 = (abs(float(coeffs.phi(0.0))) < 1e-12
           and abs(float(coeffs.sigma(0.0))) < 1e-12
           and bool(np.all(phip_vals > 0)))
    items.append(AssumptionItem("E1", "Phi(0)=sigma(0)=0 and Phi'>0", ok1, 0.0,
                                f"Phi(0)={float(coeffs.phi(0.0)):.3g}, "
                                f"sigma(0)={float(coeffs.sigma(0.0)):.3g}"))

    items.append(_sup_item("E2", "Phi <= c(1+xi^m)", xi, phi_vals / (1.0 + xi ** m)))
    items.append(_sup_item("E3", "Phi' <= c(1+xi+Phi)", xi, phip_vals / base))

    # E4: either Phi'^(-1/2) <= c xi^theta, or |xi-eta|^q <= c|Theta(xi)-Theta(eta)|^2.
    theta_candidates = sorted({0.0, 0.125, 0.25, 0.375, 0.5,
                               min(max(0.5 * (1.0 - m), 0.0), 0.5)})
    branch_a = None
    with np.errstate(divide="ignore"):
        inv_root = 1.0 / np.sqrt(phip_vals)
    for th in theta_candidates:
        ratio = inv_root / xi ** th
        cand = _sup_item("E4", "", xi, ratio, tail="high")
        low_slope = _tail_log_slope(xi, ratio, tail="low")
        if cand.passed and low_slope > -0.05 and np.all(np.isfinite(ratio)):
            branch_a = (th, float(np.max(ratio)))
            break
    rng = np.random.default_rng(0)
    pairs_i = rng.integers(0, xi.size, size=400)
    pairs_j = rng.integers(0, xi.size, size=400)
    keep = pairs_i != pairs_j
    pi, pj = xi[pairs_i[keep]], xi[pairs_j[keep]]
    q = m + 1.0
    dtheta = coeffs.theta_phi(pi) - coeffs.theta_phi(pj)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio_b = np.abs(pi - pj) ** q / dtheta ** 2
    fitted_b = float(np.nanmax(ratio_b))
    branch_b_ok = bool(np.all(np.isfinite(ratio_b))) and fitted_b < 1e6
    if branch_a is not None:
        items.append(AssumptionItem(
            "E4", "Theta_Phi coercivity (branch a)", True, branch_a[1],
            f"Phi'^(-1/2) <= c xi^theta with theta={branch_a[0]:.3g}"))
    else:
        items.append(AssumptionItem(
            "E4", "Theta_Phi coercivity (branch b)", branch_b_ok, fitted_b,
            f"|xi-eta|^{q:.3g} <= c |dTheta|^2 on sampled pairs"))

    items.append(_sup_item("E5", "sigma^2 <= c(1+xi+Phi)", xi, sig ** 2 / base))

    for delta in (0.1, 0.01):
        sel = xi > delta
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = sigp[sel] ** 4 / phip_vals[sel] / base[sel]
        items.append(_sup_item(f"E6[delta={delta}]",
                               "(sigma')^4/Phi' <= c_delta (1+xi+Phi) on (delta,inf)",
                               xi[sel], ratio))

    growth = xi ** (0.5 * (m + 1.0)) - 1.0
    pos = growth > 0.05
    ratio7 = coeffs.theta_phi(xi[pos]) / growth[pos]
    fitted7 = float(np.min(ratio7))
    slope7 = _tail_log_slope(xi[pos], ratio7, tail="high")
    items.append(AssumptionItem(
        "E7", "Theta_Phi >= c (xi^((m+1)/2) - 1)",
        fitted7 > 0 and slope7 > -0.05, fitted7,
        f"min ratio {fitted7:.4g}, tail slope {slope7:+.3f}"))

    with np.errstate(invalid="ignore"):
        mixed = np.abs(coeffs.nu(xi)) ** 2 + (sig * sigp) ** 2
    items.append(_sup_item("E8", "|nu|^2 + |sigma sigma'|^2 <= c(1+xi+Phi)",
                           xi, mixed / base))

    rho_b = coeffs.phi_inverse(fb)
    theta_nu_b = float(np.sum(np.abs(coeffs.theta_nu(rho_b))))
    items.append(AssumptionItem("E9", "Theta_nu(Phi^-1(fbar)) in L1(boundary)",
                                np.isfinite(theta_nu_b), theta_nu_b,
                                f"boundary sum {theta_nu_b:.4g}"))

    sig2_b = float(np.sum(coeffs.sigma(rho_b) ** 2))
    items.append(AssumptionItem("E10", "sigma^2(Phi^-1(fbar)) in L1(boundary)",
                                np.isfinite(sig2_b), sig2_b,
                                f"boundary sum {sig2_b:.4g}"))

    if np.ptp(fb) == 0.0:
        items.append(AssumptionItem("E11", "boundary data constant", True, 0.0,
                                    f"fbar == {fb[0]:.4g}"))
    else:
        f1_max = float(np.max(noise.F1)) if noise is not None and noise.K > 0 else 0.0
        psi = coeffs.psi_sigma_factory(f1_max)
        vals = np.array([np.sum(fb ** 2), np.sum(rho_b ** 2),
                         np.sum(np.asarray(psi(rho_b)) ** 2)])
        ok11 = bool(np.all(np.isfinite(vals)))
        items.append(AssumptionItem(
            "E11", "fbar, Phi^-1(fbar), Psi_sigma(Phi^-1(fbar)) in L2(boundary)",
            ok11, float(np.max(vals)),
            f"L2 sums {vals[0]:.3g}/{vals[1]:.3g}/{vals[2]:.3g}"))

    return AssumptionReport("existence", items)
