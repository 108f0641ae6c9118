"""Small adaptive-Simpson quadrature used for antiderivative handles.

Model-case coefficient sets use closed forms; anything custom falls back
to these routines (absolute tolerance 1e-10 by default).
"""

from __future__ import annotations

import numpy as np


def adaptive_simpson(f, a: float, b: float, tol: float = 1e-10, max_depth: int = 48) -> float:
    """Integrate f over [a, b] by recursive Simpson with error control."""
    if a == b:
        return 0.0

    def simpson(lo, hi, flo, fmid, fhi):
        return (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi)

    def recurse(lo, hi, flo, fmid, fhi, whole, eps, depth):
        mid = 0.5 * (lo + hi)
        lm = 0.5 * (lo + mid)
        rm = 0.5 * (mid + hi)
        flm = float(f(lm))
        frm = float(f(rm))
        left = simpson(lo, mid, flo, flm, fmid)
        right = simpson(mid, hi, fmid, frm, fhi)
        if depth >= max_depth or abs(left + right - whole) <= 15.0 * eps:
            return left + right + (left + right - whole) / 15.0
        return (recurse(lo, mid, flo, flm, fmid, left, eps / 2.0, depth + 1)
                + recurse(mid, hi, fmid, frm, fhi, right, eps / 2.0, depth + 1))

    mid = 0.5 * (a + b)
    fa, fm, fb = float(f(a)), float(f(mid)), float(f(b))
    whole = simpson(a, b, fa, fm, fb)
    return recurse(a, b, fa, fm, fb, whole, tol, 0)


def antiderivative(f, anchor: float = 0.0, tol: float = 1e-10, breakpoints=()):
    """Return F with F(anchor) = 0 and F' = f, evaluated by quadrature.

    ``breakpoints`` lists kink locations of f so each smooth piece is
    integrated separately.  The returned callable accepts scalars or
    arrays (arrays are evaluated pointwise).
    """
    brk = np.sort(np.asarray(breakpoints, dtype=float)) if len(breakpoints) else np.empty(0)

    def integrate(lo, hi):
        if lo == hi:
            return 0.0
        sign = 1.0
        if lo > hi:
            lo, hi = hi, lo
            sign = -1.0
        cuts = [lo] + [b for b in brk if lo < b < hi] + [hi]
        total = 0.0
        for u, v in zip(cuts[:-1], cuts[1:]):
            total += adaptive_simpson(f, u, v, tol)
        return sign * total

    def F(xi):
        arr = np.asarray(xi, dtype=float)
        if arr.ndim == 0:
            return integrate(anchor, float(arr))
        out = np.empty(arr.shape)
        flat = arr.ravel()
        res = out.ravel()
        for i, v in enumerate(flat):
            res[i] = integrate(anchor, float(v))
        return out

    return F
