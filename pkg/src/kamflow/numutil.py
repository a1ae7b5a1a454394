"""Small numeric helpers: compensated dot products and stable special functions."""

from __future__ import annotations

import numpy as np

# Dekker splitting constant for binary64 (2**27 + 1).
_SPLIT = 134217729.0


def _split(x):
    c = _SPLIT * x
    hi = c - (c - x)
    lo = x - hi
    return hi, lo


def lattice_dot(idx, omega):
    """<k, omega> for integer rows k, with error-free products and compensated summation.

    ``idx`` is an (m, n) integer array, ``omega`` a length-n float vector.  The
    integer factors are exactly representable, so each product's rounding error
    is recovered with a Dekker split of omega alone.  Products and their error
    terms are then accumulated with Neumaier summation.  Near-resonant sums
    lose all relative accuracy in a naive dot; this keeps them to ~1 ulp.
    """
    idx = np.asarray(idx, dtype=np.float64)
    if idx.ndim == 1:
        idx = idx[None, :]
        squeeze = True
    else:
        squeeze = False
    omega = np.asarray(omega, dtype=np.float64)
    n = omega.shape[0]
    s = np.zeros(idx.shape[0])
    comp = np.zeros(idx.shape[0])
    for j in range(n):
        k = idx[:, j]
        whi, wlo = _split(omega[j])
        p = k * omega[j]
        err = (k * whi - p) + k * wlo
        for term in (p, err):
            t = s + term
            big = np.abs(s) >= np.abs(term)
            comp += np.where(big, (s - t) + term, (term - t) + s)
            s = t
    out = s + comp
    return out[0] if squeeze else out


def log_sinhc(x):
    """log(sinh(x)/x) elementwise for x >= 0, stable for both tiny and large x."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    tiny = x < 1e-4
    mid = ~tiny
    xt = x[tiny]
    # series: sinh(x)/x = 1 + x^2/6 + x^4/120 + ...
    out[tiny] = np.log1p(xt * xt / 6.0 * (1.0 + xt * xt / 20.0))
    xm = x[mid]
    # sinh(x)/x = e^x (1 - e^{-2x}) / (2x)
    out[mid] = xm + np.log(-np.expm1(-2.0 * xm) / (2.0 * xm))
    return out
