"""Standard normal CDF and the folded-normal mean with its derivatives.

All functions broadcast over numpy arrays.
"""

import numpy as np
from scipy import special

_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
_TINY_VAR = 1e-300


def normal_cdf(x):
    return special.ndtr(x)


def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _check_var(s2):
    s2 = np.asarray(s2, dtype=float)
    if np.any(~(s2 > 0)):
        raise ValueError("variance must be strictly positive")
    return s2


def folded_normal_mean(u, s2):
    """E|Y| for Y ~ N(u, s2).

    Computed as ``sqrt(2 s2/pi) exp(-u^2/(2 s2)) + u erf(u/sqrt(2 s2))``,
    which is the usual ``u (1 - 2 Phi(-u/s))`` form written with ``erf``.
    Below ``s2 = 1e-300`` the limit ``|u|`` is returned.
    """
    s2 = _check_var(s2)
    u = np.asarray(u, dtype=float)
    safe = np.maximum(s2, _TINY_VAR)
    s = np.sqrt(safe)
    out = _SQRT_2_OVER_PI * s * np.exp(-0.5 * u * u / safe) + u * special.erf(u / (np.sqrt(2.0) * s))
    out = np.where(s2 < _TINY_VAR, np.abs(u), out)
    return out[()] if out.ndim == 0 else out


def folded_normal_mean_grad(u, s2):
    """Partial derivatives ``(df/du, df/ds2)`` of :func:`folded_normal_mean`."""
    s2 = _check_var(s2)
    u = np.asarray(u, dtype=float)
    safe = np.maximum(s2, _TINY_VAR)
    s = np.sqrt(safe)
    du = special.erf(u / (np.sqrt(2.0) * s))
    ds2 = normal_pdf(u / s) / s
    du = np.where(s2 < _TINY_VAR, np.sign(u), du)
    ds2 = np.where(s2 < _TINY_VAR, 0.0, ds2)
    if du.ndim == 0:
        return du[()], ds2[()]
    return du, ds2


def folded_normal_mean_hess(u, s2):
    """Second derivatives ``(d2f/du2, d2f/du ds2, d2f/ds2^2)``."""
    s2 = _check_var(s2)
    u = np.asarray(u, dtype=float)
    s = np.sqrt(s2)
    phi = normal_pdf(u / s)
    duu = 2.0 * phi / s
    dus = -u * phi / (s * s2)
    dss = phi / s * (u * u / (2.0 * s2 * s2) - 1.0 / (2.0 * s2))
    return duu, dus, dss
