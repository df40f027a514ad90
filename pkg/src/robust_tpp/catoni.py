"""Catoni-type influence function, its derivatives and the weighted M-estimator."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DegenerateWeights, NumericalError

KNEE = 2.0
FLAT = 9.5
CUBIC = 0.032 / 9
PLATEAU = 1.5 + np.log(5.0)

MU_TOL = 1e-10
MU_MAX_ITERS = 200


def _odd(fn, x):
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    return np.sign(x) * fn(a)


def _phi_pos(a):
    out = np.full_like(a, PLATEAU)
    lo = a <= KNEE
    mid = (a > KNEE) & (a <= FLAT)
    out[lo] = np.log1p(a[lo] + 0.5 * a[lo] ** 2)
    out[mid] = CUBIC * (a[mid] - FLAT) ** 3 + PLATEAU
    return out


def _dphi_pos(a):
    out = np.zeros_like(a)
    lo = a <= KNEE
    mid = (a > KNEE) & (a <= FLAT)
    out[lo] = (1 + a[lo]) / (1 + a[lo] + 0.5 * a[lo] ** 2)
    out[mid] = 3 * CUBIC * (a[mid] - FLAT) ** 2
    return out


def _d2phi_pos(a):
    out = np.zeros_like(a)
    lo = a <= KNEE
    mid = (a > KNEE) & (a <= FLAT)
    out[lo] = -(a[lo] + 0.5 * a[lo] ** 2) / (1 + a[lo] + 0.5 * a[lo] ** 2) ** 2
    out[mid] = 6 * CUBIC * (a[mid] - FLAT)
    return out


def phi(x):
    """Odd, nondecreasing, bounded by ``1.5 + log 5``; flat beyond ``|x| = 9.5``."""
    return _odd(_phi_pos, x)


def phi_prime(x):
    x = np.asarray(x, dtype=float)
    return _dphi_pos(np.abs(x))


def phi_second(x):
    return _odd(_d2phi_pos, x)


def phi_rho(x, rho):
    """``phi(rho * x) / rho``."""
    return phi(rho * np.asarray(x, dtype=float)) / rho


def phi_rho_prime(x, rho):
    return phi_prime(rho * np.asarray(x, dtype=float))


def psi_weight(x, alpha, kernel: str = "as_printed"):
    """Initial-weight kernel ``psi(x / alpha)``.

    ``as_printed``: ``u / (1 + u + u^2 / 2)``.
    ``phi_prime``: ``(1 + u) / (1 + u + u^2 / 2)`` (the derivative of phi on [0, 2]).
    """
    if not np.all(np.asarray(alpha) > 0):
        raise ConfigError("alpha must be positive")
    u = np.asarray(x, dtype=float) / alpha
    if kernel == "as_printed":
        return u / (1 + u + 0.5 * u**2)
    if kernel == "phi_prime":
        return (1 + u) / (1 + u + 0.5 * u**2)
    raise ConfigError(f"unknown psi kernel {kernel!r}")


def _residual(values, weights, mu, rho, influence):
    x = values - mu
    if influence == "identity":
        return np.sum(weights * x, axis=0)
    return np.sum(weights * phi_rho(x, rho), axis=0)


def solve_mu_batch(values, weights, rho, influence: str = "catoni"):
    """Column-wise roots of ``sum_n w_n phi_rho(v_n - mu) = 0``.

    ``values`` and ``weights`` are (N, K); ``rho`` is scalar or (K,). When the
    root set is an interval (every residual in the flat zone) the midpoint is
    returned.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if weights.ndim == 1:
        weights = weights[:, None]
    weights = np.broadcast_to(weights, values.shape)
    if not np.all(np.isfinite(values)):
        raise NumericalError("solve_mu: non-finite value")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise NumericalError("solve_mu: weights must be finite and nonnegative")
    total = weights.sum(axis=0)
    if np.any(total <= 0):
        raise DegenerateWeights("solve_mu: all weights are zero")
    if influence == "identity":
        return (weights * values).sum(axis=0) / total
    if influence != "catoni":
        raise ConfigError(f"unknown influence {influence!r}")
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (values.shape[1],))
    if np.any(rho <= 0):
        raise ConfigError("rho must be positive")
    # only positively weighted samples define the bracket
    masked = np.where(weights > 0, values, np.nan)
    lo0 = np.nanmin(masked, axis=0) - 1.0
    hi0 = np.nanmax(masked, axis=0) + 1.0

    def bisect(keep_lo):
        lo, hi = lo0.copy(), hi0.copy()
        for _ in range(MU_MAX_ITERS):
            if np.all(hi - lo <= MU_TOL):
                break
            mid = 0.5 * (lo + hi)
            f = _residual(values, weights, mid, rho, influence)
            # lower edge: smallest mu with f <= 0; upper edge: largest mu with f >= 0
            go_right = f > 0 if keep_lo else f >= 0
            lo = np.where(go_right, mid, lo)
            hi = np.where(go_right, hi, mid)
        return 0.5 * (lo + hi)

    return 0.5 * (bisect(True) + bisect(False))


def solve_mu(values, weights, rho: float = 1.0, influence: str = "catoni") -> float:
    """Weighted Catoni location: root in mu of ``sum_n w_n phi_rho(v_n - mu)``."""
    v = np.asarray(values, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    if v.shape != w.shape:
        raise ConfigError("values and weights must have equal length")
    return float(solve_mu_batch(v[:, None], w[:, None], rho, influence)[0])
