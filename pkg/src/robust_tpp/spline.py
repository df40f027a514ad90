"""Periodic uniform cubic B-spline basis on [0, T]."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


def _kappa1_unit(x):
    """Cardinal cubic B-spline on knots 0..4 (argument in units of the knot spacing)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    a = (x >= 0) & (x < 1)
    b = (x >= 1) & (x < 2)
    c = (x >= 2) & (x < 3)
    d = (x >= 3) & (x < 4)
    xa, xb, xc, xd = x[a], x[b], x[c], x[d]
    out[a] = xa**3
    out[b] = (2 - xb) * xb**2 + xb * (3 - xb) * (xb - 1) + (4 - xb) * (xb - 1) ** 2
    out[c] = (xc - 4) ** 2 * (xc - 2) + (xc - 1) * (4 - xc) * (3 - xc) + (xc - 3) ** 2 * xc
    out[d] = (4 - xd) ** 3
    return out / 6.0


@dataclass(frozen=True)
class SplineBasis:
    """H periodic cubic B-splines with uniform knots ``u_i = i * T / H``.

    ``kappa_h(u) = kappa_1((u - (h - 1) * du) mod T)`` where ``kappa_1`` is
    supported on ``[0, 4 du)``.
    """

    H: int
    T: float

    def __post_init__(self):
        if int(self.H) != self.H or self.H < 4:
            raise ConfigError(f"H must be an integer >= 4, got {self.H}")
        if not self.T > 0:
            raise ConfigError(f"T must be positive, got {self.T}")
        object.__setattr__(self, "H", int(self.H))
        object.__setattr__(self, "T", float(self.T))

    @property
    def du(self) -> float:
        return self.T / self.H

    @property
    def knots(self) -> np.ndarray:
        return np.arange(self.H + 1) * self.du

    def __call__(self, t):
        return eval_basis(self, t)

    def to_dict(self):
        return {"H": self.H, "T": self.T}


def build_basis(H: int, T: float) -> SplineBasis:
    return SplineBasis(H, T)


def kappa1(basis: SplineBasis, u):
    """The first basis function on [0, T] (zero beyond ``4 du``)."""
    return _kappa1_unit(np.asarray(u, dtype=float) / basis.du)


def eval_basis(basis: SplineBasis, t) -> np.ndarray:
    """Basis values at ``t``; shape ``t.shape + (H,)``. ``t`` is reduced mod T."""
    t = np.asarray(t, dtype=float)
    x = np.mod(t, basis.T) / basis.du
    # guard against mod returning exactly H after rounding
    x = np.where(x >= basis.H, x - basis.H, x)
    y = np.mod(x[..., None] - np.arange(basis.H), basis.H)
    return _kappa1_unit(y)


def basis_integrals(basis: SplineBasis) -> np.ndarray:
    """Exact integrals of each basis function over one period (all equal T/H)."""
    return np.full(basis.H, basis.T / basis.H)


def eval_intensity(basis: SplineBasis, coeffs, t):
    """``sum_h b_h kappa_h(t)``; coefficients must be nonnegative."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[-1] != basis.H:
        raise ConfigError(f"expected {basis.H} coefficients, got {coeffs.shape[-1]}")
    if np.any(coeffs < 0):
        raise ConfigError("intensity coefficients must be nonnegative")
    return eval_basis(basis, t) @ coeffs


def quadrature_grid(T: float, G: int):
    """Uniform periodic trapezoid rule: nodes ``i T / G`` (i < G), equal weights ``T / G``.

    For T-periodic integrands this equals the composite trapezoid rule on G
    subintervals of [0, T].
    """
    if G < 1:
        raise ConfigError("quadrature size G must be >= 1")
    return np.arange(G) * (T / G), T / G
