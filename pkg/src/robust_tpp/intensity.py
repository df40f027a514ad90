"""Per-stream spline intensity fits and NHP log-likelihoods.

The multiplicative update used everywhere here,
``b_h <- b_h * sum_i kappa_h(t_i) / lambda(t_i) / (L * int kappa_h)``,
is the EM step for a Poisson superposition: it never decreases the
likelihood and keeps ``L * int lambda = M`` after every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, EmptyClass, EmptyStream, NumericalError
from .events import EventStream
from .spline import SplineBasis, basis_integrals, eval_basis

FLOOR_FRACTION = 1e-6


@dataclass(frozen=True, eq=False)
class FittedIntensity:
    coeffs: np.ndarray
    basis: SplineBasis
    num_events: int
    num_periods: int
    id: str = ""
    n_iter: int = 0
    converged: bool = True
    history: tuple = field(default=(), repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def __call__(self, t):
        return eval_basis(self.basis, t) @ self.coeffs

    @property
    def objective(self) -> float:
        return self.history[-1] if self.history else float("nan")

    @property
    def sparse_flag(self) -> bool:
        """True when the stream has fewer events than basis functions."""
        return self.num_events < self.basis.H

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "H": self.basis.H,
            "T": self.basis.T,
            "L": self.num_periods,
            "M": self.num_events,
            "coeffs": [float(c) for c in self.coeffs],
        }

    @classmethod
    def from_dict(cls, d) -> "FittedIntensity":
        return cls(
            np.asarray(d["coeffs"], dtype=float),
            SplineBasis(int(d["H"]), float(d["T"])),
            int(d["M"]),
            int(d["L"]),
            str(d.get("id", "")),
        )


class EventDesign:
    """All events of a list of streams stacked against the basis.

    ``phi[e]`` holds the basis row of event ``e`` (evaluated at its phase,
    optionally aligned by a per-stream shift); ``member`` is the sparse
    stream-by-event incidence used for segment sums.
    """

    def __init__(self, streams: Sequence[EventStream], basis: SplineBasis, shifts=None):
        self.basis = basis
        self.N = len(streams)
        self.M = np.array([s.num_events for s in streams], dtype=float)
        self.L = np.array([s.num_periods for s in streams], dtype=float)
        self.owner = np.repeat(np.arange(self.N), self.M.astype(int))
        phases = np.concatenate([s.phases for s in streams]) if self.N else np.empty(0)
        self._phases = phases
        self.member = sp.csr_matrix(
            (np.ones(self.owner.size), (self.owner, np.arange(self.owner.size))),
            shape=(self.N, self.owner.size),
        )
        self.shifts = None
        self.set_shifts(shifts)

    def set_shifts(self, shifts):
        """Align stream n by evaluating the basis at ``phase - shifts[n]``."""
        if shifts is None:
            self.shifts = None
            ph = self._phases
        else:
            self.shifts = np.asarray(shifts, dtype=float)
            ph = np.mod(self._phases - self.shifts[self.owner], self.basis.T)
        self.phi = eval_basis(self.basis, ph)

    def segment_sum(self, x):
        return np.asarray(self.member @ x)


def default_floor(M, L, T):
    return FLOOR_FRACTION * np.asarray(M, dtype=float) / (np.asarray(L, dtype=float) * T)


def _stream_objective(design, B, lam):
    integ = basis_integrals(design.basis)
    with np.errstate(divide="ignore"):
        ll = design.segment_sum(np.log(lam))
    return ll - design.L * (B @ integ)


def fit_intensities(
    streams: Sequence[EventStream],
    basis: SplineBasis,
    max_iters: int = 500,
    tol: float = 1e-8,
    b_floor=None,
) -> list[FittedIntensity]:
    """Fit every stream independently (vectorised); see :func:`fit_intensity`."""
    streams = list(streams)
    for s in streams:
        if s.num_events == 0:
            raise EmptyStream(f"stream {s.id!r} has no events")
        if s.period_T != basis.T:
            raise ConfigError(f"stream {s.id!r} has period {s.period_T}, basis has {basis.T}")
    design = EventDesign(streams, basis)
    N, H = design.N, basis.H
    integ = basis_integrals(basis)
    floor = default_floor(design.M, design.L, basis.T) if b_floor is None else np.broadcast_to(
        np.asarray(b_floor, dtype=float), (N,)
    )
    B = np.repeat((design.M / (design.L * basis.T))[:, None], H, axis=1)
    B = np.maximum(B, floor[:, None])
    active = np.ones(N, dtype=bool)
    n_iter = np.zeros(N, dtype=int)
    lam = np.einsum("eh,eh->e", design.phi, B[design.owner])
    history = [_stream_objective(design, B, lam)]
    for _ in range(max_iters):
        if not active.any():
            break
        ratio = design.segment_sum(design.phi / lam[:, None])
        B_new = B * ratio / (design.L[:, None] * integ)
        B_new = np.maximum(B_new, floor[:, None])
        B_new[~active] = B[~active]
        change = np.max(np.abs(B_new - B) / B, axis=1)
        B = B_new
        n_iter[active] += 1
        lam = np.einsum("eh,eh->e", design.phi, B[design.owner])
        obj = _stream_objective(design, B, lam)
        if not np.all(np.isfinite(obj)):
            bad = int(np.flatnonzero(~np.isfinite(obj))[0])
            raise NumericalError(f"stream {streams[bad].id!r}: non-finite fit objective")
        history.append(np.where(active, obj, history[-1]))
        active &= change >= tol
    hist = np.array(history)
    return [
        FittedIntensity(
            B[n],
            basis,
            int(design.M[n]),
            int(design.L[n]),
            streams[n].id,
            int(n_iter[n]),
            bool(not active[n]),
            tuple(hist[: n_iter[n] + 1, n]),
        )
        for n in range(N)
    ]


def fit_intensity(stream: EventStream, basis: SplineBasis, max_iters=500, tol=1e-8, b_floor=None):
    """Maximise ``sum_i log lambda(t_i) - L * int_0^T lambda`` over ``b >= b_floor``.

    Stops once the largest relative coefficient change drops below ``tol``.
    """
    return fit_intensities([stream], basis, max_iters, tol, b_floor)[0]


def log_nhp(stream: EventStream, basis: SplineBasis, coeffs) -> float:
    """``sum_i log lambda(t_i mod T) - L * int_0^T lambda``; ``-inf`` if some ``lambda(t_i) = 0``."""
    coeffs = np.asarray(coeffs, dtype=float)
    if np.any(coeffs < 0):
        raise ConfigError("coefficients must be nonnegative")
    lam = eval_basis(basis, stream.phases) @ coeffs
    exposure = stream.num_periods * float(coeffs @ basis_integrals(basis))
    if np.any(lam <= 0):
        return float("-inf")
    return float(np.sum(np.log(lam)) - exposure)


def log_nhp_gradient(stream: EventStream, basis: SplineBasis, coeffs) -> np.ndarray:
    """Gradient of :func:`log_nhp` in the coefficients."""
    coeffs = np.asarray(coeffs, dtype=float)
    phi = eval_basis(basis, stream.phases)
    lam = phi @ coeffs
    if np.any(lam <= 0):
        raise NumericalError(f"stream {stream.id!r}: zero intensity at an event")
    return (phi / lam[:, None]).sum(axis=0) - stream.num_periods * basis_integrals(basis)


def loglik_matrix(design: EventDesign, B) -> np.ndarray:
    """``log NHP(S_n | B_k)`` for all streams and classes; shape (N, K)."""
    B = np.atleast_2d(B)
    lam = design.phi @ B.T
    with np.errstate(divide="ignore"):
        ll = design.segment_sum(np.log(lam))
    return ll - design.L[:, None] * (B @ basis_integrals(design.basis))[None, :]


def loglik_gradients(design: EventDesign, B) -> np.ndarray:
    """Per-stream gradients of the log-likelihood; shape (N, K, H)."""
    B = np.atleast_2d(B)
    lam = design.phi @ B.T
    integ = basis_integrals(design.basis)
    out = np.empty((design.N, B.shape[0], B.shape[1]))
    for k in range(B.shape[0]):
        out[:, k, :] = design.segment_sum(design.phi / lam[:, k : k + 1])
    return out - design.L[:, None, None] * integ[None, None, :]


def weighted_fit(
    design: EventDesign,
    R,
    max_iters: int = 500,
    tol: float = 1e-8,
    init=None,
) -> np.ndarray:
    """Per-class maximiser of ``sum_n R[n, k] * log NHP(S_n | B_k)``; returns B (K, H).

    Each class gets the floor ``1e-6 * rate_k`` where ``rate_k`` is the
    weighted events-per-unit-time.
    """
    R = np.asarray(R, dtype=float)
    if R.ndim == 1:
        R = R[:, None]
    K, H = R.shape[1], design.basis.H
    integ = basis_integrals(design.basis)
    exposure = R.T @ design.L
    mass = R.T @ design.M
    if np.any(exposure <= 0) or np.any(mass <= 0):
        k = int(np.flatnonzero((exposure <= 0) | (mass <= 0))[0])
        raise EmptyClass(f"class {k} has zero total weight")
    rate = mass / (exposure * design.basis.T)
    floor = FLOOR_FRACTION * rate
    if init is None:
        B = np.repeat(rate[:, None], H, axis=1)
    else:
        B = np.maximum(np.array(init, dtype=float), floor[:, None])
    Wev = R[design.owner]
    active = np.ones(K, dtype=bool)
    for _ in range(max_iters):
        lam = design.phi @ B.T
        num = (Wev / lam).T @ design.phi
        B_new = np.maximum(B * num / (exposure[:, None] * integ), floor[:, None])
        B_new[~active] = B[~active]
        change = np.max(np.abs(B_new - B) / B, axis=1)
        B = B_new
        active &= change >= tol
        if not active.any():
            break
    return B
