"""Spline-induced distance between event streams and its shift-invariant variant."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError
from .intensity import FittedIntensity
from .spline import SplineBasis, eval_basis, quadrature_grid

DEFAULT_G = 1024
DEFAULT_H_SHIFT = 24


def shift_grid(T: float, H_shift: int) -> np.ndarray:
    """Candidate shifts ``T/H_shift, 2T/H_shift, ..., T``."""
    if H_shift < 1:
        raise ConfigError("H_shift must be >= 1")
    return np.arange(1, H_shift + 1) * (T / H_shift)


def _check(fits: Sequence[FittedIntensity]):
    T = {f.basis.T for f in fits}
    if len(T) > 1:
        raise ConfigError(f"fits disagree on period T: {sorted(T)}")
    for f in fits:
        if f.num_events < 1:
            raise DataError(f"stream {f.id!r}: distance needs at least one event")


def scaled_curves(fits: Sequence[FittedIntensity], G: int = DEFAULT_G, offset: float = 0.0):
    """``lambda_hat(t + offset) / sqrt(M)`` on the quadrature nodes; shape (n, G)."""
    basis = fits[0].basis
    nodes, _ = quadrature_grid(basis.T, G)
    K = eval_basis(basis, nodes + offset)
    coeffs = np.stack([f.coeffs for f in fits])
    root_m = np.sqrt(np.array([f.num_events for f in fits], dtype=float))
    return (K @ coeffs.T).T / root_m[:, None]


def shifted_curves(coeffs, basis: SplineBasis, H_shift: int, G: int = DEFAULT_G):
    """``sum_h b_h kappa_h(t + s_j)`` for each shift on the grid; shape (n, H_shift, G)."""
    nodes, _ = quadrature_grid(basis.T, G)
    shifts = shift_grid(basis.T, H_shift)
    # s = T is reduced to 0 so the full-period shift reproduces the unshifted curve exactly
    Ks = eval_basis(basis, nodes[None, :] + np.mod(shifts, basis.T)[:, None])  # (H_shift, G, H)
    return np.moveaxis(Ks @ np.atleast_2d(coeffs).T, -1, 0)


def distance(fitA: FittedIntensity, fitB: FittedIntensity, G: int = DEFAULT_G) -> float:
    """Trapezoid approximation of ``int_0^T |lam_A / sqrt(M_A) - lam_B / sqrt(M_B)| dt``."""
    _check([fitA, fitB])
    c = scaled_curves([fitA, fitB], G)
    _, w = quadrature_grid(fitA.basis.T, G)
    return float(w * np.abs(c[0] - c[1]).sum())


def shifted_distance(fitA, fitB, H_shift: int = DEFAULT_H_SHIFT, G: int = DEFAULT_G):
    """Minimum of the distance over shifts of A on the grid; returns ``(distance, best_shift)``.

    Ties resolve to the smallest shift.
    """
    _check([fitA, fitB])
    basis = fitA.basis
    _, w = quadrature_grid(basis.T, G)
    a = shifted_curves(fitA.coeffs, basis, H_shift, G)[0] / np.sqrt(fitA.num_events)
    b = scaled_curves([fitB], G)[0]
    vals = w * np.abs(a - b[None, :]).sum(axis=1)
    j = int(np.argmin(vals))
    return float(vals[j]), float(shift_grid(basis.T, H_shift)[j])


@dataclass(frozen=True)
class DistanceMatrix:
    values: np.ndarray
    ids: tuple
    shift_invariant: bool = False
    H_shift: int | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "ids", tuple(self.ids))

    def __getitem__(self, idx):
        return self.values[idx]

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def to_csv(self, path, config_hash: str | None = None):
        """Square CSV with an ``id`` column; an optional trailing ``config_hash`` column."""
        tail = [] if config_hash is None else [config_hash]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["id", *self.ids, *(["config_hash"] if tail else [])])
            for sid, row in zip(self.ids, self.values):
                w.writerow([sid, *(repr(float(x)) for x in row), *tail])

    @classmethod
    def from_csv(cls, path) -> "DistanceMatrix":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or not rows[0] or rows[0][0] != "id":
            raise DataError(f"{path}: distance CSV must start with an 'id' header cell")
        head = rows[0][1:]
        width = len(head) - (1 if head and head[-1] == "config_hash" else 0)
        ids = head[:width]
        try:
            vals = np.array([[float(x) for x in r[1 : width + 1]] for r in rows[1:]], dtype=float)
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from None
        if vals.shape != (width, width):
            raise DataError(f"{path}: distance matrix is not square")
        return cls(vals, ids)


def distance_matrix(
    fits: Sequence[FittedIntensity],
    shift: bool = False,
    H_shift: int = DEFAULT_H_SHIFT,
    G: int = DEFAULT_G,
    threads: int | None = None,
) -> DistanceMatrix:
    """All pairwise distances; each unordered pair is computed once and mirrored.

    For the shift-invariant variant entry ``(i, j)`` with ``i < j`` minimises
    over shifts of stream i.
    """
    fits = list(fits)
    _check(fits)
    n = len(fits)
    basis = fits[0].basis
    _, w = quadrature_grid(basis.T, G)
    base = scaled_curves(fits, G)
    if shift:
        root_m = np.sqrt(np.array([f.num_events for f in fits], dtype=float))
        moved = shifted_curves(np.stack([f.coeffs for f in fits]), basis, H_shift, G) / root_m[:, None, None]

        def row(i):
            if i + 1 >= n:
                return np.empty(0)
            diff = np.abs(moved[i][None, :, :] - base[i + 1 :, None, :]).sum(axis=2) * w
            return diff.min(axis=1)

    else:

        def row(i):
            return w * np.abs(base[i + 1 :] - base[i][None, :]).sum(axis=1)

    D = np.zeros((n, n))
    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(row, range(n)))
    else:
        rows = [row(i) for i in range(n)]
    for i, r in enumerate(rows):
        D[i, i + 1 :] = r
        D[i + 1 :, i] = r
    return DistanceMatrix(D, [f.id for f in fits], shift, H_shift if shift else None)
