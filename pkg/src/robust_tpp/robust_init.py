"""Outlier-screened k-means++ initialisation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .catoni import psi_weight
from .distance import DEFAULT_G, DEFAULT_H_SHIFT, shift_grid, shifted_curves
from .errors import ConfigError
from .spline import eval_basis, quadrature_grid


@dataclass
class ScreenConfig:
    """Screening knobs: comparator count, inlier target, speed and quantile level."""

    M: int = 50
    N_prime: int | float = 0.75
    beta: float = 0.3
    alpha_q: float = 0.2
    seed: int | None = None

    def target(self, N: int) -> int:
        """Inlier count; a float in (0, 1] is read as a fraction of N."""
        n = self.N_prime
        if isinstance(n, float) and n <= 1.0:
            n = int(math.floor(n * N))
        return int(n)

    def validate(self, N: int):
        n_prime = self.target(N)
        if not 0 < self.alpha_q < 1:
            raise ConfigError("alpha_q must lie in (0, 1)")
        if not 1 <= n_prime <= N:
            raise ConfigError(f"N_prime={n_prime} must lie in [1, N={N}]")
        if not 0 < self.beta:
            raise ConfigError("beta must be positive")
        if self.M < 1:
            raise ConfigError("M must be >= 1")


@dataclass
class InitResult:
    inlier_ids: np.ndarray
    centers: np.ndarray
    r_ini: np.ndarray
    shifts_ini: np.ndarray | None = None
    rounds: list = field(default_factory=list)

    def to_dict(self, ids=None):
        name = (lambda i: ids[i]) if ids is not None else int
        return {
            "inlier_ids": [name(i) for i in self.inlier_ids],
            "center_ids": [name(i) for i in self.centers],
            "r_ini": self.r_ini.tolist(),
            "shifts_ini": None if self.shifts_ini is None else self.shifts_ini.tolist(),
        }


def lower_quantile(x, alpha: float) -> float:
    """Nearest-rank lower quantile: the ceil(alpha * m)-th smallest (1-based)."""
    x = np.sort(np.asarray(x, dtype=float))
    k = max(1, int(math.ceil(alpha * x.size)))
    return float(x[k - 1])


def screen_outliers(D, cfg: ScreenConfig, rng=None) -> np.ndarray:
    """Iteratively admit the streams whose lower alpha-quantile distance is smallest.

    Round 0 draws comparators from all other streams; later rounds draw them
    from the admitted set. Returns admitted indices, sorted.
    """
    return _screen(D, cfg, rng)[0]


def _screen(D, cfg, rng):
    D = np.asarray(D, dtype=float)
    N = D.shape[0]
    cfg.validate(N)
    n_prime = cfg.target(N)
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    admitted = np.zeros(N, dtype=bool)
    rounds = []
    while admitted.sum() < n_prime:
        pool = np.flatnonzero(admitted)
        candidates = np.flatnonzero(~admitted)
        q = np.empty(candidates.size)
        for j, n in enumerate(candidates):
            comp = np.flatnonzero(np.arange(N) != n) if pool.size == 0 else pool
            m = min(cfg.M, comp.size)
            if m == 0:
                q[j] = 0.0
                continue
            picks = rng.choice(comp, size=m, replace=False)
            q[j] = lower_quantile(D[n, picks], cfg.alpha_q)
        take = min(int(math.floor(cfg.beta * candidates.size)), n_prime - int(admitted.sum()))
        take = max(take, 1)
        order = np.argsort(q, kind="stable")
        chosen = candidates[order[:take]]
        admitted[chosen] = True
        rounds.append({"candidates": candidates, "quantiles": q, "admitted": chosen})
    return np.flatnonzero(admitted), rounds


def kmeanspp_centers(inliers, D, K: int, rng=None) -> np.ndarray:
    """D^2 seeding restricted to ``inliers``; returns K stream indices."""
    inliers = np.asarray(inliers, dtype=int)
    D = np.asarray(D, dtype=float)
    if K > inliers.size:
        raise ConfigError(f"K={K} exceeds the {inliers.size} screened inliers")
    if K < 1:
        raise ConfigError("K must be >= 1")
    rng = np.random.default_rng(rng)
    centers = [int(rng.choice(inliers))]
    nearest = D[inliers, centers[0]].copy()
    for _ in range(1, K):
        p = nearest**2
        chosen = np.isin(inliers, centers)
        p[chosen] = 0.0
        total = p.sum()
        if total > 0:
            nxt = int(rng.choice(inliers, p=p / total))
        else:
            nxt = int(rng.choice(inliers[~chosen]))
        centers.append(nxt)
        nearest = np.minimum(nearest, D[inliers, nxt])
    return np.array(centers)


def upsilon(inliers, centers, D) -> float:
    """Sum over inliers of the squared distance to the nearest center."""
    sub = np.asarray(D)[np.ix_(np.asarray(inliers), np.asarray(centers))]
    return float((sub.min(axis=1) ** 2).sum())


def initial_weights(inliers, centers, D, N: int | None = None, kernel: str = "as_printed") -> np.ndarray:
    """Column-normalised psi weights around each center; zero rows off the inlier set.

    The per-class scale is the median inlier distance to the center. A class
    whose scale or weight total is zero falls back to uniform weights.
    """
    inliers = np.asarray(inliers, dtype=int)
    D = np.asarray(D, dtype=float)
    N = D.shape[0] if N is None else N
    r = np.zeros((N, len(centers)))
    for k, c in enumerate(centers):
        d = D[inliers, c]
        alpha = float(np.median(d))
        col = psi_weight(d, alpha, kernel) if alpha > 0 else np.zeros_like(d)
        if col.sum() <= 0:
            col = np.ones_like(d)
        r[inliers, k] = col / col.sum()
    return r


def initial_shifts(fits, centers, D=None, H_shift: int = DEFAULT_H_SHIFT, G: int = DEFAULT_G) -> np.ndarray:
    """Per stream: the grid shift best aligning its fit with its nearest center's fit.

    Nearest center is by ``D`` when given (the shift-invariant distance),
    otherwise by the aligned L1 criterion itself.
    """
    basis = fits[0].basis
    _, w = quadrature_grid(basis.T, G)
    coeffs = np.stack([f.coeffs for f in fits])
    moved = shifted_curves(coeffs, basis, H_shift, G)  # (N, S, G)
    nodes, _ = quadrature_grid(basis.T, G)
    Kg = eval_basis(basis, nodes)
    center_curves = coeffs[np.asarray(centers)] @ Kg.T  # (K, G)
    grid = shift_grid(basis.T, H_shift)
    out = np.empty(len(fits))
    for n in range(len(fits)):
        cost = np.abs(moved[n][None, :, :] - center_curves[:, None, :]).sum(axis=2) * w  # (K, S)
        if D is not None:
            k = int(np.argmin(np.asarray(D)[n, np.asarray(centers)]))
        else:
            k = int(np.argmin(cost.min(axis=1)))
        out[n] = grid[int(np.argmin(cost[k]))]
    return out


def robust_initialization(
    D,
    K: int,
    cfg: ScreenConfig,
    fits=None,
    shift: bool = False,
    H_shift: int = DEFAULT_H_SHIFT,
    G: int = DEFAULT_G,
    kernel: str = "as_printed",
    rng=None,
) -> InitResult:
    """Screening, k-means++ on the admitted set, psi weights and (optionally) shifts."""
    D = np.asarray(D, dtype=float)
    rng = np.random.default_rng(cfg.seed if rng is None else rng)
    inliers, rounds = _screen(D, cfg, rng)
    centers = kmeanspp_centers(inliers, D, K, rng)
    r = initial_weights(inliers, centers, D, kernel=kernel)
    shifts = None
    if shift:
        if fits is None:
            raise ConfigError("initial shifts need the fitted intensities")
        shifts = initial_shifts(fits, centers, D, H_shift, G)
    return InitResult(inliers, centers, r, shifts, rounds)
