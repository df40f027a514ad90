"""Catoni-robust EM for mixtures of spline-intensity Poisson processes.

Each iteration: responsibilities from the current model, class
probabilities from the responsibilities, a robust location ``mu_hat`` of the
per-period log-likelihoods per class, the influence-weighted ascent step on
each class's coefficients, then (optionally) per-stream shift updates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .catoni import phi_rho_prime, solve_mu_batch
from .config import ClusterConfig
from .distance import distance_matrix, shift_grid, shifted_curves
from .errors import DataError, ImpossibleStream
from .events import Dataset
from .intensity import (
    FLOOR_FRACTION,
    EventDesign,
    FittedIntensity,
    fit_intensities,
    loglik_matrix,
    weighted_fit,
)
from .robust_init import InitResult, robust_initialization
from .spline import SplineBasis, basis_integrals, build_basis, eval_basis, quadrature_grid

log = logging.getLogger(__name__)


@dataclass
class ClusterModel:
    B: np.ndarray
    pi: np.ndarray
    basis: SplineBasis
    rho: np.ndarray
    b_floor: np.ndarray
    shifts: np.ndarray | None = None

    @property
    def K(self) -> int:
        return self.B.shape[0]

    def intensity(self, t, k=None):
        vals = eval_basis(self.basis, t) @ self.B.T
        return vals if k is None else vals[..., k]

    def to_dict(self, ids=None) -> dict:
        shifts = None
        if self.shifts is not None:
            keys = ids if ids is not None else range(len(self.shifts))
            shifts = {str(i): float(s) for i, s in zip(keys, self.shifts)}
        return {
            "K": self.K,
            "H": self.basis.H,
            "T": self.basis.T,
            "pi": self.pi.tolist(),
            "B": self.B.tolist(),
            "shifts": shifts,
            "rho": self.rho.tolist(),
            "b_floor": self.b_floor.tolist(),
        }

    @classmethod
    def from_dict(cls, d, ids=None) -> "ClusterModel":
        basis = SplineBasis(int(d["H"]), float(d["T"]))
        B = np.asarray(d["B"], dtype=float)
        shifts = d.get("shifts")
        if shifts is not None:
            keys = ids if ids is not None else list(shifts)
            shifts = np.array([shifts[str(i)] for i in keys], dtype=float)
        floor = np.asarray(d.get("b_floor", FLOOR_FRACTION * B.mean(axis=1)), dtype=float)
        return cls(B, np.asarray(d["pi"], dtype=float), basis, np.asarray(d["rho"], dtype=float), floor, shifts)


@dataclass
class FitResult:
    model: ClusterModel
    r: np.ndarray
    w: np.ndarray
    mu: np.ndarray
    labels: np.ndarray
    outliers: np.ndarray
    ids: list
    loglik: np.ndarray
    trace: list = field(default_factory=list)
    converged: bool = False
    n_iter: int = 0
    fits: list | None = None
    init: InitResult | None = None
    drained: list = field(default_factory=list)

    @property
    def outlier_ids(self) -> set:
        return {self.ids[i] for i in self.outliers}

    @property
    def assigned_loglik(self) -> np.ndarray:
        """``log NHP(S_n | B_{label_n})`` per stream."""
        return self.loglik[np.arange(len(self.labels)), self.labels]

    def partition(self) -> dict:
        return {i: int(k) for i, k in zip(self.ids, self.labels)}


# ------------------------------------------------------------------ E-step


def e_step(loglik, pi) -> np.ndarray:
    """Posterior class probabilities from ``log pi_k + log NHP(S_n | B_k)`` by log-sum-exp."""
    with np.errstate(divide="ignore"):
        a = np.log(np.asarray(pi, dtype=float))[None, :] + np.asarray(loglik, dtype=float)
    top = a.max(axis=1, keepdims=True)
    bad = ~np.isfinite(top[:, 0])
    if bad.any():
        raise ImpossibleStream(f"stream index {int(np.flatnonzero(bad)[0])} has zero likelihood under every class")
    e = np.exp(a - top)
    return e / e.sum(axis=1, keepdims=True)


# ------------------------------------------------------------------ M-step


def robust_location(loglik, r, L, rho, influence="catoni"):
    """Per-class ``mu_hat``: weighted Catoni location of per-period log-likelihoods.

    Weights are ``r_nk * L_n``. Returns ``(mu, w)`` with ``w`` the adjusted
    weights ``phi'(rho_k (loglik_nk / L_n - mu_k))``; a class without
    responsibility mass gets ``mu = nan`` and zero weights.
    """
    v = loglik / L[:, None]
    a = r * L[:, None]
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (v.shape[1],))
    # a class with no responsibility mass has no location; its weights are zero
    live = a.sum(axis=0) > 0
    mu = np.full(v.shape[1], np.nan)
    w = np.zeros_like(v)
    if live.any():
        mu[live] = solve_mu_batch(v[:, live], a[:, live], rho[live], influence)
        if influence == "identity":
            w[:, live] = 1.0
        else:
            w[:, live] = phi_rho_prime(v[:, live] - mu[None, live], rho[None, live])
    return mu, w


def mu_hat(design: EventDesign, Bk, rk, rho, influence="catoni") -> float:
    """``mu_hat`` of one class as a function of its coefficients."""
    ll = loglik_matrix(design, np.atleast_2d(Bk))
    mu, _ = robust_location(ll, np.asarray(rk)[:, None], design.L, np.atleast_1d(rho), influence)
    return float(mu[0])


def mu_gradient(design: EventDesign, Bk, rk, rho, influence="catoni"):
    """Gradient of ``mu_hat`` in the class coefficients.

    ``sum_n r_n w_n grad log NHP_n / sum_n r_n w_n L_n``. Returns
    ``(grad, mu, w)``; ``grad`` is None when every weight vanishes.
    """
    Bk = np.atleast_2d(np.asarray(Bk, dtype=float))
    rk = np.asarray(rk, dtype=float)
    ll = loglik_matrix(design, Bk)
    mu, w = robust_location(ll, rk[:, None], design.L, np.atleast_1d(rho), influence)
    w = w[:, 0]
    a = rk * w
    denom = float(a @ design.L)
    if denom <= 0:
        return None, float(mu[0]), w
    lam = design.phi @ Bk[0]
    num = (design.phi / lam[:, None]).T @ a[design.owner]
    num -= float(a @ design.L) * basis_integrals(design.basis)
    return num / denom, float(mu[0]), w


def m_step(design: EventDesign, model: ClusterModel, r, lr=0.5, max_halvings=20, inner_steps=1,
           influence="catoni"):
    """One robust M-step. Returns ``(B_new, w, mu, drained)``.

    Per class: ascend ``mu_hat`` along its gradient, projecting onto
    ``b >= b_floor`` and halving the step until ``mu_hat`` does not decrease.
    Classes whose adjusted weights all vanish keep their coefficients and are
    reported in ``drained``.
    """
    B = model.B.copy()
    K = model.K
    ll = loglik_matrix(design, B)
    mu, w = robust_location(ll, r, design.L, model.rho, influence)
    drained = []
    for k in range(K):
        bk = B[k]
        for _ in range(inner_steps):
            grad, mu_k, _ = mu_gradient(design, bk, r[:, k], model.rho[k], influence)
            if grad is None:
                drained.append(k)
                break
            step = lr
            accepted = False
            for _ in range(max_halvings + 1):
                cand = np.maximum(bk + step * grad, model.b_floor[k])
                mu_c = mu_hat(design, cand, r[:, k], model.rho[k], influence)
                if mu_c >= mu_k - 1e-12 * (1 + abs(mu_k)):
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break
            bk = cand
        B[k] = bk
    return B, w, mu, drained


# ------------------------------------------------------------------ shifts


def class_curves(model: ClusterModel, G: int):
    nodes, _ = quadrature_grid(model.basis.T, G)
    return model.B @ eval_basis(model.basis, nodes).T


def update_shifts(moved_fits, model: ClusterModel, labels, H_shift: int, G: int):
    """Per stream: grid shift minimising ``int |lam_hat_n(u + s) - lam_{label_n}(u)| du``.

    ``moved_fits`` is ``shifted_curves`` of the per-stream fits, (N, H_shift, G).
    """
    _, w = quadrature_grid(model.basis.T, G)
    cc = class_curves(model, G)
    cost = np.abs(moved_fits - cc[np.asarray(labels)][:, None, :]).sum(axis=2) * w
    return shift_grid(model.basis.T, H_shift)[np.argmin(cost, axis=1)]


# ------------------------------------------------------------------ model setup


def rho_rule(B, basis: SplineBasis, factor=0.6, G=1024, rho_min=1e-6):
    """``factor * sqrt(int_0^T log(lam_k)^2 lam_k dt)`` per class, floored at ``rho_min``."""
    nodes, wq = quadrature_grid(basis.T, G)
    lam = np.atleast_2d(B) @ eval_basis(basis, nodes).T
    val = factor * np.sqrt(wq * (np.log(lam) ** 2 * lam).sum(axis=1))
    return np.maximum(val, rho_min)


def init_model(design: EventDesign, r_ini, rho=None, shifts=None, fit_max_iters=500, fit_tol=1e-8):
    """Weighted-MLE coefficients and normalised class probabilities from initial weights."""
    r_ini = np.asarray(r_ini, dtype=float)
    B = weighted_fit(design, r_ini, fit_max_iters, fit_tol)
    pi = r_ini.sum(axis=0) / r_ini.sum()
    rate = (r_ini.T @ design.M) / ((r_ini.T @ design.L) * design.basis.T)
    rho = rho_rule(B, design.basis) if rho is None else np.broadcast_to(np.asarray(rho, float), (B.shape[0],)).copy()
    return ClusterModel(B, pi, design.basis, rho, FLOOR_FRACTION * rate, shifts)


def detect_outliers(w, eps_bound: float = 0.1) -> np.ndarray:
    """Indices whose adjusted weight is below ``eps_bound`` for every class."""
    return np.flatnonzero(np.max(np.asarray(w), axis=1) < eps_bound)


# ------------------------------------------------------------------ driver


def run_em(design: EventDesign, model: ClusterModel, cfg: ClusterConfig, moved_fits=None, mstep_mask=None):
    """Iterate E/M(/shift) steps from ``model``; returns ``(model, trace, converged, n_iter, drained)``."""
    trace = []
    converged = False
    it = 0
    drained_all = set()
    for it in range(1, cfg.max_iters + 1):
        ll = loglik_matrix(design, model.B)
        r = e_step(ll, model.pi)
        pi = r.mean(axis=0)
        model = ClusterModel(model.B, pi, model.basis, model.rho, model.b_floor, model.shifts)
        r_m = r if mstep_mask is None else r * mstep_mask[:, None]
        B_new, w, mu, drained = m_step(design, model, r_m, cfg.lr, cfg.max_halvings, cfg.m_inner_steps,
                                       cfg.influence)
        drained_all.update(drained)
        shifts = model.shifts
        if cfg.shift and moved_fits is not None:
            tmp = ClusterModel(B_new, pi, model.basis, model.rho, model.b_floor, shifts)
            shifts = update_shifts(moved_fits, tmp, np.argmax(r, axis=1), cfg.H_shift, cfg.G)
            design.set_shifts(shifts)
        delta = float(np.max(np.linalg.norm(B_new - model.B, axis=1)))
        model = ClusterModel(B_new, pi, model.basis, model.rho, model.b_floor, shifts)
        trace.append({"iter": it, "max_param_delta": delta, "mu_hat": mu.tolist()})
        log.debug("iter %d delta %.3g", it, delta)
        if delta <= cfg.eps:
            converged = True
            break
    return model, trace, converged, it, sorted(drained_all)


def _finalize(design, model, cfg, ids, mstep_mask=None, **extra) -> FitResult:
    ll = loglik_matrix(design, model.B)
    r = e_step(ll, model.pi)
    r_m = r if mstep_mask is None else r * mstep_mask[:, None]
    mu, w = robust_location(ll, r_m, design.L, model.rho, cfg.influence)
    return FitResult(
        model=model,
        r=r,
        w=w,
        mu=mu,
        labels=np.argmax(r, axis=1),
        outliers=detect_outliers(w, cfg.eps_bound),
        ids=list(ids),
        loglik=ll,
        **extra,
    )


def fit(dataset: Dataset, cfg: ClusterConfig | None = None, fits=None, distances=None) -> FitResult:
    """Full pipeline: per-stream fits, distances, initialisation, robust EM."""
    cfg = (cfg or ClusterConfig()).validate(len(dataset))
    if abs(dataset.period_T - cfg.T) > 0:
        raise DataError(f"dataset period {dataset.period_T} differs from config T={cfg.T}")
    empty = [s.id for s in dataset if s.num_events == 0]
    if empty:
        raise DataError(f"stream {empty[0]!r} has no events")
    basis = build_basis(cfg.H, cfg.T)
    rng = np.random.default_rng(cfg.seed)
    if fits is None:
        fits = fit_intensities(dataset.streams, basis, cfg.fit_max_iters, cfg.fit_tol)
    moved = None
    if cfg.shift:
        moved = shifted_curves(np.stack([f.coeffs for f in fits]), basis, cfg.H_shift, cfg.G)

    init = None
    shifts = None
    if cfg.init == "robust":
        if distances is None:
            distances = distance_matrix(fits, cfg.shift, cfg.H_shift, cfg.G, cfg.threads).values
        init = robust_initialization(
            distances, cfg.K, cfg.screen_config(), fits, cfg.shift, cfg.H_shift, cfg.G, cfg.psi_kernel, rng
        )
        r_ini = init.r_ini
        shifts = init.shifts_ini
    else:
        r_ini = rng.dirichlet(np.ones(cfg.K), size=len(dataset))
        if cfg.shift:
            shifts = np.full(len(dataset), cfg.T)

    design = EventDesign(dataset.streams, basis, shifts)
    model = init_model(design, r_ini, cfg.rho, shifts, cfg.fit_max_iters, cfg.fit_tol)
    if cfg.rho is None:
        model.rho = rho_rule(model.B, basis, cfg.rho_factor, cfg.G, cfg.rho_min)
    mask = None
    if cfg.mstep_scope == "screened" and init is not None:
        mask = np.zeros(len(dataset))
        mask[init.inlier_ids] = 1.0
    model, trace, converged, n_iter, drained = run_em(design, model, cfg, moved, mask)
    return _finalize(design, model, cfg, dataset.ids, mask, trace=trace, converged=converged, n_iter=n_iter,
                     fits=fits, init=init, drained=drained)


def fit_from_model(dataset: Dataset, model: ClusterModel, cfg: ClusterConfig | None = None) -> FitResult:
    """Run the EM loop from a given starting model (no initialisation stage)."""
    cfg = cfg or ClusterConfig(K=model.K, H=model.basis.H, T=model.basis.T)
    design = EventDesign(dataset.streams, model.basis, model.shifts)
    model, trace, converged, n_iter, drained = run_em(design, model, cfg)
    return _finalize(design, model, cfg, dataset.ids, trace=trace, converged=converged, n_iter=n_iter,
                     drained=drained)
