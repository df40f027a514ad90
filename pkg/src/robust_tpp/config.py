"""Run configuration: one flat, JSON-serialisable namespace of hyperparameters."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields

from .errors import ConfigError
from .robust_init import ScreenConfig


@dataclass
class ClusterConfig:
    K: int = 4
    H: int = 8
    T: float = 24.0
    H_shift: int = 24
    G: int = 1024
    shift: bool = False
    # "robust": screened k-means++ start; "random": Dirichlet soft assignments
    init: str = "robust"
    # "catoni" or "identity" (classical EM direction)
    influence: str = "catoni"
    psi_kernel: str = "phi_prime"
    # "all": every stream feeds mu_hat and the gradient; "screened": only the
    # streams admitted by the initial screening (robust init only)
    mstep_scope: str = "screened"
    rho: list | float | None = None
    rho_factor: float = 0.6
    rho_min: float = 1e-6
    lr: float = 0.5
    max_halvings: int = 20
    m_inner_steps: int = 5
    eps: float = 0.1
    eps_bound: float = 0.1
    max_iters: int = 200
    fit_max_iters: int = 500
    fit_tol: float = 1e-8
    screen_M: int = 50
    screen_N_prime: float = 0.75
    screen_beta: float = 0.3
    screen_alpha: float = 0.2
    seed: int = 0
    threads: int | None = None

    def screen_config(self) -> ScreenConfig:
        n_prime = self.screen_N_prime
        if isinstance(n_prime, (int, float)) and n_prime > 1:
            n_prime = int(n_prime)
        else:
            n_prime = float(n_prime)
        return ScreenConfig(self.screen_M, n_prime, self.screen_beta, self.screen_alpha, self.seed)

    def validate(self, N: int | None = None):
        checks = [
            ("K", self.K >= 1),
            ("H", self.H >= 4),
            ("T", self.T > 0),
            ("H_shift", self.H_shift >= 1),
            ("G", self.G >= 1),
            ("init", self.init in ("robust", "random")),
            ("influence", self.influence in ("catoni", "identity")),
            ("psi_kernel", self.psi_kernel in ("as_printed", "phi_prime")),
            ("mstep_scope", self.mstep_scope in ("all", "screened")),
            ("rho_factor", self.rho_factor > 0),
            ("lr", self.lr > 0),
            ("m_inner_steps", self.m_inner_steps >= 1),
            ("eps", self.eps >= 0),
            ("eps_bound", 0 <= self.eps_bound <= 1),
            ("max_iters", self.max_iters >= 0),
        ]
        for key, ok in checks:
            if not ok:
                raise ConfigError(f"invalid config value {key}={getattr(self, key)!r}")
        if self.rho is not None:
            rhos = self.rho if isinstance(self.rho, (list, tuple)) else [self.rho]
            if any(r <= 0 for r in rhos):
                raise ConfigError("config key rho must be positive")
            if isinstance(self.rho, (list, tuple)) and len(self.rho) != self.K:
                raise ConfigError(f"config key rho has {len(self.rho)} entries, K={self.K}")
        if N is not None:
            if self.init == "robust":
                self.screen_config().validate(N)
                if self.K > self.screen_config().target(N):
                    raise ConfigError(f"config key K={self.K} exceeds the screened inlier count")
            elif self.K > N:
                raise ConfigError(f"config key K={self.K} exceeds N={N}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ClusterConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}")
        return cls(**d)

    def hash(self) -> str:
        d = self.to_dict()
        d.pop("threads")
        return config_hash(d)


def config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
