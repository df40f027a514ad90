"""Robust clustering of event streams under a mixture of spline-intensity Poisson processes."""

from .catoni import phi, phi_prime, phi_second, psi_weight, solve_mu
from .config import ClusterConfig
from .distance import DistanceMatrix, distance, distance_matrix, shifted_distance
from .events import Dataset, EventStream, FoldSpec, IntensitySpec, apply_shift, load_streams, simulate_nhp
from .intensity import FittedIntensity, fit_intensities, fit_intensity, log_nhp, log_nhp_gradient
from .metrics import l1_error, mle_ratio, purity
from .robust_em import ClusterModel, FitResult, detect_outliers, fit
from .spline import SplineBasis, basis_integrals, build_basis, eval_basis, eval_intensity

__version__ = "0.1.0"
