"""
Gaussian-Process Surrogate of the Tuning Cost

Matérn-5/2 kernel with per-dimension length scales on inputs normalized to
the unit box; costs standardized per fit. Hyperparameters are chosen by a
seeded multi-start random search maximizing the log marginal likelihood.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from sklearn.gaussian_process.kernels import ConstantKernel, Matern

from .errors import ConfigurationError
from .logger import get_logger

logger = get_logger("gp")

NOISE_JITTER = 1e-8
MAX_JITTER = 1e-2
LOG10_LENGTH_RANGE = (-2.0, 1.0)
LOG10_SIGNAL_RANGE = (-1.0, 1.0)
DEFAULT_STARTS = 32


@dataclass
class Hyperparameters:
    signal_variance: float
    length_scales: np.ndarray
    noise: float = NOISE_JITTER

    def __post_init__(self):
        self.length_scales = np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        if self.signal_variance <= 0 or np.any(self.length_scales <= 0) or self.noise < 0:
            raise ConfigurationError(f"invalid GP hyperparameters {self}")

    def kernel(self):
        return (ConstantKernel(self.signal_variance, constant_value_bounds="fixed")
                * Matern(length_scale=self.length_scales, length_scale_bounds="fixed", nu=2.5))


@dataclass
class Surrogate:
    """
    Fitted GP posterior.

    Attributes:
        points: Training inputs normalized to the unit box (n × d)
        targets: Standardized training costs (n)
        lower, upper: Bounds used for normalization
        y_mean, y_std: Standardization of the costs
        hyper: Selected kernel hyperparameters (noise holds the jitter actually used)
        log_likelihood: Log marginal likelihood of the selected hyperparameters
        search_log_likelihoods: Every candidate tried during fitting
        degenerate: Prior-only fallback (fewer than two distinct inputs)
    """
    points: np.ndarray
    targets: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    y_mean: float
    y_std: float
    hyper: Hyperparameters
    log_likelihood: float = -np.inf
    search_log_likelihoods: List[float] = field(default_factory=list)
    degenerate: bool = False
    _chol: Optional[Tuple[np.ndarray, bool]] = field(default=None, repr=False)
    _alpha: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def prior_variance(self) -> float:
        """Prior latent variance in cost units"""
        return self.hyper.signal_variance * self.y_std ** 2

    @property
    def best_cost(self) -> float:
        return float(np.min(self.targets) * self.y_std + self.y_mean)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.lower) / (self.upper - self.lower)

    def denormalize(self, u: np.ndarray) -> np.ndarray:
        return self.lower + np.asarray(u, dtype=float) * (self.upper - self.lower)

    def predict_unit(self, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Posterior mean/variance (cost units) at unit-box points (m × d)"""
        u = np.atleast_2d(u)
        if self.degenerate:
            m = u.shape[0]
            return np.full(m, self.y_mean), np.full(m, self.prior_variance)
        kernel = self.hyper.kernel()
        k_star = kernel(u, self.points)
        mean = k_star @ self._alpha
        v = cho_solve(self._chol, k_star.T)
        var = self.hyper.signal_variance - np.einsum("ij,ji->i", k_star, v)
        var = np.maximum(var, 0.0)
        return mean * self.y_std + self.y_mean, var * self.y_std ** 2

    def predict(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Posterior mean/variance at points in original units; out-of-box points are clipped"""
        u = self.normalize(np.atleast_2d(x))
        if np.any((u < 0) | (u > 1)):
            logger.warning("GP query outside the bounds box; clipping to the box")
            u = np.clip(u, 0.0, 1.0)
        return self.predict_unit(u)


def _factorize(K: np.ndarray, noise: float):
    """Cholesky of K + noise·I, escalating the jitter tenfold on failure"""
    jitter = noise
    n = K.shape[0]
    while True:
        try:
            return cho_factor(K + jitter * np.eye(n), lower=True), jitter
        except LinAlgError:
            if jitter >= MAX_JITTER:
                raise
            logger.warning(f"GP kernel matrix not positive definite; jitter {jitter:.1e} -> {jitter * 10:.1e}")
            jitter *= 10.0


def log_marginal_likelihood(points: np.ndarray, targets: np.ndarray, hyper: Hyperparameters):
    """
    Log marginal likelihood of standardized targets.

    Returns:
        (log likelihood, cholesky factor, alpha, jitter used)
    """
    K = hyper.kernel()(points)
    chol, jitter = _factorize(K, hyper.noise)
    alpha = cho_solve(chol, targets)
    n = len(targets)
    lml = (-0.5 * float(targets @ alpha) - float(np.sum(np.log(np.diag(chol[0]))))
           - 0.5 * n * np.log(2.0 * np.pi))
    return lml, chol, alpha, jitter


def gp_fit(points: np.ndarray, costs: np.ndarray, lower: np.ndarray, upper: np.ndarray,
           seed: int = 0, hyperparameters: Optional[Hyperparameters] = None,
           n_starts: int = DEFAULT_STARTS) -> Surrogate:
    """
    Fit the surrogate.

    Args:
        points: Evaluated parameter vectors (n × d), inside [lower, upper]
        costs: Costs at the points
        lower, upper: Bounds box
        seed: Seed of the hyperparameter search
        hyperparameters: Pin the kernel instead of searching
        n_starts: Random-search candidates in log space

    Raises:
        ConfigurationError: fewer than two points or points outside the box
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    costs = np.asarray(costs, dtype=float).ravel()
    lower = np.asarray(lower, dtype=float).ravel()
    upper = np.asarray(upper, dtype=float).ravel()
    if points.shape[0] != costs.size:
        raise ConfigurationError(f"{points.shape[0]} points but {costs.size} costs")
    if costs.size < 2:
        raise ConfigurationError("GP fit needs at least two points")
    if not np.all(np.isfinite(costs)):
        raise ConfigurationError("GP fit needs finite costs")
    if points.shape[1] != lower.size or np.any(upper <= lower):
        raise ConfigurationError("bounds do not match the point dimension")

    unit = (points - lower) / (upper - lower)
    if np.any(unit < -1e-12) or np.any(unit > 1 + 1e-12):
        raise ConfigurationError("GP training points must lie inside the bounds box")
    unit = np.clip(unit, 0.0, 1.0)

    y_mean = float(np.mean(costs))
    y_std = float(np.std(costs))
    if y_std == 0.0:
        y_std = 1.0
    targets = (costs - y_mean) / y_std
    d = points.shape[1]

    if np.unique(unit, axis=0).shape[0] < 2:
        logger.warning("GP fit on duplicate-only inputs; using the prior-only surrogate")
        hyper = hyperparameters or Hyperparameters(1.0, np.ones(d))
        return Surrogate(unit, targets, lower, upper, y_mean, y_std, hyper, degenerate=True)

    if hyperparameters is not None:
        candidates = [hyperparameters]
    else:
        rng = np.random.default_rng(seed)
        candidates = []
        for _ in range(n_starts):
            log_ls = rng.uniform(*LOG10_LENGTH_RANGE, size=d)
            log_sv = rng.uniform(*LOG10_SIGNAL_RANGE)
            candidates.append(Hyperparameters(10.0 ** log_sv, 10.0 ** log_ls))

    best = None
    scores = []
    for hyper in candidates:
        try:
            lml, chol, alpha, jitter = log_marginal_likelihood(unit, targets, hyper)
        except LinAlgError:
            scores.append(-np.inf)
            continue
        scores.append(lml)
        # Strict comparison: the first of tied candidates wins
        if best is None or lml > best[0]:
            best = (lml, hyper, chol, alpha, jitter)

    if best is None:
        logger.warning("No GP hyperparameter candidate could be factorized; using the prior-only surrogate")
        return Surrogate(unit, targets, lower, upper, y_mean, y_std, candidates[0],
                         search_log_likelihoods=scores, degenerate=True)

    lml, hyper, chol, alpha, jitter = best
    hyper = Hyperparameters(hyper.signal_variance, hyper.length_scales, jitter)
    return Surrogate(unit, targets, lower, upper, y_mean, y_std, hyper,
                     log_likelihood=lml, search_log_likelihoods=scores,
                     _chol=chol, _alpha=alpha)


def gp_predict(surrogate: Surrogate, point: np.ndarray) -> Tuple[float, float]:
    """Posterior mean and variance at one point (clipped into the box with a warning)"""
    mean, var = surrogate.predict(np.atleast_2d(point))
    return float(mean[0]), float(var[0])
