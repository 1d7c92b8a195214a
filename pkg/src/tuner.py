"""
Data-Driven Gain Calibration

Simulation-error cost over full observer replays, Expected Improvement on a
Gaussian-process surrogate, and the Bayesian optimization loop: seeded
uniform initial batch, then fit / propose / evaluate until the iteration
budget is spent. The optimum is the best evaluated point.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import norm, qmc
from tqdm import tqdm

from .dataio import Dataset
from .dynamics import FORCE_LABELS, STATE_LABELS
from .errors import ConfigurationError, ObserverDivergenceError, TuningAbortedError
from .gaussian_process import DEFAULT_STARTS, Surrogate, gp_fit
from .logger import get_logger
from .observer import ObserverConfig, Predictor, run_observer
from .utils import ensure_parent_dir, load_yaml

logger = get_logger("tuner")

NO_FINITE_PENALTY = 1e9
PENALTY_FACTOR = 10.0


# =============================================================================
# Configuration
# =============================================================================

@dataclass
class TuneConfig:
    """Bayesian optimization settings"""
    n_iter: int = 100
    n_init: int = 4
    seed: int = 0
    candidates: int = 2048
    refine_top: int = 8
    refine_halvings: int = 12
    refine_step: float = 0.1
    hyper_starts: int = DEFAULT_STARTS
    workers: int = 1

    def __post_init__(self):
        if not (0 < self.n_init < self.n_iter):
            raise ConfigurationError(f"need 0 < n_init < n_iter (got {self.n_init}, {self.n_iter})")
        if self.candidates < 1 or self.refine_top < 1 or self.refine_halvings < 0:
            raise ConfigurationError("invalid acquisition optimizer settings")
        if not (0 < self.refine_step <= 1):
            raise ConfigurationError("refine_step must be in (0, 1]")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")

    @classmethod
    def from_dict(cls, data: Dict) -> "TuneConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown tuning keys: {sorted(unknown)}")
        kwargs = {k: (float(v) if k == "refine_step" else int(v)) for k, v in data.items()}
        return cls(**kwargs)

    def to_dict(self) -> Dict:
        return dict(self.__dict__)


@dataclass
class CostSpec:
    """
    Channels compared against ground truth and their weights.

    Weights default to the inverse 2-norm of each truth channel.
    """
    state_channels: List[str] = field(default_factory=lambda: list(STATE_LABELS))
    extended_channels: List[str] = field(default_factory=lambda: list(FORCE_LABELS))
    weights: Optional[Dict[str, float]] = None

    def __post_init__(self):
        channels = self.channels
        if not channels:
            raise ConfigurationError("cost spec needs at least one channel")
        if len(set(channels)) != len(channels):
            raise ConfigurationError("cost spec channels must be unique")
        if self.weights is not None:
            for name in channels:
                if name not in self.weights:
                    raise ConfigurationError(f"no weight for cost channel '{name}'")
                w = self.weights[name]
                if not (np.isfinite(w) and w >= 0):
                    raise ConfigurationError(f"weight of '{name}' must be finite and >= 0")

    @property
    def channels(self) -> List[str]:
        return list(self.state_channels) + list(self.extended_channels)

    def resolve_weights(self, dataset: Dataset) -> np.ndarray:
        if self.weights is None:
            return default_weights(dataset, self.channels)
        return np.array([float(self.weights[name]) for name in self.channels])

    @classmethod
    def from_dict(cls, data: Dict) -> "CostSpec":
        kwargs = {}
        if "state_channels" in data:
            kwargs["state_channels"] = [str(c) for c in data["state_channels"]]
        if "extended_channels" in data:
            kwargs["extended_channels"] = [str(c) for c in data["extended_channels"]]
        if data.get("weights") is not None:
            kwargs["weights"] = {str(k): float(v) for k, v in data["weights"].items()}
        return cls(**kwargs)

    def to_dict(self) -> Dict:
        return {"state_channels": list(self.state_channels),
                "extended_channels": list(self.extended_channels),
                "weights": None if self.weights is None else dict(self.weights)}


def load_tune_file(path: str) -> Tuple[TuneConfig, CostSpec]:
    """Read a tuning file with ``tuning`` and ``cost`` sections"""
    data = load_yaml(path)
    return TuneConfig.from_dict(data.get("tuning") or {}), CostSpec.from_dict(data.get("cost") or {})


# =============================================================================
# Cost
# =============================================================================

def default_weights(dataset: Dataset, channels: Sequence[str]) -> np.ndarray:
    """
    Inverse 2-norm weights making every channel term equally important.

    Raises:
        ConfigurationError: a channel with zero norm
    """
    weights = np.empty(len(channels))
    for idx, name in enumerate(channels):
        norm2 = float(np.linalg.norm(dataset.channel(name)))
        if norm2 == 0.0:
            raise ConfigurationError(f"channel '{name}' has zero norm; cannot derive a weight")
        weights[idx] = 1.0 / norm2
    return weights


def weighted_error(trace, dataset: Dataset, channels: Sequence[str], weights: np.ndarray) -> float:
    """Σ w_i · ‖truth_i − estimate_i‖₂ over the full horizon"""
    total = 0.0
    for name, w in zip(channels, weights):
        total += w * float(np.linalg.norm(dataset.channel(name) - trace.channel(name)))
    return total


def evaluate_cost(k: np.ndarray, dataset: Dataset, config: ObserverConfig, spec: CostSpec,
                  weights: Optional[np.ndarray] = None,
                  predictor_factory: Optional[Callable[[], Predictor]] = None) -> float:
    """
    Cost of one gain vector; +inf when the observer diverges.

    Predictor and bridge failures other than divergence propagate.
    """
    if weights is None:
        weights = spec.resolve_weights(dataset)
    predictor = predictor_factory() if predictor_factory is not None else None
    try:
        trace = run_observer(dataset, config, k, predictor=predictor)
    except ObserverDivergenceError as e:
        logger.warning(f"Observer diverged for k={np.round(k, 6).tolist()}: {e}")
        return float("inf")
    finally:
        if predictor is not None:
            predictor.close()
    value = weighted_error(trace, dataset, spec.channels, weights)
    if not np.isfinite(value):
        logger.warning(f"Non-finite cost for k={np.round(k, 6).tolist()}")
        return float("inf")
    return value


def cost(k: Sequence[float], dataset: Dataset, config: ObserverConfig, spec: CostSpec,
         penalty: float = NO_FINITE_PENALTY) -> float:
    """
    Simulation-error cost J(k) ≥ 0 of one closed-loop replay.

    A diverged run reports `penalty` instead of failing.
    """
    value = evaluate_cost(np.asarray(k, dtype=float), dataset, config, spec)
    return value if np.isfinite(value) else penalty


# =============================================================================
# Acquisition
# =============================================================================

def ei_from_moments(mean, std, best):
    """E[max(best − Y, 0)] for Y ~ N(mean, std²); max(best − mean, 0) where std = 0"""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    std = np.atleast_1d(np.asarray(std, dtype=float))
    gap = best - mean
    positive = std > 0
    z = gap / np.where(positive, std, 1.0)
    ei = np.where(positive, gap * norm.cdf(z) + std * norm.pdf(z), gap)
    return np.maximum(ei, 0.0)


def expected_improvement(surrogate: Surrogate, point: np.ndarray, best_so_far: float) -> float:
    """Expected Improvement (minimization form) at one point"""
    mean, var = surrogate.predict(np.atleast_2d(point))
    return float(ei_from_moments(mean, np.sqrt(var), best_so_far)[0])


def _ei_unit(surrogate: Surrogate, u: np.ndarray, best: float) -> np.ndarray:
    mean, var = surrogate.predict_unit(u)
    return ei_from_moments(mean, np.sqrt(var), best)


def _refine(surrogate: Surrogate, start: np.ndarray, value: float, best: float,
            step: float, halvings: int) -> Tuple[np.ndarray, float]:
    """Coordinate search on EI inside the unit box"""
    point = start.copy()
    d = point.size
    for _ in range(halvings + 1):
        for j in range(d):
            trials = np.repeat(point[None, :], 2, axis=0)
            trials[0, j] = min(point[j] + step, 1.0)
            trials[1, j] = max(point[j] - step, 0.0)
            scores = _ei_unit(surrogate, trials, best)
            i = int(np.argmax(scores))
            if scores[i] > value:
                point, value = trials[i], float(scores[i])
        step /= 2.0
    return point, value


def propose_next(surrogate: Surrogate, bounds: np.ndarray, seed: int,
                 best_so_far: Optional[float] = None, candidates: int = 2048,
                 refine_top: int = 8, refine_halvings: int = 12,
                 refine_step: float = 0.1) -> np.ndarray:
    """
    Next point to evaluate: maximizer of Expected Improvement.

    A scrambled Sobol candidate set is scored, then the best candidates are
    refined by coordinate search. If EI vanishes everywhere the candidate of
    maximal posterior variance is returned instead.

    Args:
        surrogate: Fitted surrogate
        bounds: (d × 2) lower/upper bounds
        seed: Seed of the candidate set
        best_so_far: Incumbent cost (defaults to the best training cost)
    """
    bounds = np.asarray(bounds, dtype=float)
    lower, upper = bounds[:, 0], bounds[:, 1]
    best = surrogate.best_cost if best_so_far is None else float(best_so_far)

    sampler = qmc.Sobol(d=bounds.shape[0], scramble=True, seed=seed)
    unit = sampler.random(candidates)
    mean, var = surrogate.predict_unit(unit)
    scores = ei_from_moments(mean, np.sqrt(var), best)

    if not np.any(scores > 0):
        choice = unit[int(np.argmax(var))]
        logger.info("Expected Improvement is zero everywhere; proposing the max-variance candidate")
        return np.clip(lower + choice * (upper - lower), lower, upper)

    order = np.argsort(-scores, kind="stable")[:refine_top]
    best_point, best_value = unit[order[0]], float(scores[order[0]])
    for idx in order:
        point, value = _refine(surrogate, unit[idx], float(scores[idx]), best,
                               refine_step, refine_halvings)
        if value > best_value:
            best_point, best_value = point, value
    return np.clip(lower + best_point * (upper - lower), lower, upper)


# =============================================================================
# Optimization loop
# =============================================================================

@dataclass
class TuneRecord:
    iteration: int
    phase: str            # "init" or "bo"
    k: np.ndarray
    cost: float           # penalized value used by the surrogate
    incumbent: float
    diverged: bool = False


@dataclass
class TuneResult:
    best_k: np.ndarray
    best_cost: float
    history: List[TuneRecord]
    parameter_names: List[str]

    @property
    def incumbent_curve(self) -> np.ndarray:
        return np.array([r.incumbent for r in self.history])

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for r in self.history:
            row = {"iteration": r.iteration, "phase": r.phase}
            row.update({name: float(v) for name, v in zip(self.parameter_names, r.k)})
            row.update({"J": r.cost, "incumbent": r.incumbent, "diverged": int(r.diverged)})
            rows.append(row)
        columns = ["iteration", "phase"] + list(self.parameter_names) + ["J", "incumbent", "diverged"]
        return pd.DataFrame(rows, columns=columns)

    def best_gains(self) -> Dict[str, float]:
        return {name: float(v) for name, v in zip(self.parameter_names, self.best_k)}


def save_history(result: TuneResult, path: str):
    """Write the tuning history CSV (iteration, k…, J, incumbent)"""
    ensure_parent_dir(path)
    result.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    logger.log_checkpoint(path, len(result.history))


def _penalize(value: float, history: List[TuneRecord]) -> Tuple[float, bool]:
    if np.isfinite(value):
        return float(value), False
    finite = [r.cost for r in history if not r.diverged]
    worst = max(finite) if finite else 0.0
    penalty = PENALTY_FACTOR * worst if worst > 0 else NO_FINITE_PENALTY
    return penalty, True


def _result(history: List[TuneRecord], names: List[str]) -> TuneResult:
    costs = np.array([r.cost for r in history])
    i = int(np.argmin(costs))  # earliest evaluated point wins ties
    return TuneResult(history[i].k.copy(), float(costs[i]), history, names)


def bayesian_minimize(objective: Callable[[np.ndarray], float], bounds: np.ndarray,
                      config: TuneConfig, parameter_names: Optional[List[str]] = None,
                      history_path: Optional[str] = None, progress: bool = False) -> TuneResult:
    """
    Minimize a black-box objective over a box.

    A non-finite objective value marks a diverged evaluation; it is replaced
    by 10× the worst finite value seen so far (1e9 before any).

    Args:
        objective: Maps a parameter vector to its cost
        bounds: (d × 2) lower/upper bounds
        config: Iteration budget, seed and acquisition settings
        parameter_names: Column names for the history
        history_path: Where the history CSV is written (also on abort)
        progress: Show a progress bar

    Raises:
        TuningAbortedError: the objective raised; the partial history is saved first
    """
    bounds = np.asarray(bounds, dtype=float)
    d = bounds.shape[0]
    names = list(parameter_names or [f"k{i}" for i in range(d)])
    lower, upper = bounds[:, 0], bounds[:, 1]
    history: List[TuneRecord] = []
    incumbent = np.inf

    def record(i: int, phase: str, k: np.ndarray, raw: float):
        nonlocal incumbent
        value, diverged = _penalize(raw, history)
        if diverged:
            logger.warning(f"Evaluation {i} diverged; penalty J={value:.6g}")
        if value < incumbent:
            if np.isfinite(incumbent):
                logger.info(f"[Iter {i}/{config.n_iter}] New incumbent J={value:.6g}")
            incumbent = value
        history.append(TuneRecord(i, phase, k.copy(), value, incumbent, diverged))
        logger.log_iteration(i, config.n_iter, value, incumbent, diverged)

    def abort(error: Exception):
        if history_path and history:
            save_history(_result(history, names), history_path)
        raise TuningAbortedError(f"tuning aborted after {len(history)} evaluations: {error}",
                                 history_path if history else None) from error

    rng = np.random.default_rng(config.seed)
    initial = rng.uniform(lower, upper, size=(config.n_init, d))
    try:
        if config.workers > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                values = list(pool.map(objective, initial))
        else:
            values = [objective(k) for k in initial]
    except Exception as e:
        abort(e)
    for i, (k, value) in enumerate(zip(initial, values), start=1):
        record(i, "init", k, value)

    for i in tqdm(range(config.n_init + 1, config.n_iter + 1), desc="Bayesian optimization",
                  disable=not progress):
        points = np.array([r.k for r in history])
        costs = np.array([r.cost for r in history])
        surrogate = gp_fit(points, costs, lower, upper, seed=config.seed + i,
                           n_starts=config.hyper_starts)
        k_next = propose_next(surrogate, bounds, seed=config.seed + i, best_so_far=incumbent,
                              candidates=config.candidates, refine_top=config.refine_top,
                              refine_halvings=config.refine_halvings,
                              refine_step=config.refine_step)
        try:
            value = objective(k_next)
        except Exception as e:
            abort(e)
        record(i, "bo", k_next, value)

    result = _result(history, names)
    if history_path:
        save_history(result, history_path)
    return result


def tune(dataset: Dataset, config: ObserverConfig, spec: CostSpec, tune_config: TuneConfig,
         history_path: Optional[str] = None, progress: bool = False) -> TuneResult:
    """
    Calibrate the observer gain on a training dataset.

    Returns:
        TuneResult with the best gain vector and the full history

    Raises:
        TuningAbortedError: unrecoverable predictor or bridge failure
    """
    dataset.validate_role("training")
    weights = spec.resolve_weights(dataset)
    objective = partial(evaluate_cost, dataset=dataset, config=config, spec=spec, weights=weights)
    result = bayesian_minimize(objective, config.template.bounds_array(), tune_config,
                               parameter_names=list(config.template.parameters),
                               history_path=history_path, progress=progress)
    logger.log_metric("Best J", f"{result.best_cost:.6g}")
    return result
