"""
Simulator-in-the-Loop Observer

Wraps any predictor that maps (x̂(k-1), u(k-1), δẑ(k-1)) to
(x̃(k), ỹ(k), z̃(k)), augments its state with constant-dynamics force offsets
δz and corrects the augmented state with a sparse linear gain:

    x̂_aug(k) = x̃_aug(k) + K · (y(k) - ỹ(k))

Channels are addressed by label, so one gain template drives predictors of
any state dimension.
"""

import os
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .dataio import Dataset
from .dynamics import (
    CORNERS, FORCE_LABELS, OUTPUT_LABELS, PLANT_STATE_LABELS, STATE_LABELS, N_CHASSIS,
    PlantParams, TireCoeffs, VehicleParams, advance, evaluate_outputs,
    load_plant_file, load_vehicle_file, sideslip_angle,
)
from .errors import (
    BridgeError, ConfigurationError, IntegrationError, MissingChannelError,
    ObserverDivergenceError, PredictorError,
)
from .logger import get_logger
from .utils import first_non_finite, index_of, load_yaml, resolve_path, save_yaml

logger = get_logger("observer")

OFFSET_PREFIX = "delta_"
BENCHMARK_AUGMENTED_LABELS = STATE_LABELS + tuple(OFFSET_PREFIX + l for l in FORCE_LABELS)


# =============================================================================
# Predictor contract
# =============================================================================

class Prediction(NamedTuple):
    x: np.ndarray   # predicted simulator state x̃(k)
    y: np.ndarray   # predicted outputs ỹ(k)
    z: np.ndarray   # predicted extended outputs z̃(k)


class Predictor(ABC):
    """
    Black-box vehicle simulator seen by the observer.

    Subclasses declare channel labels and implement `step` (state transition
    plus the outputs reported by the same prediction) and `outputs` (output
    maps at a given state, used for the initial trace row). Both take the
    extended-state offsets δẑ, which act on the extended outputs.
    """

    name: str = "predictor"
    state_labels: Tuple[str, ...] = ()
    output_labels: Tuple[str, ...] = ()
    extended_labels: Tuple[str, ...] = ()

    @property
    def n_states(self) -> int:
        return len(self.state_labels)

    @property
    def n_outputs(self) -> int:
        return len(self.output_labels)

    @property
    def n_extended(self) -> int:
        return len(self.extended_labels)

    @property
    def augmented_labels(self) -> Tuple[str, ...]:
        return tuple(self.state_labels) + tuple(OFFSET_PREFIX + l for l in self.extended_labels)

    @abstractmethod
    def step(self, x: np.ndarray, u: np.ndarray, dz: np.ndarray) -> Prediction:
        ...

    @abstractmethod
    def outputs(self, x: np.ndarray, u: np.ndarray, dz: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        ...

    def initial_state(self, dataset: Dataset) -> np.ndarray:
        """x(0) from the dataset's first ground-truth samples, zero elsewhere"""
        x0 = np.zeros(self.n_states)
        for idx, label in enumerate(self.state_labels):
            if dataset.has_channel(label):
                x0[idx] = float(dataset.frame[label].iloc[0])
        return x0

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()


class BenchmarkPredictor(Predictor):
    """Double-track benchmark model; δẑ adds to the Pacejka forces"""

    name = "benchmark"
    state_labels = STATE_LABELS
    output_labels = OUTPUT_LABELS
    extended_labels = FORCE_LABELS

    def __init__(self, params: VehicleParams, tires: TireCoeffs, dt: float, substeps: int = 10):
        self.params = params
        self.tires = tires
        self.dt = dt
        self.substeps = substeps

    def step(self, x, u, dz) -> Prediction:
        result = advance(x, u, self.params, self.tires, self.dt, self.substeps, offsets=dz)
        return Prediction(result.x, result.y, result.z)

    def outputs(self, x, u, dz):
        result = evaluate_outputs(x, u, self.params, self.tires, offsets=dz)
        return result.y, result.z


class PlantPredictor(Predictor):
    """Plant model as predictor: chassis states plus tire lag and load filter states"""

    name = "plant"
    state_labels = PLANT_STATE_LABELS
    output_labels = OUTPUT_LABELS
    extended_labels = FORCE_LABELS

    def __init__(self, plant: PlantParams, dt: float, substeps: int = 10):
        self.plant = plant
        self.dt = dt
        self.substeps = substeps

    def step(self, x, u, dz) -> Prediction:
        result = advance(x[:N_CHASSIS], u, self.plant.vehicle, self.plant.tires, self.dt,
                         self.substeps, aux=x[N_CHASSIS:], plant=self.plant, offsets=dz)
        return Prediction(np.concatenate((result.x, result.aux)), result.y, result.z)

    def outputs(self, x, u, dz):
        result = evaluate_outputs(x[:N_CHASSIS], u, self.plant.vehicle, self.plant.tires,
                                  aux=x[N_CHASSIS:], plant=self.plant, offsets=dz)
        return result.y, result.z


# =============================================================================
# Gain template
# =============================================================================

@dataclass(frozen=True)
class GainEntry:
    row: str      # augmented-state label
    col: str      # output label
    param: str
    sign: int = 1


@dataclass
class GainTemplate:
    """Sparse placement of the free gain parameters inside K"""
    entries: List[GainEntry]
    parameters: List[str]
    bounds: Dict[str, Tuple[float, float]]

    def __post_init__(self):
        seen = set()
        for entry in self.entries:
            if (entry.row, entry.col) in seen:
                raise ConfigurationError(f"duplicate gain entry ({entry.row}, {entry.col})")
            seen.add((entry.row, entry.col))
            if entry.sign not in (1, -1):
                raise ConfigurationError(f"gain entry sign must be +1 or -1 (got {entry.sign})")
            if entry.param not in self.parameters:
                raise ConfigurationError(f"gain entry uses unknown parameter '{entry.param}'")
        if len(set(self.parameters)) != len(self.parameters):
            raise ConfigurationError("duplicate gain parameter names")
        used = {entry.param for entry in self.entries}
        for name in self.parameters:
            if name not in used:
                raise ConfigurationError(f"gain parameter '{name}' is not used by any entry")
            if name not in self.bounds:
                raise ConfigurationError(f"gain parameter '{name}' has no bounds")
            lower, upper = self.bounds[name]
            if not lower < upper:
                raise ConfigurationError(f"bounds of '{name}' must satisfy lower < upper")

    @property
    def n_params(self) -> int:
        return len(self.parameters)

    def bounds_array(self) -> np.ndarray:
        """(n_params × 2) array of lower/upper bounds in parameter order"""
        return np.array([self.bounds[name] for name in self.parameters], dtype=float)

    def vector(self, gains: Dict[str, float]) -> np.ndarray:
        missing = [name for name in self.parameters if name not in gains]
        if missing:
            raise ConfigurationError(f"gain values missing for {missing}")
        return np.array([float(gains[name]) for name in self.parameters])

    def as_dict(self, k: Sequence[float]) -> Dict[str, float]:
        return {name: float(value) for name, value in zip(self.parameters, k)}

    @classmethod
    def from_dict(cls, data: Dict) -> "GainTemplate":
        params = data.get("parameters") or {}
        names = list(params)
        bounds = {}
        for name, spec in params.items():
            try:
                bounds[name] = (float(spec["lower"]), float(spec["upper"]))
            except (TypeError, KeyError):
                raise ConfigurationError(f"parameter '{name}' needs lower/upper bounds") from None
        entries = []
        for raw in data.get("entries") or []:
            try:
                entries.append(GainEntry(str(raw["row"]), str(raw["col"]), str(raw["param"]),
                                         int(raw.get("sign", 1))))
            except KeyError as e:
                raise ConfigurationError(f"gain entry missing key {e}") from None
        return cls(entries, names, bounds)

    def to_dict(self) -> Dict:
        return {
            "parameters": {name: {"lower": self.bounds[name][0], "upper": self.bounds[name][1]}
                           for name in self.parameters},
            "entries": [{"row": e.row, "col": e.col, "param": e.param, "sign": e.sign}
                        for e in self.entries],
        }


BENCHMARK_PARAMETERS = ("k_vx_omega", "k_yaw_yaw", "k_omega_omega", "k_fx_ax", "k_fy_yaw")
BENCHMARK_BOUNDS = {
    "k_vx_omega": (0.0, 1.0),
    "k_yaw_yaw": (0.0, 1.0),
    "k_omega_omega": (0.0, 1.0),
    "k_fx_ax": (0.0, 100.0),
    "k_fy_yaw": (-100.0, 0.0),
}
# Reference optimum reported for the sport-car application
REFERENCE_GAINS = {
    "k_vx_omega": 0.0808,
    "k_yaw_yaw": 0.1328,
    "k_omega_omega": 0.9593,
    "k_fx_ax": 98.42,
    "k_fy_yaw": -75.32,
}


def default_gain_template() -> GainTemplate:
    """
    Five-parameter template of the force-augmented observer.

    Wheel-speed innovations correct vx and each wheel speed, the yaw-rate
    innovation corrects yaw rate and the lateral force offsets (sign reversed
    on the rear axle), the ax innovation corrects the longitudinal offsets.
    """
    entries = [GainEntry("vx", f"omega_{c}", "k_vx_omega") for c in CORNERS]
    entries.append(GainEntry("yaw_rate", "yaw_rate", "k_yaw_yaw"))
    entries += [GainEntry(f"omega_{c}", f"omega_{c}", "k_omega_omega") for c in CORNERS]
    entries += [GainEntry(f"{OFFSET_PREFIX}fx_{c}", "ax", "k_fx_ax") for c in CORNERS]
    entries += [GainEntry(f"{OFFSET_PREFIX}fy_{c}", "yaw_rate", "k_fy_yaw",
                          1 if c.startswith("f") else -1) for c in CORNERS]
    return GainTemplate(entries, list(BENCHMARK_PARAMETERS), dict(BENCHMARK_BOUNDS))


def assemble_gain(template: GainTemplate, k: Sequence[float],
                  row_labels: Sequence[str] = None,
                  col_labels: Sequence[str] = OUTPUT_LABELS) -> np.ndarray:
    """
    Build the dense correction matrix K (n_aug × p) from a parameter vector.

    Args:
        template: Sparse placement map
        k: Parameter vector in template order
        row_labels: Augmented-state labels (defaults to the benchmark layout)
        col_labels: Output labels

    Raises:
        ConfigurationError: wrong parameter count or unknown channel label
    """
    if row_labels is None:
        row_labels = BENCHMARK_AUGMENTED_LABELS
    k = np.asarray(k, dtype=float)
    if k.shape != (template.n_params,):
        raise ConfigurationError(
            f"gain vector has {k.size} elements, template expects {template.n_params}"
        )
    bounds = template.bounds_array()
    outside = [name for name, value, (lo, hi) in zip(template.parameters, k, bounds)
               if not lo <= value <= hi]
    if outside:
        logger.warning(f"Gain parameter(s) outside bounds: {outside}")

    values = template.as_dict(k)
    K = np.zeros((len(row_labels), len(col_labels)))
    for entry in template.entries:
        i = index_of(row_labels, entry.row, "augmented-state")
        j = index_of(col_labels, entry.col, "output")
        K[i, j] = entry.sign * values[entry.param]
    return K


# =============================================================================
# Observer steps
# =============================================================================

class PredictStep(NamedTuple):
    x: np.ndarray       # x̃(k)
    y: np.ndarray       # ỹ(k)
    z: np.ndarray       # z̃(k)
    dz: np.ndarray      # δz̃(k) = δẑ(k-1)

    @property
    def z_hat(self) -> np.ndarray:
        """Corrected extended outputs ẑ = z̃ + δz̃"""
        return self.z + self.dz


def _check_dims(predictor: Predictor, pred: Prediction):
    for name, vec, n in (("x", pred.x, predictor.n_states), ("y", pred.y, predictor.n_outputs),
                         ("z", pred.z, predictor.n_extended)):
        if np.shape(vec) != (n,):
            raise ConfigurationError(
                f"predictor '{predictor.name}' returned {name} of shape {np.shape(vec)}, expected ({n},)"
            )


def predict_step(predictor: Predictor, x_hat: np.ndarray, u: np.ndarray, dz_hat: np.ndarray,
                 step: int = 0) -> PredictStep:
    """
    Propagate the augmented state one sample.

    Raises:
        ObserverDivergenceError: the predictor produced a non-finite state
        PredictorError: any other predictor failure, tagged with `step`
    """
    try:
        pred = predictor.step(x_hat, u, dz_hat)
    except IntegrationError as e:
        raise ObserverDivergenceError(step, e.channel) from e
    except (BridgeError, ObserverDivergenceError):
        raise
    except Exception as e:
        raise PredictorError(step, e) from e
    _check_dims(predictor, pred)
    return PredictStep(np.asarray(pred.x, dtype=float), np.asarray(pred.y, dtype=float),
                       np.asarray(pred.z, dtype=float), np.array(dz_hat, dtype=float, copy=True))


def correct_step(x_aug_pred: np.ndarray, y: np.ndarray, y_pred: np.ndarray,
                 K: np.ndarray) -> np.ndarray:
    """x̂_aug = x̃_aug + K·(y − ỹ)"""
    x_aug_pred = np.asarray(x_aug_pred, dtype=float)
    y = np.asarray(y, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y.shape != y_pred.shape or y.ndim != 1:
        raise ConfigurationError(f"output shapes differ: y {y.shape} vs predicted {y_pred.shape}")
    if K.shape != (x_aug_pred.size, y.size):
        raise ConfigurationError(
            f"gain shape {K.shape} does not match state {x_aug_pred.size} × outputs {y.size}"
        )
    return x_aug_pred + K @ (y - y_pred)


# =============================================================================
# Traces
# =============================================================================

@dataclass
class EstimateTrace:
    """Per-step estimates of one observer (or open-loop) run"""
    t: np.ndarray
    state_labels: Tuple[str, ...]
    output_labels: Tuple[str, ...]
    extended_labels: Tuple[str, ...]
    states: np.ndarray          # x̂
    offsets: np.ndarray         # δẑ
    outputs: np.ndarray         # ỹ
    forces: np.ndarray          # ẑ
    innovations: np.ndarray     # y − ỹ
    eps_v: float = 0.5
    metadata: Dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return len(self.t)

    @property
    def beta(self) -> np.ndarray:
        vx = self.states[:, list(self.state_labels).index("vx")]
        vy = self.states[:, list(self.state_labels).index("vy")]
        return sideslip_angle(vx, vy, self.eps_v)

    def channel(self, name: str) -> np.ndarray:
        """Series of a state, corrected force, offset or "beta" by label"""
        if name == "beta":
            return self.beta
        if name in self.state_labels:
            return self.states[:, list(self.state_labels).index(name)]
        if name in self.extended_labels:
            return self.forces[:, list(self.extended_labels).index(name)]
        if name.startswith(OFFSET_PREFIX) and name[len(OFFSET_PREFIX):] in self.extended_labels:
            return self.offsets[:, list(self.extended_labels).index(name[len(OFFSET_PREFIX):])]
        raise MissingChannelError(name)

    def augmented(self) -> np.ndarray:
        return np.hstack((self.states, self.offsets))

    def to_frame(self) -> pd.DataFrame:
        """Trace in the dataset column schema (truth labels hold the estimates)"""
        columns: Dict[str, np.ndarray] = {"t": self.t}
        for idx, label in enumerate(self.state_labels):
            columns[label] = self.states[:, idx]
        for idx, label in enumerate(self.extended_labels):
            columns[label] = self.forces[:, idx]
        for idx, label in enumerate(self.extended_labels):
            columns[OFFSET_PREFIX + label] = self.offsets[:, idx]
        for idx, label in enumerate(self.output_labels):
            columns[f"pred_{label}"] = self.outputs[:, idx]
        for idx, label in enumerate(self.output_labels):
            columns[f"innov_{label}"] = self.innovations[:, idx]
        columns["beta"] = self.beta
        return pd.DataFrame(columns)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, eps_v: float = 0.5,
                   metadata: Optional[Dict] = None) -> "EstimateTrace":
        """Rebuild a trace written by `to_frame`"""
        cols = list(frame.columns)
        outputs = tuple(c[len("pred_"):] for c in cols if c.startswith("pred_"))
        offsets = tuple(c[len(OFFSET_PREFIX):] for c in cols if c.startswith(OFFSET_PREFIX))
        reserved = {"t", "beta"} | set(offsets) | {OFFSET_PREFIX + o for o in offsets}
        reserved |= {f"pred_{o}" for o in outputs} | {f"innov_{o}" for o in outputs}
        states = tuple(c for c in cols if c not in reserved)

        def block(names):
            if not names:
                return np.zeros((len(frame), 0))
            return frame[list(names)].to_numpy(dtype=float)

        return cls(
            t=frame["t"].to_numpy(dtype=float),
            state_labels=states,
            output_labels=outputs,
            extended_labels=offsets,
            states=block(states),
            offsets=block([OFFSET_PREFIX + o for o in offsets]),
            outputs=block([f"pred_{o}" for o in outputs]),
            forces=block(offsets),
            innovations=block([f"innov_{o}" for o in outputs]),
            eps_v=eps_v,
            metadata=dict(metadata or {}),
        )

    def equals(self, other: "EstimateTrace") -> bool:
        """Bit-exact equality of every estimated series"""
        return all(np.array_equal(a, b) for a, b in (
            (self.t, other.t), (self.states, other.states), (self.offsets, other.offsets),
            (self.outputs, other.outputs), (self.forces, other.forces),
            (self.innovations, other.innovations),
        )) and self.state_labels == other.state_labels


# =============================================================================
# Configuration
# =============================================================================

PREDICTOR_KINDS = ("benchmark", "plant")


@dataclass
class ObserverConfig:
    """
    Observer setup.

    Args:
        predictor: "benchmark", "plant" or "extern:<address>"
        vehicle_file: Parameter file of the in-repo predictor
        template: Gain template
        dt: Sample period in s (must match the dataset)
        substeps: Euler sub-steps per sample
        initial_state: "dataset" (truth row 0 where available, zero elsewhere) or "zero"
        initial_values: Explicit x(0) values by state label (override the policy)
        initial_offsets: δz(0) by extended label (zero elsewhere)
        gains: Optional gain values by parameter name
        timeout: xbridge receive timeout in s
    """
    predictor: str
    template: GainTemplate
    vehicle_file: Optional[str] = None
    dt: float = 0.01
    substeps: int = 10
    initial_state: str = "dataset"
    initial_values: Dict[str, float] = field(default_factory=dict)
    initial_offsets: Dict[str, float] = field(default_factory=dict)
    gains: Optional[Dict[str, float]] = None
    timeout: float = 5.0

    def __post_init__(self):
        if not (self.predictor in PREDICTOR_KINDS or self.predictor.startswith("extern:")):
            raise ConfigurationError(f"unknown predictor '{self.predictor}'")
        if self.predictor in PREDICTOR_KINDS and not self.vehicle_file:
            raise ConfigurationError(f"predictor '{self.predictor}' needs a vehicle_file")
        if not (self.dt > 0):
            raise ConfigurationError("observer dt must be > 0")
        if self.substeps < 1:
            raise ConfigurationError("substeps must be >= 1")
        if self.initial_state not in ("dataset", "zero"):
            raise ConfigurationError(f"unknown initial-state policy '{self.initial_state}'")

    @classmethod
    def from_dict(cls, data: Dict, base_dir: str = ".") -> "ObserverConfig":
        if "template" in data:
            template = GainTemplate.from_dict(data["template"])
        else:
            template = default_gain_template()
        gains = data.get("gains")
        initial = data.get("initial") or {}
        return cls(
            predictor=str(data.get("predictor", "benchmark")),
            template=template,
            vehicle_file=resolve_path(data.get("vehicle_file"), base_dir),
            dt=float(data.get("dt", 0.01)),
            substeps=int(data.get("substeps", 10)),
            initial_state=str(initial.get("policy", "dataset")),
            initial_values={k: float(v) for k, v in (initial.get("values") or {}).items()},
            initial_offsets={k: float(v) for k, v in (initial.get("offsets") or {}).items()},
            gains=None if gains is None else {k: float(v) for k, v in gains.items()},
            timeout=float(data.get("timeout", 5.0)),
        )

    @classmethod
    def from_file(cls, path: str) -> "ObserverConfig":
        return cls.from_dict(load_yaml(path), os.path.dirname(os.path.abspath(path)))

    def to_dict(self) -> Dict:
        data = {
            "predictor": self.predictor,
            "vehicle_file": self.vehicle_file,
            "dt": self.dt,
            "substeps": self.substeps,
            "initial": {"policy": self.initial_state, "values": dict(self.initial_values),
                        "offsets": dict(self.initial_offsets)},
            "template": self.template.to_dict(),
            "timeout": self.timeout,
        }
        if self.gains is not None:
            data["gains"] = dict(self.gains)
        return data

    def with_gains(self, gains: Dict[str, float]) -> "ObserverConfig":
        merged = dict(self.gains or {})
        merged.update(gains)
        return ObserverConfig(**{**self.__dict__, "gains": merged})

    def with_predictor(self, predictor: str) -> "ObserverConfig":
        return ObserverConfig(**{**self.__dict__, "predictor": predictor})

    def gain_vector(self) -> np.ndarray:
        if self.gains is None:
            return np.zeros(self.template.n_params)
        return self.template.vector(self.gains)


def load_gains(path: str) -> Dict[str, float]:
    """Read a gain fragment (``gains: {name: value}``)"""
    data = load_yaml(path)
    gains = data.get("gains")
    if not isinstance(gains, dict):
        raise ConfigurationError(f"{path}: expected a 'gains' mapping")
    return {str(k): float(v) for k, v in gains.items()}


def save_gains(gains: Dict[str, float], path: str):
    """Write tuned gains as an observer-config fragment"""
    save_yaml({"gains": {k: float(v) for k, v in gains.items()}}, path)


def build_predictor(config: ObserverConfig) -> Predictor:
    """Instantiate the predictor selected by an observer config"""
    if config.predictor == "benchmark":
        params, tires = load_vehicle_file(config.vehicle_file)
        return BenchmarkPredictor(params, tires, config.dt, config.substeps)
    if config.predictor == "plant":
        return PlantPredictor(load_plant_file(config.vehicle_file), config.dt, config.substeps)
    from .xbridge import connect
    return connect(config.predictor[len("extern:"):], timeout=config.timeout)


def _eps_v(predictor: Predictor) -> float:
    if isinstance(predictor, BenchmarkPredictor):
        return predictor.tires.eps_v
    if isinstance(predictor, PlantPredictor):
        return predictor.plant.tires.eps_v
    return 0.5


def _initial_conditions(predictor: Predictor, dataset: Dataset,
                        config: ObserverConfig) -> Tuple[np.ndarray, np.ndarray]:
    if config.initial_state == "dataset":
        x0 = predictor.initial_state(dataset)
    else:
        x0 = np.zeros(predictor.n_states)
    for label, value in config.initial_values.items():
        x0[index_of(predictor.state_labels, label, "state")] = value
    dz0 = np.zeros(predictor.n_extended)
    for label, value in config.initial_offsets.items():
        dz0[index_of(predictor.extended_labels, label, "extended")] = value
    return x0, dz0


def _check_dataset(dataset: Dataset, config: ObserverConfig):
    if abs(dataset.dt - config.dt) > 1e-12:
        raise ConfigurationError(
            f"dataset dt {dataset.dt} does not match observer dt {config.dt}"
        )


# =============================================================================
# Runs
# =============================================================================

def run_observer(dataset: Dataset, config: ObserverConfig, k: Optional[Sequence[float]] = None,
                 predictor: Optional[Predictor] = None) -> EstimateTrace:
    """
    Replay a dataset through the closed-loop observer.

    Row 0 is the initial condition (no correction); each later row is the
    prediction from the previous estimate corrected with the measurement of
    that row.

    Args:
        dataset: Inputs and measurements (ground truth not required)
        config: Observer configuration
        k: Gain parameter vector (defaults to config.gains, else zero)
        predictor: Predictor instance to use instead of building one from config

    Raises:
        ObserverDivergenceError: non-finite augmented state, with step index
        PredictorError: predictor failure, with step index
    """
    _check_dataset(dataset, config)
    owned = predictor is None
    if owned:
        predictor = build_predictor(config)
    try:
        if k is None:
            k = config.gain_vector()
        K = assemble_gain(config.template, k, predictor.augmented_labels, predictor.output_labels)
        U = dataset.inputs()
        Y = dataset.measurements(predictor.output_labels)
        n, nx, nz, p = dataset.n_samples, predictor.n_states, predictor.n_extended, predictor.n_outputs
        states = np.empty((n, nx))
        offsets = np.empty((n, nz))
        outputs = np.empty((n, p))
        forces = np.empty((n, nz))

        x_hat, dz_hat = _initial_conditions(predictor, dataset, config)
        y0, z0 = predictor.outputs(x_hat, U[0], dz_hat)
        states[0], offsets[0], outputs[0], forces[0] = x_hat, dz_hat, y0, z0 + dz_hat

        labels = list(predictor.augmented_labels)
        for step in range(1, n):
            pred = predict_step(predictor, x_hat, U[step - 1], dz_hat, step)
            x_aug = correct_step(np.concatenate((pred.x, pred.dz)), Y[step], pred.y, K)
            bad = first_non_finite(x_aug, labels)
            if bad is not None:
                raise ObserverDivergenceError(step, bad)
            x_hat, dz_hat = x_aug[:nx], x_aug[nx:]
            states[step], offsets[step], outputs[step] = x_hat, dz_hat, pred.y
            forces[step] = pred.z + dz_hat
    finally:
        if owned:
            predictor.close()

    return EstimateTrace(
        t=dataset.time, state_labels=tuple(predictor.state_labels),
        output_labels=tuple(predictor.output_labels),
        extended_labels=tuple(predictor.extended_labels),
        states=states, offsets=offsets, outputs=outputs, forces=forces,
        innovations=Y - outputs, eps_v=_eps_v(predictor),
        metadata={"predictor": predictor.name, "dataset": dataset.name,
                  "gains": config.template.as_dict(k)},
    )


def open_loop_rollout(dataset: Dataset, config: ObserverConfig,
                      predictor: Optional[Predictor] = None) -> EstimateTrace:
    """Predictor driven by the dataset inputs without any correction"""
    _check_dataset(dataset, config)
    owned = predictor is None
    if owned:
        predictor = build_predictor(config)
    try:
        U = dataset.inputs()
        Y = dataset.measurements(predictor.output_labels)
        n = dataset.n_samples
        x, dz = _initial_conditions(predictor, dataset, config)
        states = np.empty((n, predictor.n_states))
        outputs = np.empty((n, predictor.n_outputs))
        forces = np.empty((n, predictor.n_extended))
        y, z = predictor.outputs(x, U[0], dz)
        states[0], outputs[0], forces[0] = x, y, z + dz
        for step in range(1, n):
            pred = predict_step(predictor, x, U[step - 1], dz, step)
            x = pred.x
            states[step], outputs[step], forces[step] = x, pred.y, pred.z + dz
    finally:
        if owned:
            predictor.close()

    return EstimateTrace(
        t=dataset.time, state_labels=tuple(predictor.state_labels),
        output_labels=tuple(predictor.output_labels),
        extended_labels=tuple(predictor.extended_labels),
        states=states, offsets=np.tile(dz, (n, 1)), outputs=outputs, forces=forces,
        innovations=Y - outputs, eps_v=_eps_v(predictor),
        metadata={"predictor": predictor.name, "dataset": dataset.name, "open_loop": True},
    )
