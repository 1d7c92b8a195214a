"""
Dataset Schema, Persistence and Twin-Experiment Generation

A dataset is one maneuver ("lap") on a uniform time grid: driver inputs,
noisy measurements (``meas_`` prefix) and, for training data, the clean
ground-truth states and tire forces of the plant that produced it.

Files are CSV with ``t`` as first column. Metadata travels in ``# key: value``
header comments (values JSON-encoded) ahead of the column header.
"""

import json
import os
import re
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from .dynamics import (
    INPUT_LABELS, OUTPUT_LABELS, STATE_LABELS, FORCE_LABELS, LOAD_LABELS, CORNERS,
    ChassisState, Diagnostics, PlantParams, advance, evaluate_outputs, N_AUX,
)
from .errors import (
    ConfigurationError, EmptyDatasetError, InconsistentLengthError,
    MalformedRowError, MissingChannelError,
)
from .logger import get_logger
from .utils import ensure_parent_dir, load_yaml

logger = get_logger("dataio")

ROLE_TRAINING = "training"
ROLE_DEPLOYMENT = "deployment"

MEASUREMENT_PREFIX = "meas_"
MEASUREMENT_CHANNELS = tuple(MEASUREMENT_PREFIX + label for label in OUTPUT_LABELS)
TRUTH_CHANNELS = STATE_LABELS + FORCE_LABELS

REQUIRED_CHANNELS = {
    ROLE_TRAINING: ("t",) + INPUT_LABELS + MEASUREMENT_CHANNELS + TRUTH_CHANNELS,
    ROLE_DEPLOYMENT: ("t",) + INPUT_LABELS + MEASUREMENT_CHANNELS,
}

CHANNEL_UNITS = {
    "t": "s", "steer": "rad", "engine_torque": "N*m", "gear": "-",
    "ax": "m/s^2", "ay": "m/s^2", "vx": "m/s", "vy": "m/s", "yaw_rate": "rad/s",
}
for _c in CORNERS:
    CHANNEL_UNITS.update({f"pb_{_c}": "bar", f"omega_{_c}": "rad/s",
                          f"fx_{_c}": "N", f"fy_{_c}": "N", f"fz_{_c}": "N"})

FLOAT_FORMAT = "%.17g"


def _unit(column: str) -> str:
    base = column[len(MEASUREMENT_PREFIX):] if column.startswith(MEASUREMENT_PREFIX) else column
    return CHANNEL_UNITS.get(base, "?")


# =============================================================================
# Dataset
# =============================================================================

@dataclass
class Dataset:
    """
    Time-indexed channels of one maneuver.

    Args:
        dt: Sample period in s
        frame: Channel table; column ``t`` first
        metadata: Seed, scenario id, noise spec and similar run information
    """
    dt: float
    frame: pd.DataFrame
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ConfigurationError(f"dataset dt must be > 0 (got {self.dt})")
        if "t" not in self.frame.columns:
            raise MissingChannelError("t")
        if self.frame.columns[0] != "t":
            cols = ["t"] + [c for c in self.frame.columns if c != "t"]
            self.frame = self.frame[cols]

    @property
    def n_samples(self) -> int:
        return len(self.frame)

    @property
    def name(self) -> str:
        return str(self.metadata.get("scenario", "dataset"))

    @property
    def role(self) -> str:
        return str(self.metadata.get("role", ROLE_DEPLOYMENT))

    @property
    def time(self) -> np.ndarray:
        return self.frame["t"].to_numpy(dtype=float)

    def has_channel(self, name: str) -> bool:
        return name in self.frame.columns

    def channel(self, name: str) -> np.ndarray:
        if name not in self.frame.columns:
            raise MissingChannelError(name)
        return self.frame[name].to_numpy(dtype=float)

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        """Channels stacked column-wise (N × len(names))"""
        missing = [n for n in names if n not in self.frame.columns]
        if missing:
            raise MissingChannelError(missing[0])
        return self.frame[list(names)].to_numpy(dtype=float)

    def inputs(self) -> np.ndarray:
        return self.matrix(INPUT_LABELS)

    def measurements(self, labels: Sequence[str] = OUTPUT_LABELS) -> np.ndarray:
        return self.matrix([MEASUREMENT_PREFIX + label for label in labels])

    def validate_role(self, role: Optional[str] = None):
        """Check the channel set required for a role is present"""
        role = role or self.role
        if role not in REQUIRED_CHANNELS:
            raise ConfigurationError(f"unknown dataset role '{role}'")
        for name in REQUIRED_CHANNELS[role]:
            if name not in self.frame.columns:
                raise MissingChannelError(name, role)

    def equals(self, other: "Dataset") -> bool:
        return (self.dt == other.dt and self.metadata == other.metadata
                and self.frame.equals(other.frame))


# =============================================================================
# Persistence
# =============================================================================

def save_dataset(dataset: Dataset, path: str):
    """
    Write a dataset as CSV with full-precision decimal values.

    Args:
        dataset: Dataset to save
        path: Output file path
    """
    ensure_parent_dir(path)
    header = {"dt": dataset.dt}
    header.update(dataset.metadata)
    units = " ".join(f"{c}[{_unit(c)}]" for c in dataset.frame.columns)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for key in sorted(header):
            f.write(f"# {key}: {json.dumps(header[key], sort_keys=True)}\n")
        f.write(f"# units: {units}\n")
        dataset.frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"Saved dataset '{dataset.name}' ({dataset.n_samples} samples) -> {path}")


def _read_header(path: str) -> Tuple[Dict[str, Any], int]:
    """Metadata of the leading comment block and the number of lines it spans"""
    meta = {}
    lines = 0
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.startswith("#"):
                break
            lines += 1
            key, sep, value = line[1:].strip().partition(":")
            if not sep or key.strip() == "units":
                continue
            try:
                meta[key.strip()] = json.loads(value.strip())
            except json.JSONDecodeError:
                meta[key.strip()] = value.strip()
    return meta, lines


def _check_column(frame: pd.DataFrame, column: str):
    raw = frame[column]
    values = pd.to_numeric(raw, errors="coerce")
    bad = values.isna()
    if not bad.any():
        frame[column] = values.astype(float)
        return
    positions = np.flatnonzero(bad.to_numpy())
    # Missing values at the tail only: the channel is shorter than the others
    if raw.iloc[positions[0]:].isna().all():
        raise InconsistentLengthError(column, len(frame), int(positions[0]))
    first = int(positions[0])
    raise MalformedRowError(first, column, raw.iloc[first])


def load_dataset(path: str, role: Optional[str] = None) -> Dataset:
    """
    Load a dataset CSV.

    Args:
        path: Input file path
        role: Role to validate against (defaults to the role in the file header)

    Returns:
        Dataset with known channels as float64 and unknown columns untouched

    Raises:
        MissingChannelError, InconsistentLengthError, MalformedRowError,
        EmptyDatasetError
    """
    meta, header_lines = _read_header(path)
    try:
        # Only the leading block is metadata; "#" inside data rows is kept
        frame = pd.read_csv(path, skiprows=header_lines, float_precision="round_trip")
    except pd.errors.EmptyDataError:
        raise EmptyDatasetError(f"{path}: no header and no samples") from None
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        row = int(match.group(1)) if match else -1
        raise MalformedRowError(row, "*", str(e)) from None

    if frame.empty:
        raise EmptyDatasetError(f"{path}: header only, no samples")

    known = set(REQUIRED_CHANNELS[ROLE_TRAINING]) | set(LOAD_LABELS)
    for column in frame.columns:
        if column in known:
            _check_column(frame, column)

    dt = meta.pop("dt", None)
    if dt is None:
        if "t" not in frame.columns or len(frame) < 2:
            raise ConfigurationError(f"{path}: cannot infer dt")
        dt = float(frame["t"].iloc[1] - frame["t"].iloc[0])
    dataset = Dataset(dt=float(dt), frame=frame, metadata=meta)
    dataset.validate_role(role or dataset.role)
    logger.info(f"Loaded dataset '{dataset.name}' ({dataset.n_samples} samples) from {path}")
    return dataset


# =============================================================================
# Noise
# =============================================================================

def add_noise(channel: np.ndarray, sigma: float, bias: float = 0.0,
              seed: Optional[int] = None) -> np.ndarray:
    """
    Add a constant bias and seeded zero-mean Gaussian noise to a channel.

    Args:
        channel: Clean samples
        sigma: Noise standard deviation (>= 0)
        bias: Constant offset
        seed: Seed or SeedSequence of the noise generator
    """
    if sigma < 0:
        raise ConfigurationError(f"noise sigma must be >= 0 (got {sigma})")
    channel = np.asarray(channel, dtype=float)
    if sigma == 0 and bias == 0:
        return channel.copy()
    rng = np.random.default_rng(seed)
    return channel + bias + rng.normal(0.0, sigma, size=channel.shape)


@dataclass(frozen=True)
class ChannelNoise:
    sigma: float = 0.0
    bias: float = 0.0


DEFAULT_NOISE = {
    "ax": 0.05, "ay": 0.05, "yaw_rate": 0.005,
    "omega_fl": 0.05, "omega_fr": 0.05, "omega_rl": 0.05, "omega_rr": 0.05,
}


@dataclass
class NoiseSpec:
    """Per measurement channel noise (keyed by output label) plus the noise seed"""
    channels: Dict[str, ChannelNoise] = field(default_factory=dict)
    seed: Optional[int] = None

    def __post_init__(self):
        for name, spec in self.channels.items():
            if name not in OUTPUT_LABELS:
                raise ConfigurationError(f"noise spec for unknown channel '{name}'")
            if not (np.isfinite(spec.sigma) and spec.sigma >= 0):
                raise ConfigurationError(f"noise sigma of '{name}' must be >= 0")

    @classmethod
    def default(cls, seed: Optional[int] = None) -> "NoiseSpec":
        return cls({k: ChannelNoise(v) for k, v in DEFAULT_NOISE.items()}, seed)

    @classmethod
    def zero(cls) -> "NoiseSpec":
        return cls({}, None)

    @classmethod
    def from_dict(cls, data: Dict) -> "NoiseSpec":
        channels: Dict[str, ChannelNoise] = {}
        for name, entry in (data.get("channels") or {}).items():
            if isinstance(entry, dict):
                spec = ChannelNoise(float(entry.get("sigma", 0.0)), float(entry.get("bias", 0.0)))
            else:
                spec = ChannelNoise(float(entry))
            # "omega" sets all four wheel speeds
            targets = [f"omega_{c}" for c in CORNERS] if name == "omega" else [name]
            for target in targets:
                channels[target] = spec
        seed = data.get("seed")
        return cls(channels, None if seed is None else int(seed))

    @classmethod
    def from_file(cls, path: str) -> "NoiseSpec":
        return cls.from_dict(load_yaml(path))

    def to_dict(self) -> Dict:
        return {
            "channels": {k: {"sigma": v.sigma, "bias": v.bias}
                         for k, v in sorted(self.channels.items())},
            "seed": self.seed,
        }

    def apply(self, clean: np.ndarray, seed: int) -> np.ndarray:
        """Noisy copy of the clean output matrix (columns in OUTPUT_LABELS order)"""
        noisy = np.array(clean, dtype=float, copy=True)
        base = self.seed if self.seed is not None else seed
        for idx, label in enumerate(OUTPUT_LABELS):
            spec = self.channels.get(label)
            if spec is None:
                continue
            noisy[:, idx] = add_noise(clean[:, idx], spec.sigma, spec.bias,
                                      np.random.SeedSequence([base, idx]))
        return noisy


# =============================================================================
# Scenarios
# =============================================================================

@dataclass
class Profile:
    """Piecewise profile through (time, value) knots"""
    times: np.ndarray
    values: np.ndarray
    interpolation: str = "linear"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.ndim != 1 or self.times.shape != self.values.shape or self.times.size == 0:
            raise ConfigurationError("profile needs matching, non-empty time and value lists")
        if np.any(np.diff(self.times) < 0):
            raise ConfigurationError("profile times must be non-decreasing")
        if self.interpolation not in ("linear", "step"):
            raise ConfigurationError(f"unknown interpolation '{self.interpolation}'")

    def __call__(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.interpolation == "linear":
            return np.interp(t, self.times, self.values)
        idx = np.searchsorted(self.times, t, side="right") - 1
        return self.values[np.clip(idx, 0, len(self.values) - 1)]

    @classmethod
    def constant(cls, value: float) -> "Profile":
        return cls(np.array([0.0]), np.array([float(value)]), "step")

    @classmethod
    def from_dict(cls, data: Any, default_interpolation: str = "linear") -> "Profile":
        if isinstance(data, (int, float)):
            return cls.constant(float(data))
        points = data.get("points") or []
        if not points:
            raise ConfigurationError("profile has no points")
        times = [float(p[0]) for p in points]
        values = [float(p[1]) for p in points]
        return cls(np.array(times), np.array(values),
                   data.get("interpolation", default_interpolation))

    def to_dict(self) -> Dict:
        return {"interpolation": self.interpolation,
                "points": [[float(t), float(v)] for t, v in zip(self.times, self.values)]}


@dataclass
class ScenarioSpec:
    """
    Scripted maneuver.

    Profiles are keyed by input label; ``pb_front`` / ``pb_rear`` expand to
    both corners of an axle. Missing inputs default to 0 (gear to 1).
    """
    name: str
    duration: float
    initial_speed: float
    profiles: Dict[str, Profile] = field(default_factory=dict)
    steer_jitter: float = 0.0

    def __post_init__(self):
        if not (self.duration > 0):
            raise ConfigurationError("scenario duration must be > 0")
        if not (self.initial_speed >= 0):
            raise ConfigurationError("scenario initial speed must be >= 0")
        if self.steer_jitter < 0:
            raise ConfigurationError("steer_jitter must be >= 0")
        for name, profile in self.profiles.items():
            if name not in INPUT_LABELS:
                raise ConfigurationError(f"profile for unknown input '{name}'")
            if profile.times[0] > 0:
                raise ConfigurationError(f"profile '{name}' must start at t=0")

    @classmethod
    def from_dict(cls, data: Dict) -> "ScenarioSpec":
        profiles: Dict[str, Profile] = {}
        aliases = {"pb_front": ("pb_fl", "pb_fr"), "pb_rear": ("pb_rl", "pb_rr")}
        for name, entry in (data.get("profiles") or {}).items():
            interp = "step" if name == "gear" else "linear"
            profile = Profile.from_dict(entry, interp)
            for target in aliases.get(name, (name,)):
                profiles[target] = profile
        try:
            return cls(
                name=str(data.get("name", "scenario")),
                duration=float(data["duration"]),
                initial_speed=float(data.get("initial_speed", 0.0)),
                profiles=profiles,
                steer_jitter=float(data.get("steer_jitter", 0.0)),
            )
        except KeyError as e:
            raise ConfigurationError(f"scenario missing key {e}") from None

    @classmethod
    def from_file(cls, path: str) -> "ScenarioSpec":
        data = load_yaml(path)
        data.setdefault("name", os.path.splitext(os.path.basename(path))[0])
        return cls.from_dict(data)

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "duration": self.duration,
            "initial_speed": self.initial_speed,
            "steer_jitter": self.steer_jitter,
            "profiles": {k: v.to_dict() for k, v in sorted(self.profiles.items())},
        }

    def input_schedule(self, t: np.ndarray, seed: Optional[int] = None) -> np.ndarray:
        """Input matrix (N × len(INPUT_LABELS)) on a time grid"""
        schedule = np.zeros((len(t), len(INPUT_LABELS)))
        for idx, label in enumerate(INPUT_LABELS):
            profile = self.profiles.get(label)
            if profile is None and label == "gear":
                profile = Profile.constant(1.0)
            if profile is not None:
                schedule[:, idx] = profile(t)
        schedule[:, INPUT_LABELS.index("gear")] = np.round(schedule[:, INPUT_LABELS.index("gear")])
        if self.steer_jitter > 0:
            rng = np.random.default_rng(seed)
            schedule[:, 0] += rng.normal(0.0, self.steer_jitter, size=len(t))
        return schedule


# =============================================================================
# Generation
# =============================================================================

def generate_dataset(scenario: ScenarioSpec, plant: PlantParams, noise: NoiseSpec,
                     seed: int, dt: float = 0.01, substeps: int = 10,
                     progress: bool = False) -> Dataset:
    """
    Roll out the plant over a scenario and record truth and measurements.

    Row 0 holds the initial state with outputs/forces evaluated at it; row k
    holds the state after step k-1 and the outputs/forces reported by that
    step.

    Args:
        scenario: Maneuver script
        plant: Plant model parameters
        noise: Measurement noise; its own seed wins over `seed` when set
        seed: Plant-side seed (steer jitter) and fallback noise seed
        dt: Sample period in s
        substeps: Euler sub-steps per sample
        progress: Show a progress bar

    Raises:
        IntegrationError: plant divergence, with the time stamp of the step
    """
    n = int(round(scenario.duration / dt)) + 1
    t = np.arange(n) * dt
    u = scenario.input_schedule(t, seed)

    states = np.empty((n, len(STATE_LABELS)))
    outputs = np.empty((n, len(OUTPUT_LABELS)))
    forces = np.empty((n, len(FORCE_LABELS)))
    loads = np.empty((n, len(LOAD_LABELS)))

    vehicle, tires = plant.vehicle, plant.tires
    x = ChassisState.rolling(scenario.initial_speed, vehicle).to_array()
    aux = np.zeros(N_AUX)
    diagnostics = Diagnostics()

    first = evaluate_outputs(x, u[0], vehicle, tires, aux=aux, plant=plant)
    states[0], outputs[0], forces[0], loads[0] = x, first.y, first.z, first.fz

    for k in tqdm(range(n - 1), desc=f"Simulating {scenario.name}", disable=not progress):
        result = advance(x, u[k], vehicle, tires, dt, substeps=substeps, aux=aux,
                         plant=plant, diagnostics=diagnostics, time=float(t[k]))
        x, aux = result.x, result.aux
        states[k + 1], outputs[k + 1], forces[k + 1], loads[k + 1] = x, result.y, result.z, result.fz

    measured = noise.apply(outputs, seed)

    columns: Dict[str, np.ndarray] = {"t": t}
    for idx, label in enumerate(INPUT_LABELS):
        columns[label] = u[:, idx]
    for idx, label in enumerate(OUTPUT_LABELS):
        columns[MEASUREMENT_PREFIX + label] = measured[:, idx]
    for idx, label in enumerate(STATE_LABELS):
        columns[label] = states[:, idx]
    for idx, label in enumerate(FORCE_LABELS):
        columns[label] = forces[:, idx]
    for idx, label in enumerate(LOAD_LABELS):
        columns[label] = loads[:, idx]

    metadata = {
        "role": ROLE_TRAINING,
        "scenario": scenario.name,
        "seed": int(seed),
        "noise": noise.to_dict(),
        "substeps": int(substeps),
        "load_clamps": diagnostics.load_clamps,
    }
    if diagnostics.load_clamps:
        logger.warning(f"{scenario.name}: {diagnostics.load_clamps} wheel-load clamp(s) during rollout")
    return Dataset(dt=dt, frame=pd.DataFrame(columns), metadata=metadata)
