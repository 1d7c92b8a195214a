"""
Vehicle Dynamics Models

Double-track benchmark model (planar chassis, four Pacejka tires, wheel spin
dynamics) and a richer "plant" model used as data generator and as the
high-fidelity predictor. Both share one sub-step routine; the plant only
switches on combined-slip friction ellipse, first-order tire relaxation and
low-pass filtered load transfer.

Conventions:
    - body frame: x forward, y left, yaw positive counter-clockwise
    - corner order: fl, fr, rl, rr
    - lateral tire force opposes the wheel-frame lateral velocity
"""

import math
import os
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple, NamedTuple, Union, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, IntegrationError
from .logger import get_logger
from .utils import load_yaml, first_non_finite

logger = get_logger("dynamics")

CORNERS = ("fl", "fr", "rl", "rr")
STATE_LABELS = ("vx", "vy", "yaw_rate") + tuple(f"omega_{c}" for c in CORNERS)
OUTPUT_LABELS = ("ax", "ay", "yaw_rate") + tuple(f"omega_{c}" for c in CORNERS)
FORCE_LABELS = tuple(f"fx_{c}" for c in CORNERS) + tuple(f"fy_{c}" for c in CORNERS)
LOAD_LABELS = tuple(f"fz_{c}" for c in CORNERS)
PLANT_AUX_LABELS = (
    tuple(f"fx_lag_{c}" for c in CORNERS)
    + tuple(f"fy_lag_{c}" for c in CORNERS)
    + ("ax_filt", "ay_filt")
)
PLANT_STATE_LABELS = STATE_LABELS + PLANT_AUX_LABELS
INPUT_LABELS = ("steer",) + tuple(f"pb_{c}" for c in CORNERS) + ("engine_torque", "gear")

N_CHASSIS = len(STATE_LABELS)
N_AUX = len(PLANT_AUX_LABELS)


# =============================================================================
# Parameters
# =============================================================================

def _positive(name: str, value: float):
    if not (np.isfinite(value) and value > 0):
        raise ConfigurationError(f"parameter '{name}' must be finite and > 0 (got {value})")


@dataclass
class VehicleParams:
    """Physical constants of a vehicle (SI units, brake gain in N·m/bar)"""
    mass: float
    yaw_inertia: float
    lf: float
    lr: float
    track: float
    wheel_radius: Union[float, Tuple[float, float, float, float]]
    wheel_inertia: float
    brake_gain: float
    gear_ratios: Dict[int, float]
    cg_height: float = 0.5
    gravity: float = 9.81

    # Derived geometry, filled in __post_init__
    corner_x: np.ndarray = field(init=False, repr=False, compare=False)
    corner_y: np.ndarray = field(init=False, repr=False, compare=False)
    radii: np.ndarray = field(init=False, repr=False, compare=False)
    static_loads: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("mass", "yaw_inertia", "lf", "lr", "track",
                     "wheel_inertia", "brake_gain", "cg_height", "gravity"):
            _positive(name, float(getattr(self, name)))

        radii = np.broadcast_to(np.asarray(self.wheel_radius, dtype=float), (4,)).copy()
        for corner, radius in zip(CORNERS, radii):
            _positive(f"wheel_radius[{corner}]", radius)
        self.wheel_radius = tuple(float(r) for r in radii)

        if not self.gear_ratios:
            raise ConfigurationError("gear ratio table must not be empty")
        ratios = {}
        for gear, ratio in self.gear_ratios.items():
            _positive(f"gear_ratios[{gear}]", float(ratio))
            ratios[int(gear)] = float(ratio)
        self.gear_ratios = ratios

        half = self.track / 2.0
        self.corner_x = np.array([self.lf, self.lf, -self.lr, -self.lr])
        self.corner_y = np.array([half, -half, half, -half])
        self.radii = radii
        weight = self.mass * self.gravity
        front = weight * self.lr / (2.0 * self.wheelbase)
        rear = weight * self.lf / (2.0 * self.wheelbase)
        self.static_loads = np.array([front, front, rear, rear])

    @property
    def wheelbase(self) -> float:
        return self.lf + self.lr

    def gear_ratio(self, gear: Union[int, float]) -> float:
        """Overall driveline ratio of a gear"""
        value = float(gear)
        try:
            return self.gear_ratios[int(round(value))]
        except (KeyError, ValueError, OverflowError):
            raise ConfigurationError(
                f"unknown gear {gear!r} (known: {sorted(self.gear_ratios)})"
            ) from None

    @classmethod
    def from_dict(cls, data: Dict) -> "VehicleParams":
        required = ("mass", "yaw_inertia", "lf", "lr", "track", "wheel_radius",
                    "wheel_inertia", "brake_gain", "gear_ratios")
        missing = [key for key in required if key not in data]
        if missing:
            raise ConfigurationError(f"vehicle parameters missing keys: {missing}")
        kwargs = {key: data[key] for key in required}
        for key in ("cg_height", "gravity"):
            if key in data:
                kwargs[key] = data[key]
        return cls(**kwargs)

    def to_dict(self) -> Dict:
        return {
            "mass": self.mass,
            "yaw_inertia": self.yaw_inertia,
            "lf": self.lf,
            "lr": self.lr,
            "track": self.track,
            "wheel_radius": list(self.wheel_radius),
            "wheel_inertia": self.wheel_inertia,
            "brake_gain": self.brake_gain,
            "gear_ratios": dict(self.gear_ratios),
            "cg_height": self.cg_height,
            "gravity": self.gravity,
        }


class PacejkaCoeffs(NamedTuple):
    """Magic-formula coefficients of one tire axis"""
    b: float
    c: float
    d: float
    e: float


@dataclass(frozen=True)
class TireCoeffs:
    b_x: float
    c_x: float
    d_x: float
    e_x: float
    b_y: float
    c_y: float
    d_y: float
    e_y: float
    eps_v: float = 0.5

    def __post_init__(self):
        for name in ("b_x", "c_x", "d_x", "b_y", "c_y", "d_y", "eps_v"):
            _positive(name, float(getattr(self, name)))
        for name in ("e_x", "e_y"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigurationError(f"parameter '{name}' must be finite")

    @property
    def longitudinal(self) -> PacejkaCoeffs:
        return PacejkaCoeffs(self.b_x, self.c_x, self.d_x, self.e_x)

    @property
    def lateral(self) -> PacejkaCoeffs:
        return PacejkaCoeffs(self.b_y, self.c_y, self.d_y, self.e_y)

    @classmethod
    def from_dict(cls, data: Dict) -> "TireCoeffs":
        keys = ("b_x", "c_x", "d_x", "e_x", "b_y", "c_y", "d_y", "e_y")
        missing = [key for key in keys if key not in data]
        if missing:
            raise ConfigurationError(f"tire coefficients missing keys: {missing}")
        kwargs = {key: float(data[key]) for key in keys}
        if "eps_v" in data:
            kwargs["eps_v"] = float(data["eps_v"])
        return cls(**kwargs)

    def to_dict(self) -> Dict:
        return {
            "b_x": self.b_x, "c_x": self.c_x, "d_x": self.d_x, "e_x": self.e_x,
            "b_y": self.b_y, "c_y": self.c_y, "d_y": self.d_y, "e_y": self.e_y,
            "eps_v": self.eps_v,
        }


@dataclass
class PlantParams:
    """
    Plant model: benchmark structure plus the extra effects below.

    Args:
        relaxation_length: Tire relaxation length in m; 0 bypasses the lag
        load_filter_hz: Load-transfer filter cutoff in Hz; None disables it
        friction_ellipse: Scale lateral force by the longitudinal utilisation
    """
    vehicle: VehicleParams
    tires: TireCoeffs
    relaxation_length: float = 0.3
    load_filter_hz: Optional[float] = 2.0
    friction_ellipse: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.relaxation_length) and self.relaxation_length >= 0):
            raise ConfigurationError("relaxation_length must be >= 0")
        if self.load_filter_hz is not None:
            _positive("load_filter_hz", float(self.load_filter_hz))

    @property
    def is_benchmark_equivalent(self) -> bool:
        return (self.relaxation_length == 0 and self.load_filter_hz is None
                and not self.friction_ellipse)

    @classmethod
    def from_dict(cls, data: Dict) -> "PlantParams":
        vehicle = VehicleParams.from_dict(data)
        tires = TireCoeffs.from_dict(data.get("tires") or {})
        kwargs = {}
        if "relaxation_length" in data:
            kwargs["relaxation_length"] = float(data["relaxation_length"])
        if "load_filter_hz" in data:
            hz = data["load_filter_hz"]
            kwargs["load_filter_hz"] = None if hz is None else float(hz)
        if "friction_ellipse" in data:
            kwargs["friction_ellipse"] = bool(data["friction_ellipse"])
        return cls(vehicle=vehicle, tires=tires, **kwargs)

    def to_dict(self) -> Dict:
        data = self.vehicle.to_dict()
        data["tires"] = self.tires.to_dict()
        data["relaxation_length"] = self.relaxation_length
        data["load_filter_hz"] = self.load_filter_hz
        data["friction_ellipse"] = self.friction_ellipse
        return data


def load_vehicle_file(path: str) -> Tuple[VehicleParams, TireCoeffs]:
    """Load a vehicle parameter file (benchmark layout)"""
    data = load_yaml(path)
    logger.debug(f"Loaded vehicle parameters from {os.path.basename(path)}")
    return VehicleParams.from_dict(data), TireCoeffs.from_dict(data.get("tires") or {})


def load_plant_file(path: str) -> PlantParams:
    """Load a vehicle parameter file including the plant-only keys"""
    return PlantParams.from_dict(load_yaml(path))


# =============================================================================
# State, inputs and outputs
# =============================================================================

@dataclass
class ChassisState:
    vx: float
    vy: float
    yaw_rate: float
    omega: np.ndarray  # fl, fr, rl, rr

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float).reshape(4)

    def to_array(self) -> np.ndarray:
        return np.concatenate(([self.vx, self.vy, self.yaw_rate], self.omega))

    @classmethod
    def from_array(cls, x: Sequence[float]) -> "ChassisState":
        x = np.asarray(x, dtype=float)
        if x.shape != (N_CHASSIS,):
            raise ConfigurationError(f"chassis state must have {N_CHASSIS} elements, got {x.shape}")
        return cls(float(x[0]), float(x[1]), float(x[2]), x[3:7].copy())

    @classmethod
    def rolling(cls, speed: float, params: VehicleParams) -> "ChassisState":
        """Straight-line state with free-rolling wheels"""
        return cls(speed, 0.0, 0.0, speed / params.radii)


@dataclass
class PlantState:
    chassis: ChassisState
    lag: np.ndarray = field(default_factory=lambda: np.zeros(8))     # fx fl..rr, fy fl..rr
    filt: np.ndarray = field(default_factory=lambda: np.zeros(2))    # ax, ay

    def __post_init__(self):
        self.lag = np.asarray(self.lag, dtype=float).reshape(8)
        self.filt = np.asarray(self.filt, dtype=float).reshape(2)

    def to_array(self) -> np.ndarray:
        return np.concatenate((self.chassis.to_array(), self.lag, self.filt))

    @classmethod
    def from_array(cls, x: Sequence[float]) -> "PlantState":
        x = np.asarray(x, dtype=float)
        if x.shape != (len(PLANT_STATE_LABELS),):
            raise ConfigurationError(
                f"plant state must have {len(PLANT_STATE_LABELS)} elements, got {x.shape}"
            )
        return cls(ChassisState.from_array(x[:N_CHASSIS]),
                   x[N_CHASSIS:N_CHASSIS + 8].copy(), x[N_CHASSIS + 8:].copy())


@dataclass
class DriverInputs:
    steer: float
    brake_pressure: np.ndarray  # bar, fl, fr, rl, rr
    engine_torque: float
    gear: int

    def __post_init__(self):
        self.brake_pressure = np.broadcast_to(
            np.asarray(self.brake_pressure, dtype=float), (4,)
        ).copy()

    def to_array(self) -> np.ndarray:
        return np.concatenate(([self.steer], self.brake_pressure,
                               [self.engine_torque, float(self.gear)]))

    @classmethod
    def from_array(cls, u: Sequence[float]) -> "DriverInputs":
        u = np.asarray(u, dtype=float)
        if u.shape != (len(INPUT_LABELS),):
            raise ConfigurationError(f"input vector must have {len(INPUT_LABELS)} elements")
        return cls(float(u[0]), u[1:5].copy(), float(u[5]), int(round(u[6])))


@dataclass
class CornerForces:
    fx: np.ndarray
    fy: np.ndarray
    fz: np.ndarray

    def to_array(self) -> np.ndarray:
        """Extended outputs: fx fl..rr then fy fl..rr"""
        return np.concatenate((self.fx, self.fy))


@dataclass
class MeasuredOutputs:
    ax: float
    ay: float
    yaw_rate: float
    omega: np.ndarray

    def to_array(self) -> np.ndarray:
        return np.concatenate(([self.ax, self.ay, self.yaw_rate], self.omega))

    @classmethod
    def from_array(cls, y: Sequence[float]) -> "MeasuredOutputs":
        y = np.asarray(y, dtype=float)
        return cls(float(y[0]), float(y[1]), float(y[2]), y[3:7].copy())


@dataclass
class Diagnostics:
    """Counters accumulated across model steps"""
    load_clamps: int = 0
    substeps: int = 0


# =============================================================================
# Model functions
# =============================================================================

def _magic_shape(slip, coeffs: PacejkaCoeffs):
    bs = coeffs.b * slip
    return np.sin(coeffs.c * np.arctan(bs - coeffs.e * (bs - np.arctan(bs))))


def pacejka_force(slip, fz, coeffs: PacejkaCoeffs):
    """
    Simplified magic formula F = Fz·D·sin(C·arctan(B·s − E·(B·s − arctan(B·s)))).

    Args:
        slip: Longitudinal slip ratio or slip angle (scalar or array)
        fz: Vertical load(s) in N
        coeffs: Coefficients of the axis being evaluated

    Returns:
        Tire force(s) in N, bounded by D·Fz in magnitude

    Raises:
        DomainError: non-finite slip or negative load
    """
    slip_arr = np.asarray(slip, dtype=float)
    fz_arr = np.asarray(fz, dtype=float)
    if not np.all(np.isfinite(slip_arr)):
        raise DomainError(f"non-finite slip: {slip!r}")
    if not np.all(np.isfinite(fz_arr)) or np.any(fz_arr < 0):
        raise DomainError(f"vertical load must be finite and >= 0: {fz!r}")
    if not (coeffs.b > 0 and coeffs.c > 0 and coeffs.d > 0):
        raise DomainError(f"invalid Pacejka coefficients {coeffs}")
    force = fz_arr * coeffs.d * _magic_shape(slip_arr, coeffs)
    return float(force) if force.ndim == 0 else force


class Slips(NamedTuple):
    vx_wheel: np.ndarray
    vy_wheel: np.ndarray
    long_slip: np.ndarray
    slip_angle: np.ndarray


def _slips(vx: float, vy: float, yaw_rate: float, omega: np.ndarray, steer: float,
           params: VehicleParams, eps_v: float) -> Slips:
    vx_c = vx - yaw_rate * params.corner_y
    vy_c = vy + yaw_rate * params.corner_x
    if steer != 0.0:
        cos_d, sin_d = math.cos(steer), math.sin(steer)
        vx_front = vx_c[:2] * cos_d + vy_c[:2] * sin_d
        vy_front = -vx_c[:2] * sin_d + vy_c[:2] * cos_d
        vx_c = np.concatenate((vx_front, vx_c[2:]))
        vy_c = np.concatenate((vy_front, vy_c[2:]))

    rolling = params.radii * omega
    reference = np.maximum(rolling, vx_c)
    lam = (rolling - vx_c) / np.maximum(reference, eps_v)
    # Fade longitudinal slip out below 2·eps_v
    lam = lam * np.clip(reference / (2.0 * eps_v), 0.0, 1.0)
    alpha = np.arctan(vy_c / np.maximum(vx_c, eps_v))
    return Slips(vx_c, vy_c, lam, alpha)


def compute_slips(state: ChassisState, steer: float, params: VehicleParams,
                  eps_v: float) -> Slips:
    """
    Per-corner wheel-frame velocities, longitudinal slip and slip angle.

    Corner velocities come from rigid-body transport of (vx, vy, yaw_rate);
    the front corners are rotated by -steer into the wheel frame.

    Longitudinal slip is (r·omega - v) / max(r·omega, v, eps_v), scaled by
    min(max(r·omega, v) / (2·eps_v), 1) so it fades to zero at standstill.
    A locked wheel therefore reads exactly -1 only once its corner speed
    reaches 2·eps_v. Between eps_v and 2·eps_v it reads -v / (2·eps_v), and
    -v² / (2·eps_v²) below eps_v.
    """
    return _slips(state.vx, state.vy, state.yaw_rate, state.omega, steer, params, eps_v)


def sideslip_angle(vx, vy, eps_v: float = 0.5):
    """Body side-slip angle arctan(vy / max(vx, eps_v))"""
    return np.arctan(np.asarray(vy, dtype=float) / np.maximum(np.asarray(vx, dtype=float), eps_v))


def _loads(params: VehicleParams, ax: float, ay: float,
           diagnostics: Optional[Diagnostics]) -> np.ndarray:
    L = params.wheelbase
    h = params.cg_height
    m = params.mass
    dx = m * ax * h / (2.0 * L)
    dyf = m * (params.lr / L) * ay * h / params.track
    dyr = m * (params.lf / L) * ay * h / params.track
    fz = params.static_loads + np.array([-dx - dyf, -dx + dyf, dx - dyr, dx + dyr])
    if np.any(fz < 0):
        clamped = int(np.count_nonzero(fz < 0))
        if diagnostics is not None:
            diagnostics.load_clamps += clamped
        if logger.is_debug():
            logger.debug(f"Clamped {clamped} negative wheel load(s) at ax={ax:.3f}, ay={ay:.3f}")
        fz = np.maximum(fz, 0.0)
    return fz


def vertical_loads(params: VehicleParams, ax: float, ay: float,
                   diagnostics: Optional[Diagnostics] = None) -> np.ndarray:
    """
    Quasi-static wheel loads with longitudinal and per-axle lateral transfer.

    Positive ax unloads the front axle; positive (leftward) ay unloads the
    left corners. Negative loads are clamped to zero and counted.

    Returns:
        Loads fl, fr, rl, rr in N
    """
    return _loads(params, float(ax), float(ay), diagnostics)


def _body_forces(fx: np.ndarray, fy: np.ndarray, steer: float):
    if steer == 0.0:
        return fx, fy
    cos_d, sin_d = math.cos(steer), math.sin(steer)
    fxb = np.concatenate((fx[:2] * cos_d - fy[:2] * sin_d, fx[2:]))
    fyb = np.concatenate((fx[:2] * sin_d + fy[:2] * cos_d, fy[2:]))
    return fxb, fyb


def chassis_totals(fx: np.ndarray, fy: np.ndarray, steer: float,
                   params: VehicleParams) -> Tuple[float, float, float]:
    """Total longitudinal force, lateral force and yaw moment on the chassis"""
    fxb, fyb = _body_forces(fx, fy, steer)
    fx_total = float(np.sum(fxb))
    fy_total = float(np.sum(fyb))
    mz = float(np.sum(params.corner_x * fyb - params.corner_y * fxb))
    return fx_total, fy_total, mz


def chassis_derivatives(state: ChassisState, forces: CornerForces, steer: float,
                        params: VehicleParams) -> Tuple[float, float, float]:
    """
    Planar chassis dynamics.

    Returns:
        (dvx/dt, dvy/dt, dyaw_rate/dt)
    """
    fx_total, fy_total, mz = chassis_totals(forces.fx, forces.fy, steer, params)
    return (fx_total / params.mass + state.vy * state.yaw_rate,
            fy_total / params.mass - state.vx * state.yaw_rate,
            mz / params.yaw_inertia)


def _torques(pressure: np.ndarray, engine_torque: float, gear: float,
             params: VehicleParams) -> Tuple[np.ndarray, np.ndarray]:
    if np.any(pressure < 0):
        raise ConfigurationError(f"brake pressure must be >= 0 (got {pressure})")
    brake = params.brake_gain * pressure
    drive = engine_torque * params.gear_ratio(gear) / 2.0
    return brake, np.array([0.0, 0.0, drive, drive])


def wheel_torques(inputs: DriverInputs, params: VehicleParams) -> Tuple[np.ndarray, np.ndarray]:
    """
    Brake and traction torque per corner (open 50/50 rear split).

    Raises:
        ConfigurationError: unknown gear or negative brake pressure
    """
    return _torques(inputs.brake_pressure, float(inputs.engine_torque), inputs.gear, params)


# =============================================================================
# Integration
# =============================================================================

class StepResult(NamedTuple):
    x: np.ndarray          # chassis state (7)
    aux: Optional[np.ndarray]  # plant lag/filter state (10) or None
    y: np.ndarray          # ax, ay, yaw_rate, omega x4
    z: np.ndarray          # model forces fx x4, fy x4 (without offsets)
    fz: np.ndarray


def _substep(x: np.ndarray, aux: Optional[np.ndarray], steer: float,
             brake: np.ndarray, drive: np.ndarray, params: VehicleParams,
             tires: TireCoeffs, plant: Optional[PlantParams], offsets: Optional[np.ndarray],
             h: float, diagnostics: Optional[Diagnostics]):
    """One forward-Euler sub-step shared by the benchmark and the plant"""
    vx, vy, yaw_rate = x[0], x[1], x[2]
    omega = x[3:7]
    slips = _slips(vx, vy, yaw_rate, omega, steer, params, tires.eps_v)
    shape_x = _magic_shape(slips.long_slip, tires.longitudinal)
    shape_y = _magic_shape(slips.slip_angle, tires.lateral)

    use_filter = plant is not None and plant.load_filter_hz is not None
    if use_filter:
        fz = _loads(params, aux[8], aux[9], diagnostics)
    else:
        # Single fixed-point pass: static loads -> accelerations -> loads
        fz0 = params.static_loads
        fx0 = fz0 * tires.d_x * shape_x
        fy0 = -(fz0 * tires.d_y * shape_y)
        if offsets is not None:
            fx0 = fx0 + offsets[:4]
            fy0 = fy0 + offsets[4:]
        fx_total, fy_total, _ = chassis_totals(fx0, fy0, steer, params)
        fz = _loads(params, fx_total / params.mass, fy_total / params.mass, diagnostics)

    fx = fz * tires.d_x * shape_x
    fy = -(fz * tires.d_y * shape_y)

    aux_next = None
    if plant is not None:
        if plant.friction_ellipse:
            cap = tires.d_x * fz
            usage = np.divide(fx, cap, out=np.zeros(4), where=cap > 0)
            fy = fy * np.sqrt(np.maximum(0.0, 1.0 - usage * usage))
        if plant.relaxation_length > 0:
            lag = aux[:8]
            gain = 1.0 - np.exp(-h * np.maximum(np.abs(slips.vx_wheel), tires.eps_v)
                                / plant.relaxation_length)
            target = np.concatenate((fx, fy))
            lag_next = lag + np.concatenate((gain, gain)) * (target - lag)
            fx, fy = lag[:4].copy(), lag[4:].copy()
        else:
            lag_next = np.concatenate((fx, fy))
        aux_next = np.empty(N_AUX)
        aux_next[:8] = lag_next

    fx_model, fy_model = fx, fy
    if offsets is not None:
        fx = fx + offsets[:4]
        fy = fy + offsets[4:]

    fx_total, fy_total, mz = chassis_totals(fx, fy, steer, params)
    ax = fx_total / params.mass
    ay = fy_total / params.mass

    x_next = np.empty(N_CHASSIS)
    x_next[0] = vx + h * (ax + vy * yaw_rate)
    x_next[1] = vy + h * (ay - vx * yaw_rate)
    x_next[2] = yaw_rate + h * (mz / params.yaw_inertia)
    omega_dot = (drive - brake - params.radii * fx) / params.wheel_inertia
    x_next[3:7] = np.maximum(omega + h * omega_dot, 0.0)

    if aux_next is not None:
        if use_filter:
            blend = 1.0 - math.exp(-2.0 * math.pi * plant.load_filter_hz * h)
            aux_next[8] = aux[8] + blend * (ax - aux[8])
            aux_next[9] = aux[9] + blend * (ay - aux[9])
        else:
            aux_next[8] = ax
            aux_next[9] = ay

    if diagnostics is not None:
        diagnostics.substeps += 1
    return x_next, aux_next, ax, ay, np.concatenate((fx_model, fy_model)), fz


def _check_finite(x: np.ndarray, aux: Optional[np.ndarray], time: Optional[float]):
    channel = first_non_finite(x, list(STATE_LABELS))
    if channel is None and aux is not None:
        channel = first_non_finite(aux, list(PLANT_AUX_LABELS))
    if channel is not None:
        raise IntegrationError(channel, time)


def advance(x: np.ndarray, u: np.ndarray, params: VehicleParams, tires: TireCoeffs,
            dt: float, substeps: int = 1, aux: Optional[np.ndarray] = None,
            plant: Optional[PlantParams] = None, offsets: Optional[np.ndarray] = None,
            diagnostics: Optional[Diagnostics] = None,
            time: Optional[float] = None) -> StepResult:
    """
    Array-level model step used by the predictors and the data generator.

    The plant's extra effects apply when `plant` is given (with `aux` holding
    its lag/filter states). Forces and accelerations are those of the first
    sub-step; yaw rate and wheel speeds in `y` are post-step values.

    Args:
        x: Chassis state (vx, vy, yaw_rate, omega x4)
        u: Inputs (steer, pb x4, engine_torque, gear)
        dt: Sample period in s; dt = 0 evaluates outputs without moving the state
        substeps: Forward-Euler sub-steps per sample
        offsets: Additive force offsets (fx x4, fy x4) applied to the tire forces

    Raises:
        IntegrationError: non-finite state after the step
    """
    if dt < 0 or not np.isfinite(dt):
        raise ConfigurationError(f"dt must be finite and >= 0 (got {dt})")
    if substeps < 1:
        raise ConfigurationError("substeps must be >= 1")
    if plant is not None and plant.is_benchmark_equivalent:
        plant_model = None
    else:
        plant_model = plant
    if plant_model is not None and aux is None:
        aux = np.zeros(N_AUX)

    steer = float(u[0])
    brake, drive = _torques(u[1:5], float(u[5]), u[6], params)
    h = dt / substeps

    x_cur = np.asarray(x, dtype=float)
    aux_cur = aux
    first = None
    for _ in range(substeps):
        x_cur, aux_next, ax, ay, z, fz = _substep(
            x_cur, aux_cur, steer, brake, drive, params, tires, plant_model,
            offsets, h, diagnostics,
        )
        if first is None:
            first = (ax, ay, z, fz)
        aux_cur = aux_next if plant_model is not None else None

    if plant is not None and plant_model is None:
        # Benchmark-equivalent plant: carry the first sub-step forces/accelerations
        aux_cur = np.concatenate((first[2], [first[0], first[1]]))

    _check_finite(x_cur, aux_cur, time)
    ax, ay, z, fz = first
    y = np.concatenate(([ax, ay], x_cur[2:7]))
    return StepResult(x_cur, aux_cur, y, z, fz)


def step_benchmark(state: ChassisState, inputs: DriverInputs, params: VehicleParams,
                   tires: TireCoeffs, dt: float, substeps: int = 1,
                   force_offsets: Optional[np.ndarray] = None,
                   diagnostics: Optional[Diagnostics] = None
                   ) -> Tuple[ChassisState, MeasuredOutputs, CornerForces]:
    """
    Advance the benchmark double-track model by one sample.

    Returns:
        (next state, outputs, model corner forces)
    """
    if dt <= 0:
        raise ConfigurationError(f"dt must be > 0 (got {dt})")
    result = advance(state.to_array(), inputs.to_array(), params, tires, dt,
                     substeps=substeps, offsets=force_offsets, diagnostics=diagnostics)
    return (ChassisState.from_array(result.x), MeasuredOutputs.from_array(result.y),
            CornerForces(result.z[:4].copy(), result.z[4:].copy(), result.fz))


def step_plant(state: PlantState, inputs: DriverInputs, plant: PlantParams, dt: float,
               substeps: int = 1, force_offsets: Optional[np.ndarray] = None,
               diagnostics: Optional[Diagnostics] = None
               ) -> Tuple[PlantState, MeasuredOutputs, CornerForces]:
    """Advance the plant model by one sample (same interface as step_benchmark)"""
    if dt <= 0:
        raise ConfigurationError(f"dt must be > 0 (got {dt})")
    aux = np.concatenate((state.lag, state.filt))
    result = advance(state.chassis.to_array(), inputs.to_array(), plant.vehicle, plant.tires,
                     dt, substeps=substeps, aux=aux, plant=plant, offsets=force_offsets,
                     diagnostics=diagnostics)
    next_state = PlantState(ChassisState.from_array(result.x), result.aux[:8], result.aux[8:])
    return (next_state, MeasuredOutputs.from_array(result.y),
            CornerForces(result.z[:4].copy(), result.z[4:].copy(), result.fz))


def evaluate_outputs(x: np.ndarray, u: np.ndarray, params: VehicleParams, tires: TireCoeffs,
                     aux: Optional[np.ndarray] = None, plant: Optional[PlantParams] = None,
                     offsets: Optional[np.ndarray] = None) -> StepResult:
    """Outputs and forces at a state without moving it (a zero-length step)"""
    return advance(x, u, params, tires, 0.0, substeps=1, aux=aux, plant=plant, offsets=offsets)
