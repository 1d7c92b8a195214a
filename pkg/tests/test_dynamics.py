"""Tire, load, slip and chassis model functions of the benchmark vehicle"""

import math

import numpy as np
import pytest

from src.dynamics import (
    ChassisState,
    CornerForces,
    Diagnostics,
    DriverInputs,
    PacejkaCoeffs,
    TireCoeffs,
    VehicleParams,
    advance,
    chassis_derivatives,
    chassis_totals,
    compute_slips,
    pacejka_force,
    sideslip_angle,
    step_benchmark,
    vertical_loads,
    wheel_torques,
)
from src.errors import ConfigurationError, DomainError, IntegrationError

REFERENCE_COEFFS = PacejkaCoeffs(b=10.0, c=1.9, d=1.0, e=0.97)


def _magic(slip, fz, b, c, d, e):
    bs = b * slip
    return fz * d * math.sin(c * math.atan(bs - e * (bs - math.atan(bs))))


def _idle(gear=1):
    return DriverInputs(0.0, np.zeros(4), 0.0, gear)


# =============================================================================
# Tire
# =============================================================================

def test_pacejka_zero_slip_gives_zero_force():
    assert pacejka_force(0.0, 4000.0, REFERENCE_COEFFS) == 0.0


def test_pacejka_reference_point():
    force = pacejka_force(0.1, 4000.0, REFERENCE_COEFFS)
    assert force == pytest.approx(_magic(0.1, 4000.0, 10.0, 1.9, 1.0, 0.97), rel=1e-12)
    assert force == pytest.approx(3823.4, rel=1e-3)


def test_pacejka_is_odd_in_slip():
    forward = pacejka_force(0.07, 4000.0, REFERENCE_COEFFS)
    backward = pacejka_force(-0.07, 4000.0, REFERENCE_COEFFS)
    assert backward == pytest.approx(-forward, rel=1e-14)


def test_pacejka_vectorized_matches_scalar():
    slips = np.array([-0.2, -0.05, 0.0, 0.03, 0.4])
    loads = np.array([1000.0, 2500.0, 3000.0, 4000.0, 5000.0])
    forces = pacejka_force(slips, loads, REFERENCE_COEFFS)
    expected = [pacejka_force(s, f, REFERENCE_COEFFS) for s, f in zip(slips, loads)]
    np.testing.assert_allclose(forces, expected, rtol=1e-14)


def test_pacejka_properties_over_random_inputs():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        coeffs = PacejkaCoeffs(b=rng.uniform(2.0, 20.0), c=rng.uniform(1.0, 2.0),
                               d=rng.uniform(0.5, 1.3), e=rng.uniform(-1.0, 1.0))
        slip = rng.uniform(-1.0, 1.0)
        fz = rng.uniform(0.0, 8000.0)
        force = pacejka_force(slip, fz, coeffs)
        assert abs(force) <= coeffs.d * fz * (1 + 1e-12)
        assert pacejka_force(-slip, fz, coeffs) == pytest.approx(-force, rel=1e-12, abs=1e-9)


@pytest.mark.parametrize("slip, fz", [(float("nan"), 1000.0), (0.1, -1.0), (float("inf"), 10.0)])
def test_pacejka_rejects_invalid_inputs(slip, fz):
    with pytest.raises(DomainError):
        pacejka_force(slip, fz, REFERENCE_COEFFS)


# =============================================================================
# Slips
# =============================================================================

def test_free_rolling_has_no_slip(vehicle):
    slips = compute_slips(ChassisState.rolling(20.0, vehicle), 0.0, vehicle, 0.5)
    np.testing.assert_allclose(slips.long_slip, 0.0, atol=1e-12)
    np.testing.assert_allclose(slips.slip_angle, 0.0, atol=1e-15)


def test_locked_wheels_give_full_brake_slip(vehicle):
    state = ChassisState(20.0, 0.0, 0.0, np.zeros(4))
    slips = compute_slips(state, 0.0, vehicle, 0.5)
    np.testing.assert_array_equal(slips.long_slip, -1.0)


def test_locked_wheel_slip_fades_below_twice_eps_v(vehicle):
    eps_v = 0.5
    at_threshold = compute_slips(ChassisState(2 * eps_v, 0.0, 0.0, np.zeros(4)), 0.0, vehicle, eps_v)
    np.testing.assert_array_equal(at_threshold.long_slip, -1.0)
    creeping = compute_slips(ChassisState(1.6 * eps_v, 0.0, 0.0, np.zeros(4)), 0.0, vehicle, eps_v)
    np.testing.assert_allclose(creeping.long_slip, -0.8, rtol=1e-12)
    crawling = compute_slips(ChassisState(0.5 * eps_v, 0.0, 0.0, np.zeros(4)), 0.0, vehicle, eps_v)
    np.testing.assert_allclose(crawling.long_slip, -0.125, rtol=1e-12)
    standstill = compute_slips(ChassisState(0.0, 0.0, 0.0, np.zeros(4)), 0.0, vehicle, eps_v)
    np.testing.assert_array_equal(standstill.long_slip, 0.0)


def test_slips_follow_rigid_body_transport(vehicle):
    vx, vy, r, delta = 20.0, 0.5, 0.3, 0.05
    omega = np.array([62.0, 63.0, 61.5, 64.0])
    slips = compute_slips(ChassisState(vx, vy, r, omega), delta, vehicle, 0.5)

    half = vehicle.track / 2
    corner_vx = [vx - r * half, vx + r * half, vx - r * half, vx + r * half]
    corner_vy = [vy + r * vehicle.lf, vy + r * vehicle.lf, vy - r * vehicle.lr, vy - r * vehicle.lr]
    for i in range(4):
        wx, wy = corner_vx[i], corner_vy[i]
        if i < 2:
            wx, wy = (wx * math.cos(delta) + wy * math.sin(delta),
                      -wx * math.sin(delta) + wy * math.cos(delta))
        speed = vehicle.radii[i] * omega[i]
        assert slips.vx_wheel[i] == pytest.approx(wx, rel=1e-12)
        assert slips.vy_wheel[i] == pytest.approx(wy, rel=1e-12)
        assert slips.long_slip[i] == pytest.approx((speed - wx) / max(speed, wx), rel=1e-10)
        assert slips.slip_angle[i] == pytest.approx(math.atan(wy / wx), rel=1e-12)


def test_long_slip_stays_within_unit_interval(vehicle):
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(1000):
        state = ChassisState(rng.uniform(0.0, 40.0), rng.uniform(-3.0, 3.0),
                             rng.uniform(-1.0, 1.0), rng.uniform(0.0, 150.0, size=4))
        slips = compute_slips(state, rng.uniform(-0.3, 0.3), vehicle, 0.5)
        rolling = vehicle.radii * state.omega
        valid = (slips.vx_wheel >= 0) & ((rolling >= 0.5) | (slips.vx_wheel >= 0.5))
        assert np.all(np.abs(slips.long_slip[valid]) <= 1.0 + 1e-12)
        checked += int(np.count_nonzero(valid))
    assert checked > 3000


def test_sideslip_angle_saturates_denominator():
    assert sideslip_angle(0.0, 0.5, 0.5) == pytest.approx(math.pi / 4)
    assert sideslip_angle(10.0, 1.0) == pytest.approx(math.atan(0.1))


# =============================================================================
# Vertical loads
# =============================================================================

def test_static_loads_split_by_axle(vehicle):
    loads = vertical_loads(vehicle, 0.0, 0.0)
    weight = vehicle.mass * vehicle.gravity
    front = weight * vehicle.lr / (2 * vehicle.wheelbase)
    rear = weight * vehicle.lf / (2 * vehicle.wheelbase)
    np.testing.assert_allclose(loads, [front, front, rear, rear], rtol=1e-14)


def test_braking_and_left_turn_transfer(plant):
    params = plant.vehicle
    m, h, lf, lr, t, g = 1500.0, 0.45, 1.2, 1.4, 1.6, params.gravity
    ax, ay = -8.0, 5.0
    L = lf + lr
    front, rear = m * g * lr / (2 * L), m * g * lf / (2 * L)
    dx = m * ax * h / (2 * L)
    dyf = m * (lr / L) * ay * h / t
    dyr = m * (lf / L) * ay * h / t
    expected = [front - dx - dyf, front - dx + dyf, rear + dx - dyr, rear + dx + dyr]

    loads = vertical_loads(params, ax, ay)
    np.testing.assert_allclose(loads, expected, rtol=1e-12)
    assert loads[1] > front and loads[2] < rear
    assert np.sum(loads) == pytest.approx(m * g, rel=1e-12)


def test_loads_conserve_weight_without_clamping(vehicle):
    rng = np.random.default_rng(3)
    weight = vehicle.mass * vehicle.gravity
    for _ in range(1000):
        loads = vertical_loads(vehicle, rng.uniform(-8.0, 8.0), rng.uniform(-6.0, 6.0))
        if np.all(loads > 0):
            assert np.sum(loads) == pytest.approx(weight, rel=1e-12)


def test_negative_loads_are_clamped_and_counted(vehicle):
    diagnostics = Diagnostics()
    loads = vertical_loads(vehicle, 0.0, 30.0, diagnostics)
    assert np.all(loads >= 0)
    assert loads[0] == 0.0 and loads[2] == 0.0
    assert diagnostics.load_clamps == 2


# =============================================================================
# Chassis and driveline
# =============================================================================

def test_zero_forces_at_rest_give_zero_derivatives(vehicle):
    state = ChassisState(0.0, 0.0, 0.0, np.zeros(4))
    forces = CornerForces(np.zeros(4), np.zeros(4), vehicle.static_loads)
    assert chassis_derivatives(state, forces, 0.0, vehicle) == (0.0, 0.0, 0.0)


def test_rear_traction_of_half_mass_per_wheel_gives_unit_acceleration(vehicle):
    state = ChassisState(10.0, 0.0, 0.0, np.full(4, 10.0 / 0.32))
    half_mass = vehicle.mass / 2
    forces = CornerForces(np.array([0.0, 0.0, half_mass, half_mass]), np.zeros(4), np.zeros(4))
    dvx, dvy, dr = chassis_derivatives(state, forces, 0.0, vehicle)
    assert dvx == pytest.approx(1.0, rel=1e-14)
    assert dvy == 0.0 and dr == 0.0


def test_steered_forces_rotate_into_body_frame(vehicle):
    delta = 0.1
    fx = np.array([100.0, 200.0, 300.0, 400.0])
    fy = np.array([-1000.0, -1100.0, -900.0, -950.0])
    state = ChassisState(15.0, 0.2, 0.1, np.full(4, 40.0))
    dvx, dvy, dr = chassis_derivatives(state, CornerForces(fx, fy, np.zeros(4)), delta, vehicle)

    c, s = math.cos(delta), math.sin(delta)
    fxb = [fx[0] * c - fy[0] * s, fx[1] * c - fy[1] * s, fx[2], fx[3]]
    fyb = [fx[0] * s + fy[0] * c, fx[1] * s + fy[1] * c, fy[2], fy[3]]
    xs = [vehicle.lf, vehicle.lf, -vehicle.lr, -vehicle.lr]
    ys = [vehicle.track / 2, -vehicle.track / 2, vehicle.track / 2, -vehicle.track / 2]
    mz = sum(xs[i] * fyb[i] - ys[i] * fxb[i] for i in range(4))

    assert dvx == pytest.approx(sum(fxb) / vehicle.mass + 0.2 * 0.1, rel=1e-12)
    assert dvy == pytest.approx(sum(fyb) / vehicle.mass - 15.0 * 0.1, rel=1e-12)
    assert dr == pytest.approx(mz / vehicle.yaw_inertia, rel=1e-12)


def test_drive_torque_splits_over_rear_axle():
    params = VehicleParams(mass=1500, yaw_inertia=2500, lf=1.2, lr=1.4, track=1.6,
                           wheel_radius=0.32, wheel_inertia=1.5, brake_gain=20.0,
                           gear_ratios={1: 3.5})
    inputs = DriverInputs(0.0, np.array([0.0, 0.0, 2.0, 0.0]), 200.0, 1)
    brake, drive = wheel_torques(inputs, params)
    np.testing.assert_allclose(drive, [0.0, 0.0, 350.0, 350.0])
    np.testing.assert_allclose(brake, [0.0, 0.0, 40.0, 0.0])
    assert 2 * drive[2] == pytest.approx(200.0 * 3.5)


def test_wheel_torques_reject_unknown_gear_and_negative_pressure(vehicle):
    with pytest.raises(ConfigurationError):
        wheel_torques(DriverInputs(0.0, np.zeros(4), 100.0, 42), vehicle)
    with pytest.raises(ConfigurationError):
        wheel_torques(DriverInputs(0.0, np.array([-1.0, 0, 0, 0]), 0.0, 1), vehicle)
    for gear in (float("nan"), float("inf"), -3.0):
        with pytest.raises(ConfigurationError):
            vehicle.gear_ratio(gear)


def test_invalid_vehicle_parameters_are_rejected():
    with pytest.raises(ConfigurationError):
        VehicleParams(mass=-1, yaw_inertia=2500, lf=1.2, lr=1.4, track=1.6, wheel_radius=0.32,
                      wheel_inertia=1.5, brake_gain=20.0, gear_ratios={1: 10.0})
    with pytest.raises(ConfigurationError):
        TireCoeffs(b_x=0.0, c_x=1.6, d_x=1.0, e_x=0.0, b_y=9.0, c_y=1.4, d_y=1.0, e_y=0.0)


# =============================================================================
# Step
# =============================================================================

def test_rest_is_an_equilibrium(vehicle, tires):
    state = ChassisState(0.0, 0.0, 0.0, np.zeros(4))
    next_state, outputs, forces = step_benchmark(state, _idle(), vehicle, tires, 0.01)
    np.testing.assert_array_equal(next_state.to_array(), np.zeros(7))
    assert outputs.ax == 0.0 and outputs.ay == 0.0
    np.testing.assert_array_equal(forces.to_array(), np.zeros(8))


def test_single_substep_composes_model_functions(vehicle, tires):
    state = ChassisState(18.0, 0.3, 0.2, np.array([57.0, 56.0, 58.5, 57.5]))
    inputs = DriverInputs(0.04, np.array([5.0, 5.0, 0.0, 0.0]), 150.0, 2)
    dt = 0.01

    slips = compute_slips(state, inputs.steer, vehicle, tires.eps_v)

    def forces_at(loads):
        fx = pacejka_force(slips.long_slip, loads, tires.longitudinal)
        fy = -pacejka_force(slips.slip_angle, loads, tires.lateral)
        return fx, fy

    fx0, fy0 = forces_at(vehicle.static_loads)
    fx_total, fy_total, _ = chassis_totals(fx0, fy0, inputs.steer, vehicle)
    loads = vertical_loads(vehicle, fx_total / vehicle.mass, fy_total / vehicle.mass)
    fx, fy = forces_at(loads)
    dvx, dvy, dr = chassis_derivatives(state, CornerForces(fx, fy, loads), inputs.steer, vehicle)
    brake, drive = wheel_torques(inputs, vehicle)
    omega_dot = (drive - brake - vehicle.radii * fx) / vehicle.wheel_inertia

    next_state, outputs, forces = step_benchmark(state, inputs, vehicle, tires, dt)
    assert next_state.vx == pytest.approx(state.vx + dt * dvx, rel=1e-12)
    assert next_state.vy == pytest.approx(state.vy + dt * dvy, rel=1e-12)
    assert next_state.yaw_rate == pytest.approx(state.yaw_rate + dt * dr, rel=1e-12)
    np.testing.assert_allclose(next_state.omega, state.omega + dt * omega_dot, rtol=1e-12)
    np.testing.assert_allclose(forces.fx, fx, rtol=1e-12)
    np.testing.assert_allclose(forces.fy, fy, rtol=1e-12)
    np.testing.assert_allclose(forces.fz, loads, rtol=1e-12)
    assert outputs.yaw_rate == next_state.yaw_rate
    np.testing.assert_array_equal(outputs.omega, next_state.omega)


def test_reported_accelerations_match_first_substep_forces(vehicle, tires):
    rng = np.random.default_rng(5)
    for _ in range(1000):
        x = np.concatenate(([rng.uniform(1.0, 35.0), rng.uniform(-1.0, 1.0), rng.uniform(-0.5, 0.5)],
                            rng.uniform(0.0, 110.0, size=4)))
        u = np.array([rng.uniform(-0.1, 0.1), 0.0, 0.0, 0.0, 0.0, rng.uniform(0.0, 200.0), 3.0])
        result = advance(x, u, vehicle, tires, 0.01, substeps=4)
        fx_total, fy_total, _ = chassis_totals(result.z[:4], result.z[4:], u[0], vehicle)
        assert result.y[0] == fx_total / vehicle.mass
        assert result.y[1] == fy_total / vehicle.mass


def test_force_offsets_shift_applied_forces(vehicle, tires):
    state = ChassisState.rolling(15.0, vehicle)
    offsets = np.array([100.0, 100.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    plain = step_benchmark(state, _idle(), vehicle, tires, 0.01)
    shifted = step_benchmark(state, _idle(), vehicle, tires, 0.01, force_offsets=offsets)
    assert shifted[0].vx > plain[0].vx


def test_step_is_deterministic(vehicle, tires):
    state = ChassisState(12.0, 0.1, 0.05, np.full(4, 37.0))
    inputs = DriverInputs(0.02, np.zeros(4), 80.0, 2)
    first = step_benchmark(state, inputs, vehicle, tires, 0.01, substeps=10)
    second = step_benchmark(state, inputs, vehicle, tires, 0.01, substeps=10)
    np.testing.assert_array_equal(first[0].to_array(), second[0].to_array())
    np.testing.assert_array_equal(first[1].to_array(), second[1].to_array())


def test_diagnostics_count_substeps(vehicle, tires):
    diagnostics = Diagnostics()
    step_benchmark(ChassisState.rolling(10.0, vehicle), _idle(), vehicle, tires, 0.01,
                   substeps=10, diagnostics=diagnostics)
    assert diagnostics.substeps == 10


def test_non_finite_state_raises_integration_error(vehicle, tires):
    state = ChassisState(float("nan"), 0.0, 0.0, np.full(4, 30.0))
    with pytest.raises(IntegrationError) as excinfo:
        step_benchmark(state, _idle(), vehicle, tires, 0.01)
    assert excinfo.value.channel == "vx"


def test_non_positive_dt_is_rejected(vehicle, tires):
    with pytest.raises(ConfigurationError):
        step_benchmark(ChassisState.rolling(10.0, vehicle), _idle(), vehicle, tires, 0.0)
