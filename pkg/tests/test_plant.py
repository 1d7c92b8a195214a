"""Plant model: extra effects on top of the benchmark and physical sanity"""

import numpy as np
import pytest

from src.dynamics import (
    N_AUX,
    ChassisState,
    DriverInputs,
    PlantParams,
    PlantState,
    advance,
    evaluate_outputs,
    step_benchmark,
    step_plant,
)


def test_bare_plant_degenerates_to_benchmark(bare_plant):
    assert bare_plant.is_benchmark_equivalent
    state = ChassisState(16.0, 0.2, 0.15, np.array([49.0, 50.5, 50.0, 51.0]))
    inputs = DriverInputs(0.03, np.array([4.0, 4.0, 1.0, 1.0]), 90.0, 2)

    plant_state = PlantState(state)
    bench_state = state
    for _ in range(50):
        plant_state, plant_out, plant_forces = step_plant(plant_state, inputs, bare_plant, 0.01, 10)
        bench_state, bench_out, bench_forces = step_benchmark(
            bench_state, inputs, bare_plant.vehicle, bare_plant.tires, 0.01, 10)
        np.testing.assert_allclose(plant_state.chassis.to_array(), bench_state.to_array(),
                                   rtol=0, atol=1e-12)
        np.testing.assert_allclose(plant_out.to_array(), bench_out.to_array(), rtol=0, atol=1e-12)
        np.testing.assert_allclose(plant_forces.to_array(), bench_forces.to_array(),
                                   rtol=0, atol=1e-12)


def test_rest_is_an_equilibrium_of_the_plant(plant):
    state = PlantState(ChassisState(0.0, 0.0, 0.0, np.zeros(4)))
    inputs = DriverInputs(0.0, np.zeros(4), 0.0, 1)
    next_state, outputs, _ = step_plant(state, inputs, plant, 0.01, 10)
    np.testing.assert_array_equal(next_state.to_array(), np.zeros(17))
    assert outputs.ax == 0.0 and outputs.ay == 0.0


def test_relaxation_delays_force_build_up(plant):
    no_lag = PlantParams(plant.vehicle, plant.tires, relaxation_length=0.0,
                         load_filter_hz=plant.load_filter_hz, friction_ellipse=True)
    x = np.concatenate(([15.0, 0.0, 0.0], np.full(4, 15.0 / 0.32)))
    u = np.array([0.05, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0])
    lagged = advance(x, u, plant.vehicle, plant.tires, 0.01, 10, aux=np.zeros(N_AUX), plant=plant)
    direct = advance(x, u, plant.vehicle, plant.tires, 0.01, 10, aux=np.zeros(N_AUX), plant=no_lag)
    # Lag states start at zero, so the first applied lateral force is zero
    assert np.all(lagged.z[4:6] == 0.0)
    assert np.all(np.abs(direct.z[4:6]) > 0.0)
    assert abs(lagged.x[1]) < abs(direct.x[1])


def test_friction_ellipse_caps_combined_force(plant):
    params = PlantParams(plant.vehicle, plant.tires, relaxation_length=0.0,
                         load_filter_hz=None, friction_ellipse=True)
    x = np.concatenate(([15.0, 0.5, 0.2], [45.0, 45.0, 60.0, 60.0]))
    u = np.array([0.05, 0.0, 0.0, 0.0, 0.0, 300.0, 1.0])
    result = evaluate_outputs(x, u, params.vehicle, params.tires, aux=np.zeros(N_AUX), plant=params)
    fx, fy = result.z[:4], result.z[4:]
    cap_x = params.tires.d_x * result.fz
    cap_y = params.tires.d_y * result.fz
    usage = (fx / cap_x) ** 2 + (fy / cap_y) ** 2
    assert np.all(usage <= 1.0 + 1e-12)


def test_steady_state_cornering_satisfies_kinematics(plant):
    x = ChassisState.rolling(15.0, plant.vehicle).to_array()
    aux = np.zeros(N_AUX)
    u = np.array([0.02, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0])
    for _ in range(1000):
        result = advance(x, u, plant.vehicle, plant.tires, 0.01, 10, aux=aux, plant=plant)
        x, aux = result.x, result.aux
    outputs = evaluate_outputs(x, u, plant.vehicle, plant.tires, aux=aux, plant=plant)
    vx, yaw_rate = x[0], x[2]
    assert yaw_rate > 0.0
    assert outputs.y[1] == pytest.approx(vx * yaw_rate, rel=0.01)


def test_plant_step_is_deterministic(plant):
    state = PlantState(ChassisState.rolling(20.0, plant.vehicle))
    inputs = DriverInputs(0.02, np.zeros(4), 150.0, 3)
    first = step_plant(state, inputs, plant, 0.01, 10)
    second = step_plant(state, inputs, plant, 0.01, 10)
    np.testing.assert_array_equal(first[0].to_array(), second[0].to_array())
    np.testing.assert_array_equal(first[1].to_array(), second[1].to_array())
