"""Shared fixtures: parameter sets, short generated datasets, a loopback xbridge server"""

import os

import numpy as np
import pytest

from src.dataio import NoiseSpec, Profile, ScenarioSpec, generate_dataset
from src.dynamics import PlantParams, load_plant_file, load_vehicle_file
from src.observer import BenchmarkPredictor, ObserverConfig
from src.xbridge import start_loopback

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIG_DIR = os.path.join(ROOT, "config")
BENCHMARK_FILE = os.path.join(CONFIG_DIR, "vehicle_benchmark.yaml")
PLANT_FILE = os.path.join(CONFIG_DIR, "vehicle_plant.yaml")
OBSERVER_BENCHMARK = os.path.join(CONFIG_DIR, "observer_benchmark.yaml")
OBSERVER_PLANT = os.path.join(CONFIG_DIR, "observer_plant.yaml")
SCENARIO_DIR = os.path.join(CONFIG_DIR, "scenarios")


@pytest.fixture(scope="session")
def benchmark_params():
    return load_vehicle_file(BENCHMARK_FILE)


@pytest.fixture(scope="session")
def vehicle(benchmark_params):
    return benchmark_params[0]


@pytest.fixture(scope="session")
def tires(benchmark_params):
    return benchmark_params[1]


@pytest.fixture(scope="session")
def plant():
    return load_plant_file(PLANT_FILE)


@pytest.fixture(scope="session")
def bare_plant(plant):
    """Plant with every extra effect switched off"""
    return PlantParams(plant.vehicle, plant.tires, relaxation_length=0.0,
                       load_filter_hz=None, friction_ellipse=False)


@pytest.fixture(scope="session")
def benchmark_config():
    return ObserverConfig.from_file(OBSERVER_BENCHMARK)


@pytest.fixture(scope="session")
def plant_config():
    return ObserverConfig.from_file(OBSERVER_PLANT)


def short_scenario(duration: float = 3.0, name: str = "short") -> ScenarioSpec:
    """Throttle, brake and a steer ramp within a few seconds"""
    return ScenarioSpec(
        name=name,
        duration=duration,
        initial_speed=15.0,
        profiles={
            "gear": Profile.constant(2.0),
            "engine_torque": Profile(np.array([0.0, 1.0, 1.2, duration]),
                                     np.array([120.0, 120.0, 0.0, 0.0])),
            "pb_fl": Profile(np.array([0.0, 1.2, 1.4, 2.0, 2.2]), np.array([0.0, 0.0, 20.0, 20.0, 0.0])),
            "pb_fr": Profile(np.array([0.0, 1.2, 1.4, 2.0, 2.2]), np.array([0.0, 0.0, 20.0, 20.0, 0.0])),
            "steer": Profile(np.array([0.0, 0.5, 1.5, duration]), np.array([0.0, 0.0, 0.03, 0.03])),
        },
    )


@pytest.fixture(scope="session")
def clean_dataset(plant):
    return generate_dataset(short_scenario(), plant, NoiseSpec.zero(), seed=1)


@pytest.fixture(scope="session")
def noisy_dataset(plant):
    return generate_dataset(short_scenario(), plant, NoiseSpec.default(), seed=1)


@pytest.fixture
def loopback(benchmark_params):
    """Loopback server wrapping the benchmark model; yields its address"""
    params, tire = benchmark_params
    address, server = start_loopback(BenchmarkPredictor(params, tire, 0.01, 10))
    yield address
    server.shutdown()
    server.server_close()


@pytest.fixture
def make_scenario():
    return short_scenario
