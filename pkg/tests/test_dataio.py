"""Dataset persistence, schema checks, noise and scenario-driven generation"""

import os

import numpy as np
import pytest

from src.dataio import (
    MEASUREMENT_CHANNELS,
    ROLE_DEPLOYMENT,
    TRUTH_CHANNELS,
    Dataset,
    NoiseSpec,
    ScenarioSpec,
    add_noise,
    generate_dataset,
    load_dataset,
    save_dataset,
)
from src.dynamics import CORNERS, INPUT_LABELS
from src.errors import (
    ConfigurationError,
    EmptyDatasetError,
    InconsistentLengthError,
    MalformedRowError,
    MissingChannelError,
)

SCENARIO_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                            "config", "scenarios")


def _copy(dataset, frame=None):
    return Dataset(dataset.dt, dataset.frame.copy() if frame is None else frame,
                   dict(dataset.metadata))


# =============================================================================
# Persistence
# =============================================================================

def test_save_and_load_preserve_every_value(noisy_dataset, tmp_path):
    path = tmp_path / "lap.csv"
    save_dataset(noisy_dataset, str(path))
    loaded = load_dataset(str(path))
    assert loaded.equals(noisy_dataset)
    assert loaded.role == "training"
    assert loaded.name == "short"


def test_hash_inside_data_rows_is_not_a_comment(noisy_dataset, tmp_path):
    frame = noisy_dataset.frame.copy()
    frame["note"] = "lap #3"
    path = tmp_path / "lap.csv"
    save_dataset(_copy(noisy_dataset, frame), str(path))
    loaded = load_dataset(str(path))
    assert (loaded.frame["note"] == "lap #3").all()
    np.testing.assert_array_equal(loaded.channel("vx"), noisy_dataset.channel("vx"))
    assert loaded.metadata == noisy_dataset.metadata


def test_file_starts_with_metadata_and_time_column(noisy_dataset, tmp_path):
    path = tmp_path / "lap.csv"
    save_dataset(noisy_dataset, str(path))
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("# ")
    header = next(line for line in lines if not line.startswith("#"))
    assert header.split(",")[0] == "t"


def test_missing_truth_channel_is_named(noisy_dataset, tmp_path):
    path = tmp_path / "lap.csv"
    save_dataset(_copy(noisy_dataset, noisy_dataset.frame.drop(columns=["omega_rr"])), str(path))
    with pytest.raises(MissingChannelError) as excinfo:
        load_dataset(str(path))
    assert excinfo.value.channel == "omega_rr"
    assert "omega_rr" in str(excinfo.value)


def test_deployment_data_needs_no_truth(noisy_dataset, tmp_path):
    path = tmp_path / "lap.csv"
    deployment = noisy_dataset.frame.drop(columns=list(TRUTH_CHANNELS))
    save_dataset(_copy(noisy_dataset, deployment), str(path))
    loaded = load_dataset(str(path), role=ROLE_DEPLOYMENT)
    assert loaded.n_samples == noisy_dataset.n_samples
    with pytest.raises(MissingChannelError):
        loaded.validate_role("training")


def test_header_only_file_is_empty(tmp_path):
    path = tmp_path / "empty.csv"
    columns = ("t",) + INPUT_LABELS + MEASUREMENT_CHANNELS
    path.write_text("# dt: 0.01\n" + ",".join(columns) + "\n", encoding="utf-8")
    with pytest.raises(EmptyDatasetError):
        load_dataset(str(path), role=ROLE_DEPLOYMENT)


def test_short_channel_is_reported(noisy_dataset, tmp_path):
    frame = noisy_dataset.frame.copy()
    frame.loc[frame.index[-3:], "vx"] = np.nan
    path = tmp_path / "lap.csv"
    save_dataset(_copy(noisy_dataset, frame), str(path))
    with pytest.raises(InconsistentLengthError) as excinfo:
        load_dataset(str(path))
    assert excinfo.value.channel == "vx"


def test_malformed_value_is_located(noisy_dataset, tmp_path):
    frame = noisy_dataset.frame.copy()
    frame["vy"] = frame["vy"].astype(object)
    frame.loc[frame.index[10], "vy"] = "n/a?"
    path = tmp_path / "lap.csv"
    save_dataset(_copy(noisy_dataset, frame), str(path))
    with pytest.raises(MalformedRowError) as excinfo:
        load_dataset(str(path))
    assert excinfo.value.column == "vy"
    assert excinfo.value.row == 10


def test_dataset_requires_time_column(noisy_dataset):
    with pytest.raises(MissingChannelError):
        Dataset(0.01, noisy_dataset.frame.drop(columns=["t"]))


# =============================================================================
# Noise
# =============================================================================

def test_add_noise_statistics():
    noisy = add_noise(np.zeros(100_000), 0.1, seed=123)
    assert 0.099 <= np.std(noisy) <= 0.101
    assert abs(np.mean(noisy)) < 0.002


def test_add_noise_bias_and_determinism():
    clean = np.linspace(0.0, 1.0, 1000)
    first = add_noise(clean, 0.05, bias=0.2, seed=7)
    second = add_noise(clean, 0.05, bias=0.2, seed=7)
    np.testing.assert_array_equal(first, second)
    assert np.mean(first - clean) == pytest.approx(0.2, abs=0.01)
    with pytest.raises(ConfigurationError):
        add_noise(clean, -1.0)


def test_noise_spec_expands_wheel_speed_key():
    spec = NoiseSpec.from_dict({"channels": {"omega": 0.3, "ax": {"sigma": 0.1, "bias": 0.05}},
                                "seed": 5})
    assert all(spec.channels[f"omega_{c}"].sigma == 0.3 for c in CORNERS)
    assert spec.channels["ax"].bias == 0.05
    assert spec.seed == 5
    with pytest.raises(ConfigurationError):
        NoiseSpec.from_dict({"channels": {"vx": 0.1}})


def test_zero_noise_measurements_equal_truth(clean_dataset):
    for label in ("yaw_rate",) + tuple(f"omega_{c}" for c in CORNERS):
        np.testing.assert_array_equal(clean_dataset.channel(f"meas_{label}"),
                                      clean_dataset.channel(label))


def test_noisy_and_clean_share_ground_truth(clean_dataset, noisy_dataset):
    for name in TRUTH_CHANNELS:
        np.testing.assert_array_equal(clean_dataset.channel(name), noisy_dataset.channel(name))
    assert not np.array_equal(clean_dataset.channel("meas_ax"), noisy_dataset.channel("meas_ax"))


# =============================================================================
# Generation
# =============================================================================

def test_generation_is_deterministic(plant, make_scenario):
    scenario = make_scenario(duration=1.0)
    first = generate_dataset(scenario, plant, NoiseSpec.default(), seed=3)
    second = generate_dataset(scenario, plant, NoiseSpec.default(), seed=3)
    assert first.equals(second)
    other = generate_dataset(scenario, plant, NoiseSpec.default(), seed=4)
    assert not np.array_equal(first.channel("meas_ax"), other.channel("meas_ax"))


def test_generated_grid_and_metadata(clean_dataset):
    assert clean_dataset.n_samples == 301
    np.testing.assert_allclose(np.diff(clean_dataset.time), 0.01, atol=1e-12)
    assert clean_dataset.metadata["seed"] == 1
    assert clean_dataset.metadata["substeps"] == 10
    clean_dataset.validate_role("training")


def test_generated_run_brakes_and_turns(clean_dataset):
    vx = clean_dataset.channel("vx")
    t = clean_dataset.time
    assert vx[np.searchsorted(t, 2.0)] < vx[np.searchsorted(t, 1.2)]
    assert np.max(clean_dataset.channel("yaw_rate")) > 0.0
    assert np.min(clean_dataset.channel("fx_fl")) < 0.0


def test_scenario_axle_aliases_and_default_gear():
    scenario = ScenarioSpec.from_dict({
        "name": "alias",
        "duration": 2.0,
        "initial_speed": 10.0,
        "profiles": {"pb_front": {"points": [[0.0, 0.0], [1.0, 30.0]]}, "engine_torque": 50.0},
    })
    schedule = scenario.input_schedule(np.array([0.0, 0.5, 1.0]))
    fl, fr = INPUT_LABELS.index("pb_fl"), INPUT_LABELS.index("pb_fr")
    np.testing.assert_allclose(schedule[:, fl], [0.0, 15.0, 30.0])
    np.testing.assert_array_equal(schedule[:, fl], schedule[:, fr])
    assert np.all(schedule[:, INPUT_LABELS.index("pb_rl")] == 0.0)
    assert np.all(schedule[:, INPUT_LABELS.index("gear")] == 1.0)
    assert np.all(schedule[:, INPUT_LABELS.index("engine_torque")] == 50.0)


def test_scenario_rejects_unknown_input():
    with pytest.raises(ConfigurationError):
        ScenarioSpec.from_dict({"duration": 1.0, "profiles": {"throttle": 1.0}})


@pytest.mark.parametrize("name", ["training_lap", "test_lap_1", "test_lap_2", "test_lap_3", "test_lap_4"])
def test_bundled_scenarios_load(name):
    scenario = ScenarioSpec.from_file(os.path.join(SCENARIO_DIR, f"{name}.yaml"))
    assert scenario.name == name
    assert scenario.duration >= 50.0
    assert set(scenario.profiles) <= set(INPUT_LABELS)
