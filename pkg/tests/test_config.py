import pytest

from splinefusion.config import (
    RunConfig,
    SensorFlags,
    SimulateConfig,
    load_config,
    save_config,
)
from splinefusion.errors import DataError, InvalidArgumentError


def test_defaults_roundtrip():
    cfg = RunConfig()
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
    assert RunConfig.from_dict(None) == cfg
    assert RunConfig.default_dict() == cfg.to_dict()


def test_unknown_keys_rejected():
    with pytest.raises(DataError, match="unknown config keys"):
        RunConfig.from_dict({"speling": 1})
    with pytest.raises(DataError, match="unknown keys"):
        RunConfig.from_dict({"ct": {"spline_ordre": 6}})
    with pytest.raises(DataError, match="noise"):
        RunConfig.from_dict({"noise": {"pixel_sgima": 1.0}})


def test_partial_overrides():
    cfg = RunConfig.from_dict(
        {"mode": "dt", "noise": {"gps_sigma": 0.02},
         "simulate": {"duration": 8.0}}
    )
    assert cfg.mode == "dt"
    assert cfg.noise.gps_sigma == 0.02
    assert cfg.noise.pixel_sigma == 1.0  # untouched default
    assert cfg.simulate.duration == 8.0


def test_estimator_config_applies_sensor_flags():
    cfg = RunConfig.from_dict({"sensors": {"gps": False}})
    ct = cfg.estimator_config("ct")
    assert ct.use_gps is False and ct.use_cam is True and ct.use_imu is True
    dt = cfg.estimator_config("dt")
    assert dt.use_gps is False


def test_validation_errors():
    with pytest.raises(InvalidArgumentError):
        RunConfig(mode="ekf")
    with pytest.raises(InvalidArgumentError):
        RunConfig(align="icp")
    with pytest.raises(InvalidArgumentError):
        SimulateConfig(profile="spiral")
    with pytest.raises(InvalidArgumentError):
        SimulateConfig(duration=2.0)
    with pytest.raises(InvalidArgumentError):
        SensorFlags(camera=True, imu=False, gps=False)


def test_yaml_roundtrip(tmp_path):
    cfg = RunConfig.from_dict(
        {"mode": "dt", "seed": 7, "ct": {"node_hz": 5.0}}
    )
    path = tmp_path / "config.yaml"
    save_config(path, cfg)
    loaded = load_config(path)
    assert loaded == cfg
    assert loaded.ct.node_hz == 5.0


def test_load_config_edge_cases(tmp_path):
    assert load_config(None) == RunConfig()
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    assert load_config(empty) == RunConfig()
    bad = tmp_path / "bad.yaml"
    bad.write_text("- just\n- a list\n")
    with pytest.raises(DataError, match="mapping"):
        load_config(bad)
    broken = tmp_path / "broken.yaml"
    broken.write_text("mode: [unclosed\n")
    with pytest.raises(DataError, match="YAML"):
        load_config(broken)
    with pytest.raises(DataError, match="not found"):
        load_config(tmp_path / "missing.yaml")
