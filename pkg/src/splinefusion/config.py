"""Run configuration: one YAML file describing simulation, noise, and both
estimator modes.

Every key has a default; an empty file (or no ``--config``) is a valid
configuration.  The full schema with defaults is documented in the README
and reproducible via :func:`RunConfig.default_dict`.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

import yaml

from .dataset import NoiseSpec
from .errors import DataError, InvalidArgumentError
from .estimators import CtConfig, DtConfig
from .simulate import PROFILES


@dataclass(frozen=True)
class SimulateConfig:
    """Trajectory and scene parameters for the synthetic dataset."""

    profile: str = "lemniscate"
    duration: float = 15.0
    radius: float = 2.5
    rate: float = 0.7
    height: float = 0.0
    height_rate: float = 0.7
    wobble_roll: float = 0.25
    wobble_pitch: float = 0.2
    wobble_rate: float = 1.3
    static_prefix: float = 0.0
    num_landmarks: int = 500
    landmark_spread: float = 3.0
    t_cam_imu_ms: float = 0.0  # injected true camera-IMU offset
    t_gps_imu_ms: float = 0.0  # injected true GPS-IMU offset

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise InvalidArgumentError(
                f"unknown profile {self.profile!r}; choose from {PROFILES}"
            )
        if self.duration < 5.0:
            raise InvalidArgumentError("duration must be >= 5 s")


@dataclass(frozen=True)
class SensorFlags:
    camera: bool = True
    imu: bool = True
    gps: bool = True

    def __post_init__(self):
        if sum((self.camera, self.imu, self.gps)) < 2:
            raise InvalidArgumentError("need at least two sensor modalities")


@dataclass(frozen=True)
class RunConfig:
    mode: str = "ct"
    seed: int = 0
    align: str = "none"  # evaluation alignment: none | se3 | sim3
    sensors: SensorFlags = field(default_factory=SensorFlags)
    simulate: SimulateConfig = field(default_factory=SimulateConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    ct: CtConfig = field(default_factory=CtConfig)
    dt: DtConfig = field(default_factory=DtConfig)

    def __post_init__(self):
        if self.mode not in ("ct", "dt"):
            raise InvalidArgumentError(f"mode must be 'ct' or 'dt', got {self.mode!r}")
        if self.align not in ("none", "se3", "sim3"):
            raise InvalidArgumentError(f"unknown align mode {self.align!r}")

    def estimator_config(self, mode=None):
        """The CtConfig/DtConfig for ``mode`` with sensor flags applied."""
        mode = mode or self.mode
        base = self.ct if mode == "ct" else self.dt
        return dataclasses.replace(
            base,
            use_cam=self.sensors.camera,
            use_imu=self.sensors.imu,
            use_gps=self.sensors.gps,
        )

    @staticmethod
    def default_dict():
        return RunConfig().to_dict()

    def to_dict(self):
        return {
            "mode": self.mode,
            "seed": self.seed,
            "align": self.align,
            "sensors": dataclasses.asdict(self.sensors),
            "simulate": dataclasses.asdict(self.simulate),
            "noise": self.noise.to_dict(),
            "ct": dataclasses.asdict(self.ct),
            "dt": dataclasses.asdict(self.dt),
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        known = {"mode", "seed", "align", "sensors", "simulate", "noise",
                 "ct", "dt"}
        unknown = set(data) - known
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")

        def build(klass, section):
            section = dict(data.get(section) or {})
            names = {f.name for f in dataclasses.fields(klass)}
            bad = set(section) - names
            if bad:
                raise DataError(
                    f"unknown keys in config section: {sorted(bad)}"
                )
            return klass(**section)

        noise_section = dict(data.get("noise") or {})
        base_noise = NoiseSpec().to_dict()
        bad = set(noise_section) - set(base_noise)
        if bad:
            raise DataError(f"unknown keys in noise section: {sorted(bad)}")
        base_noise.update(noise_section)
        return cls(
            mode=data.get("mode", "ct"),
            seed=int(data.get("seed", 0)),
            align=data.get("align", "none"),
            sensors=build(SensorFlags, "sensors"),
            simulate=build(SimulateConfig, "simulate"),
            noise=NoiseSpec.from_dict(base_noise),
            ct=build(CtConfig, "ct"),
            dt=build(DtConfig, "dt"),
        )


def load_config(path=None):
    """Read a YAML RunConfig; ``None`` yields all defaults."""
    if path is None:
        return RunConfig()
    if not os.path.exists(path):
        raise DataError(f"config file not found: {path}")
    with open(path) as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise DataError(f"{path}: invalid YAML ({e})") from e
    if data is None:
        return RunConfig()
    if not isinstance(data, dict):
        raise DataError(f"{path}: top level must be a mapping")
    return RunConfig.from_dict(data)


def save_config(path, config: RunConfig):
    with open(path, "w") as f:
        yaml.safe_dump(config.to_dict(), f, sort_keys=False)
