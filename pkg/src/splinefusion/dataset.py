"""Dataset types and ASL-style CSV / JSON serialization.

Directory layout written by the simulator and consumed by the estimators:

    imu.csv       t_ns,wx,wy,wz,ax,ay,az        (IMU clock)
    gps.csv       t_ns,x,y,z                    (GPS clock)
    features.csv  t_ns,frame_id,landmark_id,u_px,v_px   (camera clock)
    gt.csv        t_ns,x,y,z,qw,qx,qy,qz        (IMU clock, body pose in world)
    scene.json    landmarks, rig, noise, seed, profile metadata

Timestamps are integer nanoseconds everywhere; conversion to float seconds
happens only inside the math (relative to the dataset origin to preserve
precision).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .camera import CameraModel
from .errors import DataError, InvalidArgumentError
from .rotations import Pose, is_rotation, quat_to_rotation, rotation_to_quat

NS = 1e-9


@dataclass(frozen=True)
class SensorRig:
    """Extrinsic and temporal calibration of the camera/IMU/GPS rig.

    ``T_cam_imu`` is the pose of the camera in the IMU (body) frame:
    ``p_body = R @ p_cam + p``.  Time offsets follow the convention
    ``t_imu = t_cam + t_cam_imu`` and ``t_imu = t_gps + t_gps_imu``.
    """

    T_cam_imu: Pose
    p_antenna_body: np.ndarray
    t_cam_imu: float
    t_gps_imu: float
    camera: CameraModel

    def __post_init__(self):
        if not is_rotation(self.T_cam_imu.R):
            raise InvalidArgumentError("extrinsic rotation is not orthonormal")
        if abs(self.t_cam_imu) >= 1.0 or abs(self.t_gps_imu) >= 1.0:
            raise InvalidArgumentError("time offsets must be below 1 s")
        object.__setattr__(
            self, "p_antenna_body", np.asarray(self.p_antenna_body, dtype=float)
        )

    def to_dict(self):
        return {
            "q_cam_imu_wxyz": rotation_to_quat(self.T_cam_imu.R).tolist(),
            "p_cam_imu": self.T_cam_imu.p.tolist(),
            "p_antenna_body": self.p_antenna_body.tolist(),
            "t_cam_imu": self.t_cam_imu,
            "t_gps_imu": self.t_gps_imu,
            "camera": self.camera.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            T_cam_imu=Pose(
                quat_to_rotation(np.asarray(d["q_cam_imu_wxyz"])),
                np.asarray(d["p_cam_imu"]),
            ),
            p_antenna_body=np.asarray(d["p_antenna_body"]),
            t_cam_imu=float(d["t_cam_imu"]),
            t_gps_imu=float(d["t_gps_imu"]),
            camera=CameraModel.from_dict(d["camera"]),
        )


@dataclass(frozen=True)
class NoiseSpec:
    """Sensor noise configuration.

    ``accel_sigma``/``gyro_sigma`` are continuous densities; the discrete
    per-sample standard deviation is ``density * sqrt(rate)``.  Bias
    random-walk densities likewise scale with ``sqrt(dt)`` per step.
    """

    pixel_sigma: float = 1.0
    accel_sigma: float = 8e-3
    gyro_sigma: float = 1e-3
    accel_bias_rw: float = 1e-4
    gyro_bias_rw: float = 1e-5
    gps_sigma: float = 0.1
    cam_hz: float = 20.0
    imu_hz: float = 200.0
    gps_hz: float = 10.0
    seed: int = 0

    def __post_init__(self):
        sigmas = (
            self.pixel_sigma, self.accel_sigma, self.gyro_sigma,
            self.accel_bias_rw, self.gyro_bias_rw, self.gps_sigma,
        )
        if any(s < 0 for s in sigmas):
            raise InvalidArgumentError("noise sigmas must be >= 0")
        if min(self.cam_hz, self.imu_hz, self.gps_hz) <= 0:
            raise InvalidArgumentError("sensor rates must be > 0")
        if self.imu_hz < self.cam_hz:
            raise InvalidArgumentError("imu rate must be >= camera rate")

    @property
    def accel_sigma_d(self):
        return self.accel_sigma * np.sqrt(self.imu_hz)

    @property
    def gyro_sigma_d(self):
        return self.gyro_sigma * np.sqrt(self.imu_hz)

    def to_dict(self):
        return {
            "pixel_sigma": self.pixel_sigma,
            "accel_sigma": self.accel_sigma,
            "gyro_sigma": self.gyro_sigma,
            "accel_bias_rw": self.accel_bias_rw,
            "gyro_bias_rw": self.gyro_bias_rw,
            "gps_sigma": self.gps_sigma,
            "cam_hz": self.cam_hz,
            "imu_hz": self.imu_hz,
            "gps_hz": self.gps_hz,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class Frame:
    """One camera frame: timestamp plus (landmark_id, pixel) observations."""

    t_ns: int
    landmark_ids: np.ndarray  # (n,) int
    pixels: np.ndarray  # (n, 2)


@dataclass
class MeasurementSet:
    """All sensor streams of one dataset plus the withheld true landmarks."""

    imu_t_ns: np.ndarray  # (M,) int
    gyro: np.ndarray  # (M, 3) rad/s
    accel: np.ndarray  # (M, 3) m/s^2
    gps_t_ns: np.ndarray  # (D,) int
    gps: np.ndarray  # (D, 3) m
    frames: list  # list[Frame]
    landmarks_true: dict  # id -> (3,) m

    def validate(self):
        for name, ts in (("imu", self.imu_t_ns), ("gps", self.gps_t_ns)):
            if ts.size > 1 and np.any(np.diff(ts) <= 0):
                raise DataError(f"{name} timestamps are not strictly increasing")
        ft = np.array([f.t_ns for f in self.frames])
        if ft.size > 1 and np.any(np.diff(ft) <= 0):
            raise DataError("frame timestamps are not strictly increasing")
        counts = {}
        for f in self.frames:
            for lid in f.landmark_ids:
                if int(lid) not in self.landmarks_true:
                    raise DataError(f"observed landmark {lid} missing from scene")
                counts[int(lid)] = counts.get(int(lid), 0) + 1
        if any(c < 2 for c in counts.values()):
            raise DataError("every retained landmark needs >= 2 observations")
        arrays = [self.gyro, self.accel, self.gps] + [f.pixels for f in self.frames]
        if any(not np.all(np.isfinite(a)) for a in arrays if a.size):
            raise DataError("non-finite measurement values")
        return self

    @property
    def frame_t_ns(self):
        return np.array([f.t_ns for f in self.frames], dtype=np.int64)

    def time_span_ns(self):
        ts = [self.imu_t_ns, self.gps_t_ns, self.frame_t_ns]
        ts = [t for t in ts if t.size]
        return min(int(t[0]) for t in ts), max(int(t[-1]) for t in ts)


# ---------------------------------------------------------------------------
# CSV helpers

_HEADERS = {
    "imu.csv": "t_ns,wx,wy,wz,ax,ay,az",
    "gps.csv": "t_ns,x,y,z",
    "features.csv": "t_ns,frame_id,landmark_id,u_px,v_px",
    "gt.csv": "t_ns,x,y,z,qw,qx,qy,qz",
}


def _write_csv(path, header, rows):
    with open(path, "w") as f:
        f.write(header + "\n")
        for row in rows:
            f.write(",".join(row) + "\n")


def _read_csv(path, ncols):
    name = os.path.basename(path)
    if not os.path.exists(path):
        raise DataError(f"missing required file {path}")
    with open(path) as f:
        header = f.readline().strip()
        expect = _HEADERS.get(name)
        if expect is not None and header != expect:
            raise DataError(f"{path}: unexpected header {header!r} (want {expect!r})")
        out = []
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != ncols:
                raise DataError(f"{path}:{lineno}: expected {ncols} columns")
            try:
                out.append([float(p) for p in parts])
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: {e}") from None
    return np.asarray(out, dtype=float).reshape(-1, ncols)


def write_dataset(out_dir, meas: MeasurementSet, rig: SensorRig, noise: NoiseSpec,
                  gt=None, extra_meta=None):
    """Write the full CSV/JSON dataset layout.

    ``gt`` is an optional tuple ``(t_ns (N,), positions (N,3), rotations
    (N,3,3))`` of body poses on the IMU clock.
    """
    os.makedirs(out_dir, exist_ok=True)
    _write_csv(
        os.path.join(out_dir, "imu.csv"),
        _HEADERS["imu.csv"],
        (
            [str(int(t))] + [f"{v:.17g}" for v in np.concatenate([w, a])]
            for t, w, a in zip(meas.imu_t_ns, meas.gyro, meas.accel)
        ),
    )
    _write_csv(
        os.path.join(out_dir, "gps.csv"),
        _HEADERS["gps.csv"],
        (
            [str(int(t))] + [f"{v:.17g}" for v in p]
            for t, p in zip(meas.gps_t_ns, meas.gps)
        ),
    )

    def feature_rows():
        for k, fr in enumerate(meas.frames):
            for lid, px in zip(fr.landmark_ids, fr.pixels):
                yield [str(int(fr.t_ns)), str(k), str(int(lid)),
                       f"{px[0]:.17g}", f"{px[1]:.17g}"]

    _write_csv(os.path.join(out_dir, "features.csv"), _HEADERS["features.csv"],
               feature_rows())
    if gt is not None:
        t_ns, pos, rot = gt
        quat = rotation_to_quat(rot)
        _write_csv(
            os.path.join(out_dir, "gt.csv"),
            _HEADERS["gt.csv"],
            (
                [str(int(t))] + [f"{v:.17g}" for v in np.concatenate([p, q])]
                for t, p, q in zip(t_ns, pos, quat)
            ),
        )
    lids = sorted(meas.landmarks_true)
    scene = {
        "seed": noise.seed,
        "noise": noise.to_dict(),
        "rig": rig.to_dict(),
        "landmark_ids": lids,
        "landmarks": [meas.landmarks_true[i].tolist() for i in lids],
        "counts": {
            "imu": int(meas.imu_t_ns.size),
            "gps": int(meas.gps_t_ns.size),
            "frames": len(meas.frames),
            "observations": int(sum(f.landmark_ids.size for f in meas.frames)),
        },
    }
    if extra_meta:
        scene.update(extra_meta)
    with open(os.path.join(out_dir, "scene.json"), "w") as f:
        json.dump(scene, f, indent=1)


def read_dataset(data_dir, require_gps=True):
    """Read a dataset directory; returns (MeasurementSet, rig, noise, gt|None).

    Validates headers, monotone timestamps, finiteness, and cross-checks the
    stream sizes against scene.json.
    """
    scene_path = os.path.join(data_dir, "scene.json")
    if not os.path.exists(scene_path):
        raise DataError(f"missing required file {scene_path}")
    with open(scene_path) as f:
        scene = json.load(f)
    rig = SensorRig.from_dict(scene["rig"])
    noise = NoiseSpec.from_dict(scene["noise"])

    imu = _read_csv(os.path.join(data_dir, "imu.csv"), 7)
    gps_path = os.path.join(data_dir, "gps.csv")
    have_gps = require_gps or os.path.exists(gps_path)
    if have_gps:
        gps = _read_csv(gps_path, 4)
    else:
        gps = np.zeros((0, 4))
    feats = _read_csv(os.path.join(data_dir, "features.csv"), 5)

    frames = []
    if feats.size:
        frame_ids = feats[:, 1].astype(int)
        order = np.argsort(frame_ids, kind="stable")
        feats = feats[order]
        frame_ids = frame_ids[order]
        for fid in np.unique(frame_ids):
            rows = feats[frame_ids == fid]
            t_ns = int(rows[0, 0])
            if np.any(rows[:, 0] != rows[0, 0]):
                raise DataError(f"features.csv: frame {fid} has mixed timestamps")
            frames.append(
                Frame(t_ns, rows[:, 2].astype(int), rows[:, 3:5].copy())
            )
    landmarks = {
        int(i): np.asarray(p, dtype=float)
        for i, p in zip(scene["landmark_ids"], scene["landmarks"])
    }
    meas = MeasurementSet(
        imu_t_ns=imu[:, 0].astype(np.int64),
        gyro=imu[:, 1:4],
        accel=imu[:, 4:7],
        gps_t_ns=gps[:, 0].astype(np.int64),
        gps=gps[:, 1:4],
        frames=frames,
        landmarks_true=landmarks,
    ).validate()
    counts = scene.get("counts", {})
    checks = {
        "imu": meas.imu_t_ns.size,
        "frames": len(frames),
    }
    if have_gps:
        checks["gps"] = meas.gps_t_ns.size
    for key, val in checks.items():
        if key in counts and counts[key] != val:
            raise DataError(
                f"scene.json count mismatch for {key}: {counts[key]} != {val}"
            )

    gt = None
    gt_path = os.path.join(data_dir, "gt.csv")
    if os.path.exists(gt_path):
        rows = _read_csv(gt_path, 8)
        gt = (
            rows[:, 0].astype(np.int64),
            rows[:, 1:4],
            quat_to_rotation(rows[:, 4:8]),
        )
    return meas, rig, noise, gt
