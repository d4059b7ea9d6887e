"""Pinhole camera model (no distortion)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, InvalidArgumentError

MIN_DEPTH = 1e-6


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidArgumentError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidArgumentError("principal point must lie inside the image")

    def to_dict(self):
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], d["width"], d["height"])


def project(cam: CameraModel, p_cam):
    """Project a camera-frame point to pixels; raises behind the camera."""
    p_cam = np.asarray(p_cam, dtype=float)
    if p_cam[2] <= MIN_DEPTH:
        raise BehindCameraError(f"point depth {p_cam[2]:.3e} <= {MIN_DEPTH}")
    return np.array(
        [
            cam.fx * p_cam[0] / p_cam[2] + cam.cx,
            cam.fy * p_cam[1] / p_cam[2] + cam.cy,
        ]
    )


def project_many(cam: CameraModel, p_cam):
    """Vectorized projection; returns (pixels (N, 2), valid mask (N,)).

    Points at or behind the minimum depth get a zero pixel and a False mask
    instead of an error, matching the soft-exclusion policy of the batch
    factors.
    """
    p_cam = np.asarray(p_cam, dtype=float)
    z = p_cam[..., 2]
    valid = z > MIN_DEPTH
    zs = np.where(valid, z, 1.0)
    px = np.stack(
        [
            cam.fx * p_cam[..., 0] / zs + cam.cx,
            cam.fy * p_cam[..., 1] / zs + cam.cy,
        ],
        axis=-1,
    )
    px = np.where(valid[..., None], px, 0.0)
    return px, valid


def in_image(cam: CameraModel, px, margin=0.0):
    px = np.asarray(px, dtype=float)
    return (
        (px[..., 0] >= margin)
        & (px[..., 0] <= cam.width - 1 - margin)
        & (px[..., 1] >= margin)
        & (px[..., 1] <= cam.height - 1 - margin)
    )
