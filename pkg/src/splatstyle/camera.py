"""Pinhole camera views and the JSON camera-set format.

Camera space is right-handed with +z in front of the camera; a point
p_cam = R @ p_world + t projects to pixel (fx * x/z + cx, fy * y/z + cy).
Pixel (row i, col j) samples the image plane at (x=j, y=i).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import Tensor


@dataclass
class CameraView:
    """One render viewpoint: pinhole intrinsics plus a world-to-camera pose."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_camera: Tensor  # (4, 4) rigid transform
    azimuth_index: int = 0

    def validate(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        m = self.world_to_camera
        if tuple(m.shape) != (4, 4):
            raise ValueError("world_to_camera must be 4x4")
        r = m[:3, :3]
        if not torch.allclose(r @ r.T, torch.eye(3, dtype=m.dtype), atol=1e-6):
            raise ValueError("rotation block is not orthonormal within 1e-6")
        if not torch.allclose(m[3], torch.tensor([0.0, 0.0, 0.0, 1.0], dtype=m.dtype), atol=1e-9):
            raise ValueError("last row must be [0, 0, 0, 1]")

    @property
    def camera_center(self) -> Tensor:
        """Camera position in world coordinates."""
        r = self.world_to_camera[:3, :3]
        t = self.world_to_camera[:3, 3]
        return -(r.T @ t)


def look_at(
    eye,
    target=(0.0, 0.0, 0.0),
    up=(0.0, 1.0, 0.0),
    *,
    fx: float = 32.0,
    fy: float = 32.0,
    width: int = 32,
    height: int = 32,
    azimuth_index: int = 0,
) -> CameraView:
    """Build a camera at `eye` looking toward `target`."""
    eye_t = torch.as_tensor(eye, dtype=torch.float64)
    tgt = torch.as_tensor(target, dtype=torch.float64)
    up_t = torch.as_tensor(up, dtype=torch.float64)

    forward = tgt - eye_t
    norm = torch.linalg.norm(forward)
    if float(norm) < 1e-12:
        raise ValueError("eye and target coincide")
    forward = forward / norm
    right = torch.linalg.cross(forward, up_t)
    norm = torch.linalg.norm(right)
    if float(norm) < 1e-12:
        raise ValueError("view direction is parallel to the up vector")
    right = right / norm
    down = torch.linalg.cross(forward, right)

    rot = torch.stack([right, down, forward])  # rows: camera x, y, z in world
    w2c = torch.eye(4, dtype=torch.float64)
    w2c[:3, :3] = rot
    w2c[:3, 3] = -(rot @ eye_t)
    cam = CameraView(
        fx=fx,
        fy=fy,
        cx=(width - 1) / 2.0,
        cy=(height - 1) / 2.0,
        width=width,
        height=height,
        world_to_camera=w2c,
        azimuth_index=azimuth_index,
    )
    cam.validate()
    return cam


def camera_ring(
    n: int,
    radius: float = 4.0,
    elevation: float = 0.0,
    target=(0.0, 0.0, 0.0),
    **kwargs,
) -> list[CameraView]:
    """`n` cameras on an azimuth ring around `target`, indexed in ring order."""
    views = []
    for i in range(n):
        angle = 2.0 * math.pi * i / n
        eye = (
            target[0] + radius * math.sin(angle),
            target[1] + elevation,
            target[2] - radius * math.cos(angle),
        )
        views.append(look_at(eye, target=target, azimuth_index=i, **kwargs))
    return views


def load_cameras(path) -> list[CameraView]:
    """Read a camera set from the JSON format written by `save_cameras`."""
    with open(path) as f:
        data = json.load(f)
    views = []
    for i, entry in enumerate(data["cameras"]):
        try:
            cam = CameraView(
                fx=float(entry["fx"]),
                fy=float(entry["fy"]),
                cx=float(entry["cx"]),
                cy=float(entry["cy"]),
                width=int(entry["width"]),
                height=int(entry["height"]),
                world_to_camera=torch.tensor(entry["world_to_camera"], dtype=torch.float64),
                azimuth_index=int(entry.get("azimuth_index", i)),
            )
            cam.validate()
        except (KeyError, ValueError) as exc:
            raise ValueError(f"camera {i}: {exc}") from exc
        views.append(cam)
    return views


def save_cameras(views: list[CameraView], path) -> None:
    data = {
        "cameras": [
            {
                "fx": v.fx,
                "fy": v.fy,
                "cx": v.cx,
                "cy": v.cy,
                "width": v.width,
                "height": v.height,
                "world_to_camera": v.world_to_camera.tolist(),
                "azimuth_index": v.azimuth_index,
            }
            for v in views
        ]
    }
    Path(path).write_text(json.dumps(data, indent=2))
