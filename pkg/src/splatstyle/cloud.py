"""Gaussian scene container and the trainable/frozen parameter split."""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch
from torch import Tensor

from .sh import num_coeffs

# Field names by optimization role. Stylization touches color only.
COLOR_FIELDS = ("sh_dc", "sh_rest")
GEOMETRY_FIELDS = ("positions", "rotations", "log_scales", "opacity_logits")


@dataclass
class GaussianCloud:
    """A 3D Gaussian scene.

    Geometry is stored raw (log-space scales, pre-activation opacities);
    activations are applied at render time so files round-trip untouched.

    Attributes:
        positions: (N, 3) world-space means.
        rotations: (N, 4) unit quaternions, (w, x, y, z).
        log_scales: (N, 3) log-space axis scales.
        opacity_logits: (N,) pre-sigmoid opacities.
        sh_dc: (N, 3) degree-0 SH coefficients, one per channel.
        sh_rest: (N, 3*K) higher-order SH coefficients, channel-major.
        sh_degree: SH degree L in 0..3, K = (L+1)^2 - 1.
    """

    positions: Tensor
    rotations: Tensor
    log_scales: Tensor
    opacity_logits: Tensor
    sh_dc: Tensor
    sh_rest: Tensor
    sh_degree: int

    @property
    def num_gaussians(self) -> int:
        return self.positions.shape[0]

    @property
    def rest_per_channel(self) -> int:
        return num_coeffs(self.sh_degree) - 1

    def validate(self) -> None:
        n = self.num_gaussians
        shapes = {
            "positions": (n, 3),
            "rotations": (n, 4),
            "log_scales": (n, 3),
            "opacity_logits": (n,),
            "sh_dc": (n, 3),
            "sh_rest": (n, 3 * self.rest_per_channel),
        }
        for name, want in shapes.items():
            got = tuple(getattr(self, name).shape)
            if got != want:
                raise ValueError(f"{name}: expected shape {want}, got {got}")
        if n > 0:
            norms = torch.linalg.norm(self.rotations, dim=1)
            if not torch.all((norms - 1.0).abs() < 1e-6):
                raise ValueError("rotations must be unit quaternions within 1e-6")

    def clone(self) -> "GaussianCloud":
        return GaussianCloud(
            positions=self.positions.clone(),
            rotations=self.rotations.clone(),
            log_scales=self.log_scales.clone(),
            opacity_logits=self.opacity_logits.clone(),
            sh_dc=self.sh_dc.clone(),
            sh_rest=self.sh_rest.clone(),
            sh_degree=self.sh_degree,
        )

    def with_colors(self, sh_dc: Tensor, sh_rest: Tensor) -> "GaussianCloud":
        """Same geometry, different color coefficients (shares geometry tensors)."""
        return replace(self, sh_dc=sh_dc, sh_rest=sh_rest)


@dataclass
class ParamPartition:
    """References splitting a cloud's fields into trainable colors and frozen geometry."""

    trainable: dict
    frozen: dict

    def validate(self) -> None:
        names = set(self.trainable) | set(self.frozen)
        if set(self.trainable) & set(self.frozen):
            raise ValueError("trainable and frozen overlap")
        if names != set(COLOR_FIELDS) | set(GEOMETRY_FIELDS):
            raise ValueError(f"partition does not cover the cloud fields: {sorted(names)}")


def partition(cloud: GaussianCloud) -> ParamPartition:
    """Split a cloud into the color parameters to optimize and the geometry to freeze.

    The returned dicts hold references to the cloud's own tensors; in-place
    updates of `trainable` entries never touch `frozen` entries.
    """
    part = ParamPartition(
        trainable={name: getattr(cloud, name) for name in COLOR_FIELDS},
        frozen={name: getattr(cloud, name) for name in GEOMETRY_FIELDS},
    )
    part.validate()
    return part
