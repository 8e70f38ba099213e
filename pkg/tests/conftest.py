import math

import pytest
import torch

from splatstyle import GaussianCloud, camera_ring, look_at
from splatstyle.sh import rgb_to_dc

torch.set_num_threads(1)


def make_cloud(
    n: int,
    seed: int = 0,
    degree: int = 0,
    spread: float = 1.0,
    scale_range=(0.1, 0.4),
    opacity_range=(-1.0, 3.0),
) -> GaussianCloud:
    """Seeded random scene sized for 16-32 pixel renders at radius ~4."""
    gen = torch.Generator().manual_seed(seed)

    def uniform(shape, lo, hi):
        return lo + (hi - lo) * torch.rand(shape, generator=gen, dtype=torch.float64)

    rotations = torch.randn((n, 4), generator=gen, dtype=torch.float64)
    rotations = rotations / torch.linalg.norm(rotations, dim=1, keepdim=True)
    k_rest = (degree + 1) ** 2 - 1
    cloud = GaussianCloud(
        positions=uniform((n, 3), -spread, spread),
        rotations=rotations,
        log_scales=uniform((n, 3), math.log(scale_range[0]), math.log(scale_range[1])),
        opacity_logits=uniform((n,), *opacity_range),
        sh_dc=rgb_to_dc(uniform((n, 3), 0.0, 1.0)),
        sh_rest=uniform((n, 3 * k_rest), -0.1, 0.1),
        sh_degree=degree,
    )
    cloud.validate()
    return cloud


def flat_cloud(colors, logits=None, z: float = 0.0, scale: float = 0.0) -> GaussianCloud:
    """Coincident axis-aligned Gaussians with the given colors, for hand math."""
    colors = torch.as_tensor(colors, dtype=torch.float64)
    n = colors.shape[0]
    if logits is None:
        logits = torch.zeros(n, dtype=torch.float64)
    else:
        logits = torch.as_tensor(logits, dtype=torch.float64)
    positions = torch.zeros((n, 3), dtype=torch.float64)
    positions[:, 2] = z
    return GaussianCloud(
        positions=positions,
        rotations=torch.tensor([[1.0, 0.0, 0.0, 0.0]] * n, dtype=torch.float64),
        log_scales=torch.full((n, 3), scale, dtype=torch.float64),
        opacity_logits=logits,
        sh_dc=rgb_to_dc(colors),
        sh_rest=torch.zeros((n, 0), dtype=torch.float64),
        sh_degree=0,
    )


def front_camera(width: int = 17, height: int = 17, distance: float = 4.0, focal: float = 32.0):
    """Camera on the -z axis looking at the origin; odd sizes center a pixel."""
    return look_at((0.0, 0.0, -distance), fx=focal, fy=focal, width=width, height=height)


@pytest.fixture
def ring8():
    return camera_ring(8, radius=4.0, fx=24.0, fy=24.0, width=16, height=16)
