"""Real spherical harmonics basis for view-dependent Gaussian colors.

Basis constants and signs follow the convention used throughout the 3DGS
file ecosystem, so third-party scenes decode to the colors they were
trained with. A color channel is reconstructed as

    color = sum_k basis_k(dir) * coeff_k + 0.5

where coeff_0 is the DC ("main color") coefficient.
"""

from __future__ import annotations

import torch
from torch import Tensor

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

COLOR_OFFSET = 0.5


def num_coeffs(degree: int) -> int:
    """Coefficients per channel for SH of the given degree."""
    if degree not in (0, 1, 2, 3):
        raise ValueError(f"sh degree must be in 0..3, got {degree}")
    return (degree + 1) ** 2


def sh_basis(dirs: Tensor, degree: int) -> Tensor:
    """Evaluate the SH basis at unit directions.

    Args:
        dirs: (N, 3) unit view directions.
        degree: SH degree in 0..3.

    Returns:
        (N, (degree+1)^2) basis values; column 0 is the DC constant.
    """
    n = dirs.shape[0]
    k = num_coeffs(degree)
    basis = dirs.new_empty((n, k))
    basis[:, 0] = SH_C0
    if degree >= 1:
        x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
        basis[:, 1] = -SH_C1 * y
        basis[:, 2] = SH_C1 * z
        basis[:, 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        basis[:, 4] = SH_C2[0] * xy
        basis[:, 5] = SH_C2[1] * yz
        basis[:, 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        basis[:, 7] = SH_C2[3] * xz
        basis[:, 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        basis[:, 9] = SH_C3[0] * y * (3.0 * xx - yy)
        basis[:, 10] = SH_C3[1] * xy * z
        basis[:, 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
        basis[:, 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        basis[:, 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
        basis[:, 14] = SH_C3[5] * z * (xx - yy)
        basis[:, 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return basis


def eval_colors(sh_dc: Tensor, sh_rest: Tensor, degree: int, dirs: Tensor) -> Tensor:
    """Per-Gaussian RGB from SH coefficients and view directions.

    `sh_rest` uses the channel-major file layout (N, 3*K): the K higher-order
    coefficients of channel c occupy columns [c*K, (c+1)*K).

    Returns (N, 3); values are not clamped.
    """
    basis = sh_basis(dirs, degree)
    colors = basis[:, :1] * sh_dc + COLOR_OFFSET
    k_rest = num_coeffs(degree) - 1
    if k_rest > 0:
        rest = sh_rest.reshape(-1, 3, k_rest)
        colors = colors + torch.einsum("nk,nck->nc", basis[:, 1:], rest)
    return colors


def rgb_to_dc(rgb: Tensor) -> Tensor:
    """Inverse of the DC term: coefficients that reproduce `rgb` at degree 0."""
    return (rgb - COLOR_OFFSET) / SH_C0
