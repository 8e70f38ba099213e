"""Reference forward splatting: project, depth-sort, alpha-composite.

This is a global-sort renderer written for correctness, not speed. Each
Gaussian is projected with the EWA affine approximation, composited
front-to-back, and contributes only inside its 3-sigma ellipse and only
when its effective opacity clears a 1/255 floor. For fixed geometry the
image is linear in per-Gaussian colors, which gives exact analytic
gradients with respect to the SH coefficients.

Colors are never clamped here; clamping to [0, 1] happens at PNG export.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import torch
from torch import Tensor

from .camera import CameraView
from .cloud import GaussianCloud
from .errors import CapacityError
from .sh import eval_colors

# Contribution cutoffs, shared with the per-pixel oracle in the tests.
MAX_MAHALANOBIS_SQ = 9.0  # 3-sigma support
ALPHA_FLOOR = 1.0 / 255.0
MIN_DEPTH = 1e-8

DENSE_WEIGHT_GUARD = 1 << 24  # max entries of the dense per-Gaussian weight buffer


@dataclass
class Projection:
    """Screen-space quantities for the Gaussians visible from one view.

    Arrays are aligned; `indices` maps rows back to Gaussians in the cloud.
    """

    indices: Tensor  # (M,) original Gaussian ids, ascending
    means2d: Tensor  # (M, 2) pixel coordinates (x, y)
    cov2d: Tensor  # (M, 2, 2)
    depths: Tensor  # (M,) camera-space z
    radii: Tensor  # (M,) 3-sigma support radius in pixels


@dataclass
class RenderOutput:
    rgb: Tensor  # (H, W, 3) linear color, unclamped
    alpha: Tensor  # (H, W) accumulated opacity
    weights: Optional[Tensor] = None  # (M, H, W) per-Gaussian compositing weights
    weight_indices: Optional[Tensor] = None  # (M,) Gaussian ids for `weights`
    background_weight: Optional[Tensor] = None  # (H, W)


def _quat_to_rot(q: Tensor) -> Tensor:
    """(N, 4) unit quaternions (w, x, y, z) -> (N, 3, 3) rotation matrices."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    rot = torch.stack(
        [
            1 - 2 * (y * y + z * z),
            2 * (x * y - w * z),
            2 * (x * z + w * y),
            2 * (x * y + w * z),
            1 - 2 * (x * x + z * z),
            2 * (y * z - w * x),
            2 * (x * z - w * y),
            2 * (y * z + w * x),
            1 - 2 * (x * x + y * y),
        ],
        dim=1,
    )
    return rot.reshape(-1, 3, 3)


def project_gaussian(cloud: GaussianCloud, view: CameraView) -> Projection:
    """Project Gaussians into the view, dropping those behind the camera.

    The 2D covariance is J W Sigma W^T J^T with J the pinhole Jacobian at
    the Gaussian center and W the world-to-camera rotation. Support is
    truncated at 3 sigma of the larger eigenvalue.
    """
    view.validate()
    dtype = cloud.positions.dtype
    w2c = view.world_to_camera.to(dtype)
    rot_wc = w2c[:3, :3]

    p_cam = cloud.positions @ rot_wc.T + w2c[:3, 3]
    depths = p_cam[:, 2]
    keep = depths > MIN_DEPTH
    indices = torch.nonzero(keep, as_tuple=False).reshape(-1)
    if indices.numel() == 0:
        empty = cloud.positions.new_empty
        return Projection(
            indices=indices,
            means2d=empty((0, 2)),
            cov2d=empty((0, 2, 2)),
            depths=empty((0,)),
            radii=empty((0,)),
        )

    p_cam = p_cam[indices]
    z = p_cam[:, 2]
    x, y = p_cam[:, 0], p_cam[:, 1]
    means2d = torch.stack([view.fx * x / z + view.cx, view.fy * y / z + view.cy], dim=1)

    rot = _quat_to_rot(cloud.rotations[indices])
    scales = torch.exp(cloud.log_scales[indices])
    rs = rot * scales[:, None, :]
    cov3d = rs @ rs.transpose(1, 2)

    m = indices.numel()
    jac = cloud.positions.new_zeros((m, 2, 3))
    jac[:, 0, 0] = view.fx / z
    jac[:, 0, 2] = -view.fx * x / (z * z)
    jac[:, 1, 1] = view.fy / z
    jac[:, 1, 2] = -view.fy * y / (z * z)

    jw = jac @ rot_wc
    cov2d = jw @ cov3d @ jw.transpose(1, 2)

    # 3-sigma radius from the dominant eigenvalue of the 2x2 covariance.
    mid = 0.5 * (cov2d[:, 0, 0] + cov2d[:, 1, 1])
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    lam_max = mid + torch.sqrt(torch.clamp(mid * mid - det, min=0.0))
    radii = 3.0 * torch.sqrt(torch.clamp(lam_max, min=0.0))

    return Projection(indices=indices, means2d=means2d, cov2d=cov2d, depths=z, radii=radii)


def _composite(
    cloud: GaussianCloud,
    view: CameraView,
    background,
    *,
    collect_weights: bool = False,
    grad_rgb: Optional[Tensor] = None,
):
    """Shared front-to-back compositing loop.

    With `grad_rgb` set, accumulates d(sum(grad_rgb * rgb))/d(color_i) on
    the fly instead of storing a dense weight buffer (streaming mode).
    """
    if view.width <= 0 or view.height <= 0:
        raise ValueError("render target must have positive size")
    h, w = view.height, view.width
    dtype = cloud.positions.dtype

    bg = torch.as_tensor(background, dtype=dtype)
    if bg.shape != (3,):
        raise ValueError("background must be an RGB triple")

    proj = project_gaussian(cloud, view)
    m = proj.indices.numel()
    order = torch.argsort(proj.depths, stable=True)

    rgb = torch.zeros((h, w, 3), dtype=dtype)
    transmittance = torch.ones((h, w), dtype=dtype)
    weights = None
    if collect_weights:
        if m * h * w > DENSE_WEIGHT_GUARD:
            raise CapacityError(
                f"dense weights need {m * h * w} entries (> {DENSE_WEIGHT_GUARD}); "
                "use accumulate_color_gradient (streaming) instead"
            )
        weights = torch.zeros((m, h, w), dtype=dtype)
    color_grad = (
        torch.zeros((cloud.num_gaussians, 3), dtype=dtype) if grad_rgb is not None else None
    )

    if m > 0:
        cam_center = view.camera_center.to(dtype)
        dirs = cloud.positions[proj.indices].detach() - cam_center
        dirs = dirs / torch.linalg.norm(dirs, dim=1, keepdim=True)
        colors = eval_colors(
            cloud.sh_dc[proj.indices], cloud.sh_rest[proj.indices], cloud.sh_degree, dirs
        )
        opacities = torch.sigmoid(cloud.opacity_logits[proj.indices])

        ys = torch.arange(h, dtype=dtype)
        xs = torch.arange(w, dtype=dtype)

        for row in order.tolist():
            mean = proj.means2d[row]
            radius = float(proj.radii[row])
            x0 = max(0, int(torch.floor(mean[0] - radius)))
            x1 = min(w - 1, int(torch.ceil(mean[0] + radius)))
            y0 = max(0, int(torch.floor(mean[1] - radius)))
            y1 = min(h - 1, int(torch.ceil(mean[1] + radius)))
            if x0 > x1 or y0 > y1:
                continue

            cov = proj.cov2d[row]
            det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
            if det <= 0:
                continue
            inv = torch.stack([cov[1, 1], -cov[0, 1], -cov[1, 0], cov[0, 0]]) / det

            dx = xs[x0 : x1 + 1] - mean[0]
            dy = ys[y0 : y1 + 1] - mean[1]
            maha = (
                inv[0] * dx[None, :] ** 2
                + inv[3] * dy[:, None] ** 2
                + (inv[1] + inv[2]) * dy[:, None] * dx[None, :]
            )
            alpha = opacities[row] * torch.exp(-0.5 * maha)
            alpha = torch.where(
                (maha <= MAX_MAHALANOBIS_SQ) & (alpha >= ALPHA_FLOOR),
                alpha,
                torch.zeros((), dtype=dtype),
            )

            region = transmittance[y0 : y1 + 1, x0 : x1 + 1]
            contrib = alpha * region
            rgb[y0 : y1 + 1, x0 : x1 + 1] = (
                rgb[y0 : y1 + 1, x0 : x1 + 1] + contrib[:, :, None] * colors[row]
            )
            if weights is not None:
                weights[row, y0 : y1 + 1, x0 : x1 + 1] = contrib
            if color_grad is not None:
                g = grad_rgb[y0 : y1 + 1, x0 : x1 + 1]
                color_grad[proj.indices[row]] = (contrib[:, :, None] * g).sum(dim=(0, 1))
            transmittance[y0 : y1 + 1, x0 : x1 + 1] = region * (1.0 - alpha)

    rgb = rgb + bg * transmittance[:, :, None]
    return rgb, transmittance, proj, weights, color_grad


def render(
    cloud: GaussianCloud,
    view: CameraView,
    background=(0.0, 0.0, 0.0),
    *,
    with_weights: bool = False,
) -> RenderOutput:
    """Alpha-composite the cloud into the view, front to back.

    Per pixel: C = sum_i c_i a_i prod_{j<i} (1 - a_j) + bg * prod_j (1 - a_j)
    with a_i = sigmoid(opacity_logit_i) * G_i(pixel) and c_i the SH color at
    the per-Gaussian view direction. Depth ties keep input order.
    """
    rgb, transmittance, proj, weights, _ = _composite(
        cloud, view, background, collect_weights=with_weights
    )
    return RenderOutput(
        rgb=rgb,
        alpha=1.0 - transmittance,
        weights=weights,
        weight_indices=proj.indices if with_weights else None,
        background_weight=transmittance if with_weights else None,
    )


def color_jacobian(cloud: GaussianCloud, view: CameraView) -> RenderOutput:
    """Per-Gaussian, per-pixel compositing weights w_i = a_i prod_{j<i}(1 - a_j).

    For frozen geometry the render is linear in colors:
    rgb = sum_i w_i c_i + w_bg * bg, and sum_i w_i + w_bg = 1 per pixel.
    Raises CapacityError when the dense (M, H, W) buffer would exceed the
    guard; use `accumulate_color_gradient` (streaming) in that case.
    """
    return render(cloud, view, with_weights=True)


def accumulate_color_gradient(cloud: GaussianCloud, view: CameraView, grad_rgb: Tensor) -> Tensor:
    """Streaming pullback of an image gradient onto per-Gaussian colors.

    Returns (N, 3): d(sum(grad_rgb * rgb))/d(color_i), without materializing
    the dense weight buffer.
    """
    if tuple(grad_rgb.shape) != (view.height, view.width, 3):
        raise ValueError("grad_rgb shape must match the view")
    _, _, _, _, color_grad = _composite(cloud, view, (0.0, 0.0, 0.0), grad_rgb=grad_rgb)
    return color_grad


def render_mask(cloud: GaussianCloud, view: CameraView, threshold: float) -> Tensor:
    """Binary foreground mask: accumulated alpha >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie strictly inside (0, 1)")
    out = render(cloud, view)
    return (out.alpha >= threshold).to(out.alpha.dtype)
