"""Image fidelity metrics: PSNR, windowed SSIM, and a feature-space
perceptual distance computed through a FeatureExtractor.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import torch
import torch.nn.functional as F
from torch import Tensor

from .providers import FeatureExtractor, _as_image

PSNR_CAP = 100.0  # finite report value for identical images

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _as_planes(image) -> Tensor:
    """Accept (H, W) or (H, W, C); return (C, H, W) float64."""
    img = torch.as_tensor(image, dtype=torch.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise ValueError(f"expected (H, W) or (H, W, C) image, got shape {tuple(img.shape)}")
    return img.permute(2, 0, 1)


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 100 for identical inputs."""
    ta = torch.as_tensor(a, dtype=torch.float64)
    tb = torch.as_tensor(b, dtype=torch.float64)
    if ta.shape != tb.shape:
        raise ValueError(f"shape mismatch: {tuple(ta.shape)} vs {tuple(tb.shape)}")
    mse = float(((ta - tb) ** 2).mean())
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def _gaussian_window(size: int, sigma: float) -> Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(coords**2) / (2.0 * sigma * sigma))
    kernel = g[:, None] * g[None, :]
    return kernel / kernel.sum()


def ssim_tensor(a, b, peak: float = 1.0) -> Tensor:
    """Differentiable mean SSIM; see `ssim` for the convention."""
    pa = _as_planes(a)
    pb = _as_planes(b)
    if pa.shape != pb.shape:
        raise ValueError(f"shape mismatch: {tuple(pa.shape)} vs {tuple(pb.shape)}")
    if pa.shape[1] < SSIM_WINDOW or pa.shape[2] < SSIM_WINDOW:
        raise ValueError(f"image must be at least {SSIM_WINDOW}x{SSIM_WINDOW}")

    c = pa.shape[0]
    window = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA).expand(c, 1, -1, -1).to(pa.dtype)

    def filt(x: Tensor) -> Tensor:
        return F.conv2d(x[None], window, groups=c)[0]

    mu_a = filt(pa)
    mu_b = filt(pb)
    var_a = filt(pa * pa) - mu_a * mu_a
    var_b = filt(pb * pb) - mu_b * mu_b
    cov = filt(pa * pb) - mu_a * mu_b

    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )
    return ssim_map.mean()


def ssim(a, b, peak: float = 1.0) -> float:
    """Mean structural similarity with an 11x11 Gaussian window (sigma 1.5).

    C1 = (0.01 * peak)^2, C2 = (0.03 * peak)^2; windows are 'valid' (no
    padding). Requires both spatial dims >= 11.
    """
    return float(ssim_tensor(a, b, peak).detach())


def lpips_tensor(
    a,
    b,
    extractor: FeatureExtractor,
    layer_ids: Optional[Sequence[int]] = None,
) -> Tensor:
    """Differentiable feature-space distance; see `lpips`."""
    ia = _as_image(a)
    ib = _as_image(b)
    if ia.shape != ib.shape:
        raise ValueError(f"shape mismatch: {tuple(ia.shape)} vs {tuple(ib.shape)}")
    if layer_ids is None:
        layer_ids = tuple(range(len(extractor.channel_counts)))
    if not layer_ids:
        raise ValueError("need at least one feature layer")

    feats_a = extractor.features(ia, layer_ids)
    feats_b = extractor.features(ib, layer_ids)
    total = None
    for fa, fb in zip(feats_a, feats_b):
        na = fa / (torch.linalg.norm(fa, dim=0, keepdim=True) + 1e-10)
        nb = fb / (torch.linalg.norm(fb, dim=0, keepdim=True) + 1e-10)
        term = ((na - nb) ** 2).mean()
        total = term if total is None else total + term
    return total / len(layer_ids)


def lpips(
    a,
    b,
    extractor: FeatureExtractor,
    layer_ids: Optional[Sequence[int]] = None,
) -> float:
    """Perceptual distance: mean squared difference of unit-normalized
    feature maps, averaged over layers. Zero iff the features agree.

    Feature maps are normalized channel-wise at each spatial position, the
    usual deep perceptual-metric convention. Calibrated per-layer weights
    are a property of real backends; with the toy extractor this is a
    structurally faithful, uncalibrated distance.
    """
    return float(lpips_tensor(a, b, extractor, layer_ids).detach())
