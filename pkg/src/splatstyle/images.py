"""PNG image input/output.

In-memory images are (H, W, 3) float tensors. Loading maps 8-bit values
to [0, 1] without a transfer curve; saving applies the sRGB transfer and
clamps, so the transfer is an export-only concern.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch import Tensor


def srgb_encode(linear: Tensor) -> Tensor:
    """Linear [0,1] -> sRGB-encoded [0,1] (IEC 61966-2-1 piecewise curve)."""
    x = torch.clamp(linear, 0.0, 1.0)
    return torch.where(x <= 0.0031308, 12.92 * x, 1.055 * x ** (1.0 / 2.4) - 0.055)


def srgb_decode(encoded: Tensor) -> Tensor:
    """sRGB-encoded [0,1] -> linear [0,1]."""
    x = torch.clamp(encoded, 0.0, 1.0)
    return torch.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def load_image(path) -> Tensor:
    """Read a PNG (or anything PIL decodes) as (H, W, 3) float64 in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return torch.from_numpy(arr)


def save_image(path, rgb: Tensor, *, apply_srgb: bool = True) -> None:
    """Write an (H, W, 3) float image to an 8-bit PNG.

    Values are clamped to [0, 1]; the sRGB transfer is applied unless
    `apply_srgb` is False (e.g. for already-encoded data).
    """
    img = rgb.detach()
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {tuple(img.shape)}")
    encoded = srgb_encode(img) if apply_srgb else torch.clamp(img, 0.0, 1.0)
    data = torch.round(encoded * 255.0).to(torch.uint8).numpy()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(data, mode="RGB").save(path)
