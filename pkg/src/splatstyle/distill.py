"""Style score distillation: CFG-mixed noise residuals in latent and pixel
space, their pullback onto the color parameters, and the assembled style
objective with RGB/mask guidance.

The distillation gradient treats the noise residual as a constant (the
usual score-distillation surrogate): for a render x,

    grad = omega(t) * (w_lat * r_lat . d enc(x)/d theta + w_pix * r_pix . dx/d theta)

which is realized by differentiating sum(r.detach() * branch) with autograd.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import math

import torch
from torch import Tensor

from .camera import CameraView
from .cloud import GaussianCloud
from .errors import ConfigError, ProviderContractError
from .providers import DiffusionScoreProvider
from .render import render
from .schedule import GuidanceState
from .style_clean import StyleEmbedding


class OmegaMode(enum.Enum):
    CONSTANT_ONE = "constant"
    ONE_MINUS_ALPHA_BAR = "one_minus_alpha_bar"


@dataclass
class DSSDConfig:
    """Weights and schedule constants for the distillation block."""

    lambda_latent: float = 1.0  # latent-space residual weight
    lambda_pixel: float = 1.0  # pixel-space residual weight
    lambda_dssd: float = 1.0  # distillation term in the style objective
    lambda_rgb: float = 1.0  # pre-stylized-view MSE term
    lambda_mask: float = 0.1  # alpha-vs-mask MSE term
    lambda_ssim: float = 0.0  # optional structural alignment term
    lambda_lpips: float = 0.0  # optional perceptual alignment term
    omega: OmegaMode = OmegaMode.CONSTANT_ONE
    t_total: int = 1000
    t_min: int = 20
    t_max: int = 750
    cfg_max: float = 20.0

    def validate(self) -> None:
        for name in (
            "lambda_latent",
            "lambda_pixel",
            "lambda_dssd",
            "lambda_rgb",
            "lambda_mask",
            "lambda_ssim",
            "lambda_lpips",
        ):
            if getattr(self, name) < 0:
                raise ConfigError(f"weights.dssd.{name}", "must be >= 0")
        if self.lambda_latent == 0 and self.lambda_pixel == 0:
            raise ConfigError(
                "weights.dssd", "at least one of lambda_latent, lambda_pixel must be > 0"
            )
        if not 0 <= self.t_min <= self.t_max <= self.t_total:
            raise ConfigError("weights.dssd", "need 0 <= t_min <= t_max <= t_total")
        if self.cfg_max < 7.5:
            raise ConfigError("weights.dssd.cfg_max", "must be >= 7.5")

    def omega_value(self, alpha_bar: float) -> float:
        if self.omega is OmegaMode.ONE_MINUS_ALPHA_BAR:
            return 1.0 - alpha_bar
        return 1.0


def forward_noise(x0: Tensor, eps: Tensor, t: int, provider: DiffusionScoreProvider) -> Tensor:
    """Forward diffusion: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * eps."""
    ab = provider.alpha_bar(t)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def dssd_residual(
    noised: Tensor,
    y,
    style: Optional[Tensor],
    t: int,
    cfg_scale: float,
    eps: Tensor,
    provider: DiffusionScoreProvider,
) -> Tensor:
    """CFG-mixed noise residual:
    (1 - cfg) * eps(noised | y, t) + cfg * eps(noised | y, style, t) - eps.
    """
    e_uncond = provider.predict_noise(noised, y, None, t)
    e_styled = provider.predict_noise(noised, y, style, t)
    if e_uncond.shape != noised.shape or e_styled.shape != noised.shape:
        raise ProviderContractError("predict_noise must preserve shape")
    return (1.0 - cfg_scale) * e_uncond + cfg_scale * e_styled - eps


@dataclass
class DistillTerms:
    """One render's distillation contribution.

    `surrogate` is the scalar whose autograd gradient equals the
    score-distillation gradient; `value` is the logged magnitude
    (weighted mean squared residual).
    """

    surrogate: Tensor
    value: float


def distill_terms(
    x_render: Tensor,
    style: Optional[Tensor],
    y,
    state: GuidanceState,
    cfg: DSSDConfig,
    provider: DiffusionScoreProvider,
    noise_generator: torch.Generator,
) -> DistillTerms:
    """Latent- and pixel-branch residuals for one rendered view.

    `x_render` must already carry the autograd graph back to the color
    parameters; the returned surrogate extends that graph.
    """
    t = state.timestep(cfg.t_total, cfg.t_min, cfg.t_max)
    cfg_scale = state.cfg_scale(cfg.cfg_max)
    omega = cfg.omega_value(provider.alpha_bar(t))

    surrogate = x_render.new_zeros(())
    value = 0.0
    if cfg.lambda_latent > 0:
        z = provider.encode(x_render)
        eps = torch.randn(z.shape, generator=noise_generator, dtype=z.dtype)
        z_t = forward_noise(z.detach(), eps, t, provider)
        r = dssd_residual(z_t, y, style, t, cfg_scale, eps, provider).detach()
        surrogate = surrogate + omega * cfg.lambda_latent * (r * z).sum()
        value += omega * cfg.lambda_latent * float((r * r).mean())
    if cfg.lambda_pixel > 0:
        eps = torch.randn(x_render.shape, generator=noise_generator, dtype=x_render.dtype)
        x_t = forward_noise(x_render.detach(), eps, t, provider)
        r = dssd_residual(x_t, y, style, t, cfg_scale, eps, provider).detach()
        surrogate = surrogate + omega * cfg.lambda_pixel * (r * x_render).sum()
        value += omega * cfg.lambda_pixel * float((r * r).mean())
    return DistillTerms(surrogate=surrogate, value=value)


@dataclass
class ColorGradient:
    """Distillation gradient restricted to the color parameters."""

    sh_dc: Tensor
    sh_rest: Tensor
    value: float


def dssd_color_gradient(
    cloud: GaussianCloud,
    view: CameraView,
    style: Optional[StyleEmbedding],
    state: GuidanceState,
    cfg: DSSDConfig,
    provider: DiffusionScoreProvider,
    noise_generator: Optional[torch.Generator] = None,
    background=(0.0, 0.0, 0.0),
    conditioning=None,
) -> ColorGradient:
    """Distillation gradient over the SH color coefficients for one view.

    Geometry never receives gradient: only the color tensors participate
    in the differentiated graph.
    """
    cfg.validate()
    if noise_generator is None:
        noise_generator = torch.Generator().manual_seed(0)
    sh_dc = cloud.sh_dc.detach().clone().requires_grad_(True)
    sh_rest = cloud.sh_rest.detach().clone().requires_grad_(True)
    work = cloud.with_colors(sh_dc, sh_rest)

    x = render(work, view, background).rgb
    style_vec = style.vector if style is not None else None
    terms = distill_terms(x, style_vec, conditioning, state, cfg, provider, noise_generator)

    if terms.surrogate.requires_grad:
        grads = torch.autograd.grad(terms.surrogate, [sh_dc, sh_rest], allow_unused=True)
    else:  # both branch weights zero
        grads = (None, None)
    grad_dc = grads[0] if grads[0] is not None else torch.zeros_like(sh_dc)
    grad_rest = grads[1] if grads[1] is not None else torch.zeros_like(sh_rest)
    return ColorGradient(sh_dc=grad_dc, sh_rest=grad_rest, value=terms.value)


@dataclass
class StyleObjective:
    """Assembled style loss: distillation + RGB guidance + mask terms."""

    surrogate: Tensor  # differentiate this
    value: float  # log this
    parts: dict = field(default_factory=dict)


def style_objective(
    renders: list,
    alphas: list,
    target_masks: Optional[list],
    guidance_views: Optional[list],
    cfg: DSSDConfig,
    distill: Optional[list] = None,
    rgb_active: bool = True,
    extractor=None,
) -> StyleObjective:
    """Combine the per-view style terms:

        lambda_dssd * L_distill + lambda_rgb * L_rgb + lambda_mask * L_mask
        (+ optional SSIM / perceptual alignment terms)

    L_rgb is the MSE between renders and their pre-stylized guidance views
    (only while `rgb_active`); L_mask is the MSE between rendered alpha and
    the target masks. The SSIM and perceptual terms align against the same
    guidance views; they are off by default (weights 0) and the perceptual
    term needs `extractor`. Raises ConfigError if guidance views are
    missing while an active term needs them.
    """
    if not renders:
        raise ValueError("need at least one render")
    zero = renders[0].new_zeros(())

    distill_surrogate = zero
    distill_value = 0.0
    if distill is not None:
        for term in distill:
            distill_surrogate = distill_surrogate + term.surrogate
            distill_value += term.value
        distill_surrogate = distill_surrogate / len(distill)
        distill_value /= len(distill)

    guidance_needed = rgb_active and (
        cfg.lambda_rgb > 0 or cfg.lambda_ssim > 0 or cfg.lambda_lpips > 0
    )
    if guidance_needed and (guidance_views is None or len(guidance_views) != len(renders)):
        raise ConfigError("style.guidance", "pre-stylized guidance views missing for RGB loss")

    rgb_loss = zero
    if cfg.lambda_rgb > 0 and rgb_active:
        rgb_loss = torch.stack(
            [((r - g) ** 2).mean() for r, g in zip(renders, guidance_views)]
        ).mean()

    ssim_loss = zero
    if cfg.lambda_ssim > 0 and rgb_active:
        from .metrics import ssim_tensor

        ssim_loss = torch.stack(
            [1.0 - ssim_tensor(r, g) for r, g in zip(renders, guidance_views)]
        ).mean()

    lpips_loss = zero
    if cfg.lambda_lpips > 0 and rgb_active:
        if extractor is None:
            raise ConfigError("weights.dssd.lambda_lpips", "perceptual term needs a feature extractor")
        from .metrics import lpips_tensor

        lpips_loss = torch.stack(
            [lpips_tensor(r, g, extractor) for r, g in zip(renders, guidance_views)]
        ).mean()

    mask_loss = zero
    if cfg.lambda_mask > 0 and target_masks is not None:
        mask_loss = torch.stack(
            [((a - m) ** 2).mean() for a, m in zip(alphas, target_masks)]
        ).mean()

    surrogate = (
        cfg.lambda_dssd * distill_surrogate
        + cfg.lambda_rgb * rgb_loss
        + cfg.lambda_mask * mask_loss
        + cfg.lambda_ssim * ssim_loss
        + cfg.lambda_lpips * lpips_loss
    )
    parts = {
        "dssd": distill_value,
        "rgb": float(rgb_loss.detach()),
        "mask": float(mask_loss.detach()),
        "ssim": float(ssim_loss.detach()),
        "lpips": float(lpips_loss.detach()),
    }
    value = (
        cfg.lambda_dssd * distill_value
        + cfg.lambda_rgb * parts["rgb"]
        + cfg.lambda_mask * parts["mask"]
        + cfg.lambda_ssim * parts["ssim"]
        + cfg.lambda_lpips * parts["lpips"]
    )
    return StyleObjective(surrogate=surrogate, value=value, parts=parts)
