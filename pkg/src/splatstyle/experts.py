"""Auxiliary style experts: multi-scale Gram texture loss, descriptor
cosine loss, and the antonym-prompt quality loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import torch
from torch import Tensor

from .errors import ConfigError, DegenerateEmbeddingError
from .providers import (
    EmbeddingProvider,
    FeatureExtractor,
    StyleDescriptorProvider,
    _as_image,
    resize_image,
)

_EPS = 1e-12


def gram(feature_map: Tensor) -> Tensor:
    """Gram matrix of a (C, H, W) feature map: F F^T over flattened positions.

    Symmetric positive semidefinite and invariant to any permutation of
    spatial positions. No normalization; layer weights carry the 1/C^2
    style scaling.
    """
    c = feature_map.shape[0]
    flat = feature_map.reshape(c, -1)
    return flat @ flat.T


@dataclass
class SOSConfig:
    """Multi-scale Gram loss configuration.

    Layer weights default to 1e3 / C_l^2 for the toy extractor channel
    counts (8, 16, 32, 64, 64). While `step` is below `pretrain_steps`
    only the single `pretrain_scale` is used (bilinear downsampling);
    afterwards all `scales` are active.
    """

    layer_ids: tuple = (0, 1, 2, 3, 4)
    layer_weights: tuple = tuple(1e3 / c**2 for c in (8, 16, 32, 64, 64))
    scales: tuple = (1.0, 0.5, 0.25)
    pretrain_steps: int = 10000
    pretrain_scale: float = 0.5

    @classmethod
    def three_layer(cls) -> "SOSConfig":
        """Preset using only the odd shallow layers."""
        return cls(layer_ids=(0, 2, 4), layer_weights=(1e3 / 64, 1e3 / 1024, 1e3 / 4096))

    def validate(self) -> None:
        if len(self.layer_ids) != len(self.layer_weights):
            raise ConfigError("sos.layer_weights", "must match sos.layer_ids in length")
        if any(w <= 0 for w in self.layer_weights):
            raise ConfigError("sos.layer_weights", "weights must be > 0")
        if any(not 0 < s <= 1 for s in self.scales):
            raise ConfigError("sos.scales", "scales must lie in (0, 1]")
        if not 0 < self.pretrain_scale <= 1:
            raise ConfigError("sos.pretrain_scale", "must lie in (0, 1]")

    def scales_for_step(self, step: Optional[int]) -> tuple:
        if step is not None and step < self.pretrain_steps:
            return (self.pretrain_scale,)
        return self.scales


def sos_loss(
    rendered_views: Sequence[Tensor],
    reference: Tensor,
    extractor: FeatureExtractor,
    cfg: SOSConfig,
    step: Optional[int] = None,
) -> Tensor:
    """Mean over views of the multi-scale Gram matching loss.

    At each scale both the view and the reference are resized (bilinear)
    to the view's scaled resolution, so their Gram matrices sum over the
    same number of positions.
    """
    if len(rendered_views) == 0:
        raise ValueError("need at least one view")
    cfg.validate()
    ref = _as_image(reference)
    scales = cfg.scales_for_step(step)

    total = None
    for view in rendered_views:
        img = _as_image(view)
        per_view = img.new_zeros(())
        for scale in scales:
            th = max(1, round(img.shape[0] * scale))
            tw = max(1, round(img.shape[1] * scale))
            if ref.shape[0] < th or ref.shape[1] < tw:
                raise ValueError(
                    f"reference {tuple(ref.shape[:2])} is smaller than the "
                    f"scale target ({th}, {tw})"
                )
            view_s = resize_image(img, th, tw)
            ref_s = resize_image(ref, th, tw).to(view_s.dtype)
            feats_v = extractor.features(view_s, cfg.layer_ids)
            feats_r = extractor.features(ref_s, cfg.layer_ids)
            for weight, fv, fr in zip(cfg.layer_weights, feats_v, feats_r):
                diff = gram(fv) - gram(fr)
                per_view = per_view + weight * (diff * diff).sum()
        total = per_view if total is None else total + per_view
    return total / len(rendered_views)


def csd_loss(
    rendered_views: Sequence[Tensor],
    reference: Tensor,
    provider: StyleDescriptorProvider,
) -> Tensor:
    """Mean over views of (1 - cosine similarity) between style descriptors."""
    if len(rendered_views) == 0:
        raise ValueError("need at least one view")
    ref_desc = provider.describe(_as_image(reference))
    ref_norm = torch.linalg.norm(ref_desc)
    if ref_norm <= _EPS:
        raise DegenerateEmbeddingError("reference style descriptor is zero")
    ref_unit = (ref_desc / ref_norm).detach()

    losses = []
    for view in rendered_views:
        desc = provider.describe(_as_image(view))
        norm = torch.linalg.norm(desc)
        if float(norm.detach()) <= _EPS:
            raise DegenerateEmbeddingError("rendered-view style descriptor is zero")
        losses.append(1.0 - (desc / norm * ref_unit).sum())
    return torch.stack(losses).mean()


@dataclass
class QAConfig:
    """Antonym prompt pairs and weights for the quality loss."""

    prompts: dict = field(
        default_factory=lambda: {
            "quality": ("Good photo.", "Bad photo."),
            "sharpness": ("Sharp photo.", "Blurry photo."),
            "colorfullness": ("Colorful photo.", "Dull photo."),
        }
    )
    weights: dict = field(
        default_factory=lambda: {"quality": 0.4, "sharpness": 0.4, "colorfullness": 0.2}
    )

    def validate(self) -> None:
        if set(self.prompts) != set(self.weights):
            raise ConfigError("qa.weights", "criteria must match qa.prompts")
        if any(w < 0 for w in self.weights.values()):
            raise ConfigError("qa.weights", "weights must be >= 0")
        if abs(sum(self.weights.values()) - 1.0) > 1e-9:
            raise ConfigError("qa.weights", "weights must sum to 1")


def clip_iqa_score(
    image: Tensor,
    positive_text: str,
    negative_text: str,
    provider: EmbeddingProvider,
) -> Tensor:
    """Antonym-prompt score: softmax over the two cosine similarities.

    s_i = cos(embed(image), embed(text_i));  score = e^{s1} / (e^{s1} + e^{s2}).
    Strictly inside (0, 1).
    """
    if not positive_text or not negative_text:
        raise ValueError("prompt texts must be non-empty")
    img_emb = provider.embed_image(_as_image(image))
    norm = torch.linalg.norm(img_emb)
    img_unit = img_emb / norm if float(norm.detach()) > _EPS else img_emb

    sims = []
    for text in (positive_text, negative_text):
        t_emb = provider.embed_text(text)
        t_norm = torch.linalg.norm(t_emb)
        t_unit = t_emb / t_norm if float(t_norm.detach()) > _EPS else t_emb
        sims.append((img_unit * t_unit).sum())
    s1, s2 = sims
    return torch.exp(s1) / (torch.exp(s1) + torch.exp(s2))


def qa_loss(
    rendered_views: Sequence[Tensor],
    cfg: QAConfig,
    provider: EmbeddingProvider,
) -> Tensor:
    """Mean over views of 1 - (weighted antonym scores across criteria)."""
    if len(rendered_views) == 0:
        raise ValueError("need at least one view")
    cfg.validate()
    losses = []
    for view in rendered_views:
        score = None
        for criterion, (pos, neg) in cfg.prompts.items():
            s = cfg.weights[criterion] * clip_iqa_score(view, pos, neg, provider)
            score = s if score is None else score + s
        losses.append(1.0 - score)
    return torch.stack(losses).mean()
