"""Embedding arithmetic that isolates style from a reference image.

The content described by a text prompt is subtracted from the image
embedding (and an optional style text is added back) in the shared
image/text embedding space. Each leg is normalized before the arithmetic
so the result is invariant to positive rescaling of raw provider outputs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import torch
from torch import Tensor

from .errors import DegenerateEmbeddingError
from .providers import EmbeddingProvider, _as_image

_EPS = 1e-8


@dataclass
class StyleEmbedding:
    """Unit-length style vector plus a record of how it was produced."""

    vector: Tensor
    provenance: dict = field(default_factory=dict)

    def validate(self) -> None:
        norm = float(torch.linalg.norm(self.vector))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"style embedding norm {norm} is not 1 within 1e-6")


def _normalized(vec: Tensor) -> Tensor:
    norm = torch.linalg.norm(vec)
    return vec / norm if norm > _EPS else vec


def clean_style(
    style_image,
    content_text: str,
    style_text: Optional[str] = None,
    provider: EmbeddingProvider = None,
) -> StyleEmbedding:
    """Isolate a pure style embedding from a reference image.

    Computes normalize(image_emb - content_emb [+ style_emb]) with each leg
    normalized first. Raises DegenerateEmbeddingError when the arithmetic
    cancels to (near) zero.
    """
    if not content_text:
        raise ValueError("content_text must be non-empty")
    img = _as_image(style_image)

    image_leg = _normalized(provider.embed_image(img))
    content_leg = _normalized(provider.embed_text(content_text))
    combined = image_leg - content_leg
    style_leg = None
    if style_text is not None:
        style_leg = _normalized(provider.embed_text(style_text))
        combined = combined + style_leg

    norm = torch.linalg.norm(combined)
    if norm <= _EPS:
        raise DegenerateEmbeddingError("style and content embeddings cancelled out")

    source_id = hashlib.sha256(img.detach().numpy().tobytes()).hexdigest()[:16]
    provenance = {
        "source_image": source_id,
        "content_text": content_text,
        "style_text": style_text,
        "image_leg": image_leg,
        "content_leg": content_leg,
        "style_leg": style_leg,
        "raw": combined,
    }
    return StyleEmbedding(vector=combined / norm, provenance=provenance)
