"""Neural-prior provider interfaces and their deterministic toy backends.

Every prior the losses consume (image/text embeddings, convolutional
features, style descriptors, diffusion noise prediction, image-to-image
stylization) sits behind a small interface. The toy backends below are
seeded, bit-deterministic, and need no weights on disk; they exist so the
whole optimization stack can be exercised hermetically. Real pretrained
backends plug in behind the same interfaces as lazily-imported adapters.

All image arguments are (H, W, 3) float tensors in linear [0, 1]-ish range;
toy backends are differentiable through their image inputs.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import torch
import torch.nn.functional as F
from torch import Tensor

from .errors import ProviderContractError


def _seeded_generator(*parts) -> torch.Generator:
    """Generator seeded from a stable hash of the given parts."""
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    gen = torch.Generator()
    gen.manual_seed(int.from_bytes(digest[:8], "little", signed=False) % (2**63))
    return gen


def _as_image(image) -> Tensor:
    img = torch.as_tensor(image, dtype=torch.float64) if not torch.is_tensor(image) else image
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {tuple(img.shape)}")
    return img


def resize_image(image: Tensor, height: int, width: int) -> Tensor:
    """Bilinear resize of an (H, W, 3) image; differentiable."""
    if image.shape[0] == height and image.shape[1] == width:
        return image
    chw = image.permute(2, 0, 1)[None]
    out = F.interpolate(chw, size=(height, width), mode="bilinear", align_corners=False)
    return out[0].permute(1, 2, 0)


def _nearest_grid(image: Tensor, grid: int) -> Tensor:
    """Nearest-neighbor sample of an image onto a grid x grid lattice."""
    h, w = image.shape[0], image.shape[1]
    rows = torch.clamp(((torch.arange(grid) + 0.5) * h / grid).long(), max=h - 1)
    cols = torch.clamp(((torch.arange(grid) + 0.5) * w / grid).long(), max=w - 1)
    return image[rows][:, cols]


# ---------------------------------------------------------------------------
# Interfaces


class EmbeddingProvider:
    """Maps images and texts into one shared embedding space."""

    dimension: int

    def embed_image(self, image) -> Tensor:
        raise NotImplementedError

    def embed_text(self, text: str) -> Tensor:
        raise NotImplementedError


class FeatureExtractor:
    """Multi-layer convolutional feature maps with declared channel counts."""

    channel_counts: tuple

    def features(self, image, layer_ids: Sequence[int]) -> list:
        raise NotImplementedError


class StyleDescriptorProvider:
    """Style-descriptor vectors for images."""

    def describe(self, image) -> Tensor:
        raise NotImplementedError


class DiffusionScoreProvider:
    """Noise prediction plus latent encode/decode and the noise schedule."""

    t_total: int

    def predict_noise(self, noised, y, style, t: int) -> Tensor:
        raise NotImplementedError

    def encode(self, image) -> Tensor:
        raise NotImplementedError

    def decode(self, latent) -> Tensor:
        raise NotImplementedError

    def alpha_bar(self, t: int) -> float:
        raise NotImplementedError


class StylizedViewProvider:
    """Pre-stylized versions of rendered views, for pixel-level guidance."""

    def stylize(self, image, style_reference) -> Tensor:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Toy backends


class ToyEmbeddingProvider(EmbeddingProvider):
    """Fixed random linear map of downsampled pixels / hashed bag of tokens.

    Images: nearest-sampled to an 8x8 grid, flattened, multiplied by a
    seeded random matrix, L2-normalized. Texts: sum of per-token seeded
    vectors, L2-normalized; a tokenless text embeds to the zero vector.
    """

    GRID = 8

    def __init__(self, seed: int, dimension: int = 32):
        if dimension < 2:
            raise ValueError("embedding dimension must be >= 2")
        self.seed = seed
        self.dimension = dimension
        fan_in = self.GRID * self.GRID * 3
        self._weight = torch.randn(
            (dimension, fan_in), generator=_seeded_generator("embed-image", seed), dtype=torch.float64
        ) / math.sqrt(fan_in)

    def embed_image(self, image) -> Tensor:
        img = _as_image(image)
        flat = _nearest_grid(img, self.GRID).reshape(-1)
        vec = self._weight.to(flat.dtype) @ flat
        norm = torch.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def embed_text(self, text: str) -> Tensor:
        tokens = text.lower().split()
        vec = torch.zeros(self.dimension, dtype=torch.float64)
        for token in tokens:
            vec = vec + torch.randn(
                self.dimension,
                generator=_seeded_generator("embed-text", self.seed, token),
                dtype=torch.float64,
            )
        norm = torch.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


class ToyFeatureExtractor(FeatureExtractor):
    """Stack of fixed random convolutions with half-resolution pooling.

    Layer 0 is a 1x1 (per-pixel) convolution at full resolution; each
    deeper layer applies 2x2 average pooling followed by a 3x3 convolution
    with replicate padding, so layer l sits at 1/2^l of the input size.
    """

    channel_counts = (8, 16, 32, 64, 64)

    def __init__(self, seed: int):
        self.seed = seed
        self._kernels = []
        in_ch = 3
        for layer, out_ch in enumerate(self.channel_counts):
            k = 1 if layer == 0 else 3
            fan_in = in_ch * k * k
            weight = torch.randn(
                (out_ch, in_ch, k, k),
                generator=_seeded_generator("features", seed, layer),
                dtype=torch.float64,
            ) / math.sqrt(fan_in)
            self._kernels.append(weight)
            in_ch = out_ch

    def features(self, image, layer_ids: Sequence[int]) -> list:
        if not layer_ids:
            return []
        for lid in layer_ids:
            if not 0 <= lid < len(self.channel_counts):
                raise ValueError(f"unknown feature layer {lid}")
        img = _as_image(image)
        x = img.permute(2, 0, 1)[None]
        maps = {}
        for layer, weight in enumerate(self._kernels):
            if layer > 0:
                if x.shape[2] >= 2 and x.shape[3] >= 2:
                    x = F.avg_pool2d(x, 2)
                x = F.pad(x, (1, 1, 1, 1), mode="replicate")
            x = F.conv2d(x, weight.to(x.dtype))
            maps[layer] = x[0]
            if layer == max(layer_ids):
                break
        return [maps[lid] for lid in layer_ids]


class ToyStyleDescriptor(StyleDescriptorProvider):
    """Seeded random linear map of downsampled pixels; unnormalized output."""

    GRID = 8

    def __init__(self, seed: int, dimension: int = 64):
        self.dimension = dimension
        fan_in = self.GRID * self.GRID * 3
        self._weight = torch.randn(
            (dimension, fan_in), generator=_seeded_generator("descriptor", seed), dtype=torch.float64
        ) / math.sqrt(fan_in)

    def describe(self, image) -> Tensor:
        img = _as_image(image)
        flat = _nearest_grid(img, self.GRID).reshape(-1)
        return self._weight.to(flat.dtype) @ flat


class ToyScoreProvider(DiffusionScoreProvider):
    """Denoiser whose implied clean image is always a fixed target.

    predict_noise inverts the forward process against `target_image`
    (resized to the input shape), so score-distillation on this provider
    must drive renders toward the target. Passing a style embedding shifts
    the implied target by a fixed seeded perturbation, which makes the
    two branches of classifier-free guidance mixing distinguishable.

    The noise schedule is an unnormalized cosine alpha-bar, strictly inside
    (0, 1) at t=0 so no timestep is singular.
    """

    COSINE_S = 0.008

    def __init__(self, target_image, t_total: int = 1000, style_shift: float = 0.05, seed: int = 0):
        if t_total < 2:
            raise ValueError("t_total must be >= 2")
        self.target_image = _as_image(target_image).detach().clone()
        self.t_total = t_total
        self.style_shift = style_shift
        self._delta = torch.randn(
            self.target_image.shape,
            generator=_seeded_generator("score-style", seed),
            dtype=torch.float64,
        )

    def alpha_bar(self, t: int) -> float:
        self._check_t(t)
        s = self.COSINE_S
        return math.cos(((t / self.t_total + s) / (1 + s)) * math.pi / 2) ** 2

    def _check_t(self, t: int) -> None:
        if not 0 <= t <= self.t_total:
            raise ValueError(f"timestep {t} outside [0, {self.t_total}]")

    def _target_for(self, shape, style: Optional[Tensor]) -> Tensor:
        tgt = self.target_image
        if style is not None:
            tgt = tgt + self.style_shift * self._delta
        return resize_image(tgt, shape[0], shape[1])

    def predict_noise(self, noised, y, style, t: int) -> Tensor:
        self._check_t(t)
        x_t = _as_image(noised)
        tgt = self._target_for(x_t.shape, style).to(x_t.dtype)
        ab = self.alpha_bar(t)
        pred = (x_t - math.sqrt(ab) * tgt) / math.sqrt(1.0 - ab)
        if pred.shape != x_t.shape:
            raise ProviderContractError("noise prediction changed shape")
        return pred

    def encode(self, image) -> Tensor:
        return _as_image(image).clone()

    def decode(self, latent) -> Tensor:
        return _as_image(latent).clone()


class ToyStylizedViewProvider(StylizedViewProvider):
    """Blend of the input view with the resized style reference."""

    def __init__(self, strength: float = 0.8):
        if not 0.0 <= strength <= 1.0:
            raise ValueError("strength must lie in [0, 1]")
        self.strength = strength

    def stylize(self, image, style_reference) -> Tensor:
        img = _as_image(image)
        ref = resize_image(_as_image(style_reference), img.shape[0], img.shape[1]).to(img.dtype)
        return (1.0 - self.strength) * img + self.strength * ref


# ---------------------------------------------------------------------------
# Provider bundles


@dataclass
class ProviderSet:
    """Everything the optimization loop consumes, grouped."""

    embedding: EmbeddingProvider
    features: FeatureExtractor
    descriptor: StyleDescriptorProvider
    score: DiffusionScoreProvider
    stylizer: Optional[StylizedViewProvider] = None


def toy_providers(
    score_target,
    seed: int = 0,
    *,
    embed_dim: int = 32,
    descriptor_dim: int = 64,
    t_total: int = 1000,
    style_shift: float = 0.05,
    stylize_strength: float = 0.8,
) -> ProviderSet:
    """The full deterministic toy stack, with sub-seeds derived from `seed`."""
    return ProviderSet(
        embedding=ToyEmbeddingProvider(seed + 1, embed_dim),
        features=ToyFeatureExtractor(seed + 2),
        descriptor=ToyStyleDescriptor(seed + 3, descriptor_dim),
        score=ToyScoreProvider(score_target, t_total, style_shift, seed + 4),
        stylizer=ToyStylizedViewProvider(stylize_strength),
    )


# ---------------------------------------------------------------------------
# Adapters for real pretrained backends (lazy; never used by the toy suite)


class ClipEmbeddingAdapter(EmbeddingProvider):
    """CLIP image/text embeddings via `transformers`. Loaded lazily.

    Weight caches honor the SPLATSTYLE_CACHE environment variable.
    """

    def __init__(self, model_name: str = "openai/clip-vit-base-patch32"):
        try:
            from transformers import CLIPModel, CLIPProcessor  # noqa: F401
        except ImportError as exc:  # pragma: no cover - needs external weights
            raise RuntimeError(
                "ClipEmbeddingAdapter requires the 'transformers' package and "
                "downloaded CLIP weights; install them or use the toy backend"
            ) from exc
        raise NotImplementedError(
            "external CLIP backend wiring is deployment-specific; "
            "subclass and implement embed_image/embed_text against your checkout"
        )


class VggFeatureAdapter(FeatureExtractor):
    """Adapter slot for VGG-19 shallow-layer features via `torchvision`."""

    def __init__(self, *args, **kwargs):  # pragma: no cover - needs external weights
        try:
            from torchvision.models import vgg19  # noqa: F401
        except ImportError as exc:
            raise RuntimeError(
                "VggFeatureAdapter requires torchvision with VGG-19 weights; "
                "install them or use the toy backend"
            ) from exc
        raise NotImplementedError(
            "map your VGG checkout onto FeatureExtractor.features; "
            "declare channel_counts to match the chosen layers"
        )


class StyleVitDescriptorAdapter(StyleDescriptorProvider):
    """Adapter slot for a contrastively-trained ViT style encoder."""

    def __init__(self, *args, **kwargs):  # pragma: no cover - needs external weights
        raise NotImplementedError(
            "wire your ViT style encoder behind StyleDescriptorProvider.describe"
        )


class DiffusionScoreAdapter(DiffusionScoreProvider):
    """Adapter slot for a style-conditioned latent-diffusion denoiser.

    The checkpoint and conditioning stack are user-supplied. A latent-space
    UNet consuming pixel input must document its own convention; the
    recommended one is re-encode then predict.
    """

    def __init__(self, *args, **kwargs):  # pragma: no cover - needs external weights
        raise NotImplementedError(
            "wire your diffusion checkpoint behind DiffusionScoreProvider; "
            "see ToyScoreProvider for the required surface"
        )


class Image2ImageStylizerAdapter(StylizedViewProvider):
    """Adapter slot for an image-to-image stylization model producing the
    pre-stylized guidance views."""

    def __init__(self, *args, **kwargs):  # pragma: no cover - needs external weights
        raise NotImplementedError(
            "wire your image stylizer behind StylizedViewProvider.stylize"
        )
