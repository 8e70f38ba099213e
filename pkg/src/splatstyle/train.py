"""The optimization loop: composes the four experts, walks the phase
timetable, and updates only the SH color coefficients.

Geometry tensors are never handed to the optimizer; the output cloud
shares them with the input, so the freeze is structural, not a runtime
check.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
from torch import Tensor

from .cloud import GaussianCloud
from .distill import DSSDConfig, distill_terms, style_objective
from .errors import ConfigError, NonFiniteLossError
from .experts import QAConfig, SOSConfig, csd_loss, qa_loss, sos_loss
from .providers import ProviderSet, _seeded_generator
from .render import render, render_mask
from .schedule import (
    GuidanceState,
    ModeTimetable,
    Phase,
    view_order_indices,
)
from .style_clean import StyleEmbedding


@dataclass
class ExpertWeights:
    """Multi-task coefficients for the composite objective."""

    style: float = 1.0  # distillation block (DSSD + RGB + mask)
    sos: float = 10.0  # multi-scale Gram expert
    csd: float = 1.0  # style-descriptor expert
    qa: float = 0.5  # quality expert
    dssd: DSSDConfig = field(default_factory=DSSDConfig)

    def validate(self) -> None:
        for name in ("style", "sos", "csd", "qa"):
            if getattr(self, name) < 0:
                raise ConfigError(f"weights.{name}", "must be >= 0")
        if self.style == 0 and self.sos == 0 and self.csd == 0 and self.qa == 0:
            raise ConfigError("weights", "all expert weights are zero; nothing to optimize")
        self.dssd.validate()


@dataclass
class StyleBundle:
    """Everything style-side the loop needs: the reference image, the
    cleaned embedding, descriptor texts, and optional per-view guidance."""

    reference_image: Tensor
    embedding: Optional[StyleEmbedding] = None
    content_text: str = ""
    style_text: Optional[str] = None
    guidance_views: Optional[list] = None  # aligned with the views list
    target_masks: Optional[list] = None  # aligned with the views list


@dataclass
class TrainSettings:
    """Loop configuration independent of the loss weights."""

    timetable: ModeTimetable
    n_opt: int = 10
    view_start: int = 0
    lr_dc: float = 2.5e-3
    lr_rest: float = 1.25e-4
    optimize_sh_rest: bool = True
    background: tuple = (0.0, 0.0, 0.0)
    seed: int = 0
    mask_threshold: float = 0.5
    sos: SOSConfig = field(default_factory=SOSConfig)
    qa: QAConfig = field(default_factory=QAConfig)
    checkpoint_every: int = 0
    checkpoint_dir: Optional[Path] = None
    max_steps: Optional[int] = None  # truncate the timetable (0 = no optimization)
    # called as (step, phase, current cloud) when a new timetable entry begins
    preview_hook: Optional[Callable] = None


class RunRecord:
    """Per-step scalars of one optimization run."""

    FIELDS = (
        "step",
        "phase",
        "mode",
        "view_index",
        "alpha_step",
        "timestep",
        "cfg_scale",
        "loss_total",
        "loss_style",
        "loss_dssd",
        "loss_rgb",
        "loss_mask",
        "loss_ssim",
        "loss_lpips",
        "loss_sos",
        "loss_csd",
        "loss_qa",
        "grad_norm",
    )

    def __init__(self):
        self.steps: list = []

    def append(self, row: dict) -> None:
        self.steps.append(row)

    def __len__(self) -> int:
        return len(self.steps)

    def grad_norms(self) -> list:
        return [row["grad_norm"] for row in self.steps]

    def write_jsonl(self, path) -> None:
        with open(path, "w") as f:
            for row in self.steps:
                f.write(json.dumps(row, sort_keys=True) + "\n")

    def summary(self) -> dict:
        if not self.steps:
            return {"steps": 0}
        first, last = self.steps[0], self.steps[-1]
        out = {
            "steps": len(self.steps),
            "loss_start": first["loss_total"],
            "loss_end": last["loss_total"],
            "final": {k: last[k] for k in ("loss_total", "loss_sos", "loss_csd", "loss_qa", "loss_style")},
        }
        if first["loss_total"] > 0:
            out["loss_reduction"] = 1.0 - last["loss_total"] / first["loss_total"]
        if len(self.steps) >= 2:
            deltas = oscillation_metric(self)
            out["grad_oscillation"] = {
                "mean": sum(deltas) / len(deltas),
                "max": max(deltas),
            }
        return out


def oscillation_metric(record: RunRecord) -> list:
    """Instability series of the gradient norms: delta_t = |g_{t+1} - g_t|."""
    norms = record.grad_norms()
    if len(norms) < 2:
        raise ValueError("need at least two recorded steps")
    return [abs(b - a) for a, b in zip(norms, norms[1:])]


@dataclass
class CompositeResult:
    total: float
    parts: dict
    grad_dc: Tensor
    grad_rest: Tensor
    grad_norm: float


def _composite_terms(
    work: GaussianCloud,
    views: list,
    bundle: StyleBundle,
    weights: ExpertWeights,
    providers: ProviderSet,
    state: GuidanceState,
    *,
    sos_cfg: SOSConfig,
    qa_cfg: QAConfig,
    guidance: Optional[list],
    masks: Optional[list],
    rgb_active: bool,
    dssd_active: bool,
    sos_step: Optional[int],
    noise_generator: torch.Generator,
    background,
):
    """Render the scheduled views and assemble surrogate + logged values."""
    renders, alphas = [], []
    for v in views:
        out = render(work, v, background)
        renders.append(out.rgb)
        alphas.append(out.alpha)
    zero = renders[0].new_zeros(())

    distills: Optional[list] = None
    dssd_cfg = weights.dssd
    if (
        dssd_active
        and weights.style > 0
        and dssd_cfg.lambda_dssd > 0
        and (dssd_cfg.lambda_latent > 0 or dssd_cfg.lambda_pixel > 0)
    ):
        style_vec = bundle.embedding.vector if bundle.embedding is not None else None
        distills = [
            distill_terms(
                r, style_vec, bundle.content_text, state, dssd_cfg, providers.score, noise_generator
            )
            for r in renders
        ]

    style = style_objective(
        renders,
        alphas,
        masks,
        guidance,
        dssd_cfg,
        distills,
        rgb_active=rgb_active,
        extractor=providers.features,
    )
    sos = (
        sos_loss(renders, bundle.reference_image, providers.features, sos_cfg, sos_step)
        if weights.sos > 0
        else zero
    )
    csd = (
        csd_loss(renders, bundle.reference_image, providers.descriptor)
        if weights.csd > 0
        else zero
    )
    qa = qa_loss(renders, qa_cfg, providers.embedding) if weights.qa > 0 else zero

    surrogate = (
        weights.style * style.surrogate + weights.sos * sos + weights.csd * csd + weights.qa * qa
    )
    parts = {
        "loss_style": weights.style * style.value,
        "loss_dssd": style.parts["dssd"],
        "loss_rgb": style.parts["rgb"],
        "loss_mask": style.parts["mask"],
        "loss_ssim": style.parts["ssim"],
        "loss_lpips": style.parts["lpips"],
        "loss_sos": weights.sos * float(sos.detach()),
        "loss_csd": weights.csd * float(csd.detach()),
        "loss_qa": weights.qa * float(qa.detach()),
    }
    total = parts["loss_style"] + parts["loss_sos"] + parts["loss_csd"] + parts["loss_qa"]
    return surrogate, total, parts


def composite_loss(
    cloud: GaussianCloud,
    views: list,
    bundle: StyleBundle,
    weights: ExpertWeights,
    providers: ProviderSet,
    state: GuidanceState,
    *,
    sos_cfg: Optional[SOSConfig] = None,
    qa_cfg: Optional[QAConfig] = None,
    rgb_active: bool = False,
    dssd_active: bool = True,
    sos_step: Optional[int] = None,
    noise_generator: Optional[torch.Generator] = None,
    background=(0.0, 0.0, 0.0),
) -> CompositeResult:
    """One evaluation of the four-expert objective with gradients over the
    color coefficients only."""
    weights.validate()
    sos_cfg = sos_cfg if sos_cfg is not None else SOSConfig()
    qa_cfg = qa_cfg if qa_cfg is not None else QAConfig()
    if noise_generator is None:
        noise_generator = _seeded_generator("composite-noise", 0)

    sh_dc = cloud.sh_dc.detach().clone().requires_grad_(True)
    sh_rest = cloud.sh_rest.detach().clone().requires_grad_(True)
    work = cloud.with_colors(sh_dc, sh_rest)

    surrogate, total, parts = _composite_terms(
        work,
        views,
        bundle,
        weights,
        providers,
        state,
        sos_cfg=sos_cfg,
        qa_cfg=qa_cfg,
        guidance=bundle.guidance_views,
        masks=bundle.target_masks,
        rgb_active=rgb_active,
        dssd_active=dssd_active,
        sos_step=sos_step,
        noise_generator=noise_generator,
        background=background,
    )

    if surrogate.requires_grad:
        grads = torch.autograd.grad(surrogate, [sh_dc, sh_rest], allow_unused=True)
    else:
        grads = (None, None)
    grad_dc = grads[0] if grads[0] is not None else torch.zeros_like(sh_dc)
    grad_rest = grads[1] if grads[1] is not None else torch.zeros_like(sh_rest)
    norm = math.sqrt(float((grad_dc**2).sum()) + float((grad_rest**2).sum()))
    return CompositeResult(total=total, parts=parts, grad_dc=grad_dc, grad_rest=grad_rest, grad_norm=norm)


def _needs_guidance(timetable: ModeTimetable, dssd_cfg: DSSDConfig) -> bool:
    if dssd_cfg.lambda_rgb <= 0 and dssd_cfg.lambda_ssim <= 0 and dssd_cfg.lambda_lpips <= 0:
        return False
    return any(e.rgb_overlay or e.phase is Phase.LOCAL_RGB for e in timetable.entries)


def save_checkpoint(directory, step: int, cloud: GaussianCloud, optimizer, seed: int) -> None:
    """PLY snapshot plus a sidecar with step id, seed, and optimizer moments."""
    from .ply_io import save_ply

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_ply(cloud, directory / f"checkpoint_{step:06d}.ply")
    arrays = {}
    for idx, st in optimizer.state_dict()["state"].items():
        arrays[f"exp_avg_{idx}"] = st["exp_avg"].numpy()
        arrays[f"exp_avg_sq_{idx}"] = st["exp_avg_sq"].numpy()
        arrays[f"step_count_{idx}"] = np.asarray(float(st["step"]))
    np.savez(
        directory / f"checkpoint_{step:06d}.state.npz",
        step=np.asarray(step),
        seed=np.asarray(seed),
        **arrays,
    )


def stylize(
    cloud: GaussianCloud,
    views: list,
    bundle: StyleBundle,
    weights: ExpertWeights,
    settings: TrainSettings,
    providers: ProviderSet,
) -> tuple:
    """Run the timetable and return (stylized cloud, run record).

    Each step optimizes the scheduled view: LOCAL phases dwell n_opt steps
    per view, GLOBAL phases sweep the ring one view per step (free-mode
    sweeps reshuffle with a seeded permutation). Updates touch only the SH
    color coefficients; the returned cloud shares the input's geometry
    tensors.
    """
    cloud.validate()
    weights.validate()
    settings.sos.validate()
    settings.qa.validate()
    for view in views:
        view.validate()
    if not views:
        raise ConfigError("scene.cameras", "need at least one camera")

    n_view = len(views)
    timetable = settings.timetable
    order = view_order_indices(views, settings.view_start)

    masks = bundle.target_masks
    if masks is None and weights.dssd.lambda_mask > 0:
        masks = [render_mask(cloud, v, settings.mask_threshold) for v in views]

    guidance = bundle.guidance_views
    if guidance is None and _needs_guidance(timetable, weights.dssd):
        if providers.stylizer is None:
            raise ConfigError("providers.stylizer", "RGB guidance scheduled but no stylizer backend")
        guidance = [
            providers.stylizer.stylize(
                render(cloud, v, settings.background).rgb.detach(), bundle.reference_image
            )
            for v in views
        ]

    sh_dc = cloud.sh_dc.detach().clone().requires_grad_(True)
    sh_rest = cloud.sh_rest.detach().clone()
    optimize_rest = settings.optimize_sh_rest and sh_rest.numel() > 0
    if optimize_rest:
        sh_rest.requires_grad_(True)
    work = cloud.with_colors(sh_dc, sh_rest)

    groups = [{"params": [sh_dc], "lr": settings.lr_dc}]
    if optimize_rest:
        groups.append({"params": [sh_rest], "lr": settings.lr_rest})
    optimizer = torch.optim.Adam(groups)

    noise_generator = _seeded_generator("noise", settings.seed)
    record = RunRecord()

    total_steps = timetable.total_steps
    if settings.max_steps is not None:
        total_steps = min(total_steps, settings.max_steps)

    for i_step in range(total_steps):
        entry = timetable.entry_at(i_step)
        phase = entry.phase
        mode = phase.mode
        if settings.preview_hook is not None and i_step == entry.start:
            snapshot = cloud.with_colors(sh_dc.detach().clone(), sh_rest.detach().clone())
            settings.preview_hook(i_step, phase, snapshot)
        state = GuidanceState(i_step=i_step, n_view=n_view, n_opt=settings.n_opt, mode=mode)

        if phase in (Phase.LOCAL, Phase.LOCAL_RGB):
            pos = (i_step // settings.n_opt) % n_view
            view_idx = order[pos]
        elif phase is Phase.GLOBAL_FREE:
            sweep = i_step // n_view
            perm = torch.randperm(
                n_view, generator=_seeded_generator("sweep", settings.seed, sweep)
            )
            view_idx = order[int(perm[i_step % n_view])]
        else:  # GLOBAL_FIX / GLOBAL_ADAPTIVE
            view_idx = order[i_step % n_view]

        rgb_active = entry.rgb_overlay or phase is Phase.LOCAL_RGB
        dssd_active = phase is not Phase.LOCAL_RGB

        surrogate, total, parts = _composite_terms(
            work,
            [views[view_idx]],
            bundle,
            weights,
            providers,
            state,
            sos_cfg=settings.sos,
            qa_cfg=settings.qa,
            guidance=[guidance[view_idx]] if guidance is not None else None,
            masks=[masks[view_idx]] if masks is not None else None,
            rgb_active=rgb_active,
            dssd_active=dssd_active,
            sos_step=i_step,
            noise_generator=noise_generator,
            background=settings.background,
        )

        if not math.isfinite(total):
            raise NonFiniteLossError(
                f"non-finite loss {total} at step {i_step} (phase {phase.value})", record=record
            )

        optimizer.zero_grad()
        if surrogate.requires_grad:
            surrogate.backward()
        grad_sq = float((sh_dc.grad**2).sum()) if sh_dc.grad is not None else 0.0
        if optimize_rest and sh_rest.grad is not None:
            grad_sq += float((sh_rest.grad**2).sum())
        optimizer.step()

        row = {
            "step": i_step,
            "phase": phase.value,
            "mode": mode.value,
            "view_index": view_idx,
            "alpha_step": state.alpha,
            "timestep": state.timestep(
                weights.dssd.t_total, weights.dssd.t_min, weights.dssd.t_max
            ),
            "cfg_scale": state.cfg_scale(weights.dssd.cfg_max),
            "loss_total": total,
            "grad_norm": math.sqrt(grad_sq),
        }
        row.update(parts)
        record.append(row)

        if (
            settings.checkpoint_every > 0
            and settings.checkpoint_dir is not None
            and (i_step + 1) % settings.checkpoint_every == 0
        ):
            snapshot = cloud.with_colors(sh_dc.detach().clone(), sh_rest.detach().clone())
            save_checkpoint(settings.checkpoint_dir, i_step + 1, snapshot, optimizer, settings.seed)

    result = cloud.with_colors(sh_dc.detach().clone(), sh_rest.detach().clone())
    return result, record
