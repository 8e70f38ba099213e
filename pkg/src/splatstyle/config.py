"""Run configuration: TOML parsing, validation, and provider wiring.

All paths in a config are resolved relative to the config file's own
directory, so experiment folders can be moved around freely. Seeds are
mandatory; there is no wall-clock fallback anywhere.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .distill import DSSDConfig, OmegaMode
from .errors import ConfigError
from .experts import QAConfig, SOSConfig
from .images import load_image
from .providers import ProviderSet, toy_providers
from .schedule import ModeTimetable, Phase, TimetableEntry, default_timetable
from .train import ExpertWeights, TrainSettings

_KNOWN_SECTIONS = {
    "scene",
    "style",
    "providers",
    "schedule",
    "weights",
    "sos",
    "qa",
    "optim",
    "render",
    "seeds",
    "output",
}


@dataclass
class RunConfig:
    """Validated contents of a stylization run config."""

    scene_ply: Path
    cameras: Path
    style_image: Path
    content_text: str
    style_text: Optional[str]
    backend: str
    embed_dim: int
    descriptor_dim: int
    style_shift: float
    stylize_strength: float
    score_target: str
    n_opt: int
    view_start: int
    timetable: ModeTimetable
    weights: ExpertWeights
    sos: SOSConfig
    qa: QAConfig
    lr_dc: float
    lr_rest: float
    optimize_sh_rest: bool
    background: tuple
    mask_threshold: float
    seed: int
    out_dir: Path
    previews: bool
    checkpoint_every: int


def _section(data: dict, name: str, required: bool = True) -> dict:
    if name not in data:
        if required:
            raise ConfigError(name, "missing required section")
        return {}
    value = data[name]
    if not isinstance(value, dict):
        raise ConfigError(name, "must be a table")
    return dict(value)


def _take(table: dict, section: str, key: str, kind, default=..., required: bool = False):
    if key not in table:
        if required or default is ...:
            raise ConfigError(f"{section}.{key}", "missing required key")
        return default
    value = table.pop(key)
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(f"{section}.{key}", f"expected {getattr(kind, '__name__', kind)}")
    return value


def _reject_unknown(table: dict, section: str) -> None:
    if table:
        raise ConfigError(f"{section}.{next(iter(table))}", "unknown key")


def _parse_timetable(raw: list) -> ModeTimetable:
    entries = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict):
            raise ConfigError("schedule.timetable", f"entry {i} must be a table")
        item = dict(item)
        start = _take(item, "schedule.timetable", "start", int, required=True)
        end = _take(item, "schedule.timetable", "end", int, required=True)
        phase_name = _take(item, "schedule.timetable", "phase", str, required=True)
        overlay = _take(item, "schedule.timetable", "rgb_overlay", bool, default=False)
        _reject_unknown(item, f"schedule.timetable[{i}]")
        try:
            phase = Phase(phase_name)
        except ValueError as exc:
            raise ConfigError(
                "schedule.timetable", f"unknown phase {phase_name!r} in entry {i}"
            ) from exc
        entries.append(TimetableEntry(start, end, phase, overlay))
    return ModeTimetable(entries)


def load_run_config(path) -> RunConfig:
    """Parse and validate a TOML run config. Raises ConfigError naming the
    offending key on any problem."""
    path = Path(path)
    base = path.parent
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(str(path), "config file not found")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"TOML parse error: {exc}")

    unknown = set(data) - _KNOWN_SECTIONS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown section")

    scene = _section(data, "scene")
    scene_ply = base / _take(scene, "scene", "ply", str, required=True)
    cameras = base / _take(scene, "scene", "cameras", str, required=True)
    _reject_unknown(scene, "scene")

    style = _section(data, "style")
    style_image = base / _take(style, "style", "image", str, required=True)
    content_text = _take(style, "style", "content_text", str, required=True)
    style_text = _take(style, "style", "style_text", str, default=None)
    _reject_unknown(style, "style")
    if not content_text:
        raise ConfigError("style.content_text", "must be non-empty")

    providers = _section(data, "providers", required=False)
    backend = _take(providers, "providers", "backend", str, default="toy")
    if backend not in ("toy", "external"):
        raise ConfigError("providers.backend", f"unknown backend {backend!r}")
    embed_dim = _take(providers, "providers", "embed_dim", int, default=32)
    descriptor_dim = _take(providers, "providers", "descriptor_dim", int, default=64)
    style_shift = _take(providers, "providers", "style_shift", float, default=0.05)
    stylize_strength = _take(providers, "providers", "stylize_strength", float, default=0.8)
    score_target = _take(providers, "providers", "score_target", str, default="style")
    _reject_unknown(providers, "providers")
    if score_target != "style":
        score_path = base / score_target
        if not score_path.exists():
            raise ConfigError("providers.score_target", f"file not found: {score_path}")
        score_target = str(score_path)

    schedule = _section(data, "schedule", required=False)
    n_opt = _take(schedule, "schedule", "n_opt", int, default=10)
    view_start = _take(schedule, "schedule", "view_start", int, default=0)
    raw_timetable = _take(schedule, "schedule", "timetable", list, default=None)
    _reject_unknown(schedule, "schedule")
    if n_opt < 1:
        raise ConfigError("schedule.n_opt", "must be >= 1")
    timetable = _parse_timetable(raw_timetable) if raw_timetable is not None else default_timetable()

    wtab = _section(data, "weights", required=False)
    dssd_tab = wtab.pop("dssd", {})
    if not isinstance(dssd_tab, dict):
        raise ConfigError("weights.dssd", "must be a table")
    dssd_tab = dict(dssd_tab)
    omega_name = _take(dssd_tab, "weights.dssd", "omega", str, default="constant")
    try:
        omega = OmegaMode(omega_name)
    except ValueError as exc:
        raise ConfigError("weights.dssd.omega", f"unknown omega mode {omega_name!r}") from exc
    dssd = DSSDConfig(
        lambda_latent=_take(dssd_tab, "weights.dssd", "lambda_latent", float, default=1.0),
        lambda_pixel=_take(dssd_tab, "weights.dssd", "lambda_pixel", float, default=1.0),
        lambda_dssd=_take(dssd_tab, "weights.dssd", "lambda_dssd", float, default=1.0),
        lambda_rgb=_take(dssd_tab, "weights.dssd", "lambda_rgb", float, default=1.0),
        lambda_mask=_take(dssd_tab, "weights.dssd", "lambda_mask", float, default=0.1),
        lambda_ssim=_take(dssd_tab, "weights.dssd", "lambda_ssim", float, default=0.0),
        lambda_lpips=_take(dssd_tab, "weights.dssd", "lambda_lpips", float, default=0.0),
        omega=omega,
        t_total=_take(dssd_tab, "weights.dssd", "t_total", int, default=1000),
        t_min=_take(dssd_tab, "weights.dssd", "t_min", int, default=20),
        t_max=_take(dssd_tab, "weights.dssd", "t_max", int, default=750),
        cfg_max=_take(dssd_tab, "weights.dssd", "cfg_max", float, default=20.0),
    )
    _reject_unknown(dssd_tab, "weights.dssd")
    weights = ExpertWeights(
        style=_take(wtab, "weights", "style", float, default=1.0),
        sos=_take(wtab, "weights", "sos", float, default=10.0),
        csd=_take(wtab, "weights", "csd", float, default=1.0),
        qa=_take(wtab, "weights", "qa", float, default=0.5),
        dssd=dssd,
    )
    _reject_unknown(wtab, "weights")
    weights.validate()

    sos_tab = _section(data, "sos", required=False)
    sos_defaults = SOSConfig()
    sos = SOSConfig(
        layer_ids=tuple(_take(sos_tab, "sos", "layer_ids", list, default=list(sos_defaults.layer_ids))),
        layer_weights=tuple(
            float(w) for w in _take(sos_tab, "sos", "layer_weights", list, default=list(sos_defaults.layer_weights))
        ),
        scales=tuple(float(s) for s in _take(sos_tab, "sos", "scales", list, default=list(sos_defaults.scales))),
        pretrain_steps=_take(sos_tab, "sos", "pretrain_steps", int, default=sos_defaults.pretrain_steps),
        pretrain_scale=_take(sos_tab, "sos", "pretrain_scale", float, default=sos_defaults.pretrain_scale),
    )
    _reject_unknown(sos_tab, "sos")
    sos.validate()

    qa_tab = _section(data, "qa", required=False)
    qa_defaults = QAConfig()
    prompts_tab = _take(qa_tab, "qa", "prompts", dict, default=None)
    weights_tab = _take(qa_tab, "qa", "weights", dict, default=None)
    _reject_unknown(qa_tab, "qa")
    qa = QAConfig()
    if prompts_tab is not None:
        prompts = {}
        for criterion, pair in prompts_tab.items():
            if not (isinstance(pair, list) and len(pair) == 2):
                raise ConfigError(f"qa.prompts.{criterion}", "must be a [positive, negative] pair")
            prompts[criterion] = (str(pair[0]), str(pair[1]))
        qa.prompts = prompts
    if weights_tab is not None:
        qa.weights = {k: float(v) for k, v in weights_tab.items()}
    elif prompts_tab is not None and set(qa.prompts) != set(qa_defaults.prompts):
        raise ConfigError("qa.weights", "custom prompts need matching weights")
    qa.validate()

    optim = _section(data, "optim", required=False)
    lr_dc = _take(optim, "optim", "lr_dc", float, default=2.5e-3)
    lr_rest = _take(optim, "optim", "lr_rest", float, default=1.25e-4)
    optimize_sh_rest = _take(optim, "optim", "optimize_sh_rest", bool, default=True)
    _reject_unknown(optim, "optim")

    rtab = _section(data, "render", required=False)
    background = _take(rtab, "render", "background", list, default=[0.0, 0.0, 0.0])
    mask_threshold = _take(rtab, "render", "mask_threshold", float, default=0.5)
    _reject_unknown(rtab, "render")
    if len(background) != 3:
        raise ConfigError("render.background", "must be an RGB triple")
    background = tuple(float(c) for c in background)
    if not 0.0 < mask_threshold < 1.0:
        raise ConfigError("render.mask_threshold", "must lie strictly inside (0, 1)")

    seeds = _section(data, "seeds")
    seed = _take(seeds, "seeds", "master", int, required=True)
    _reject_unknown(seeds, "seeds")

    out = _section(data, "output", required=False)
    out_dir = base / _take(out, "output", "dir", str, default="out")
    previews = _take(out, "output", "previews", bool, default=True)
    checkpoint_every = _take(out, "output", "checkpoint_every", int, default=0)
    _reject_unknown(out, "output")

    if not style_image.exists():
        raise ConfigError("style.image", f"file not found: {style_image}")
    if not scene_ply.exists():
        raise ConfigError("scene.ply", f"file not found: {scene_ply}")
    if not cameras.exists():
        raise ConfigError("scene.cameras", f"file not found: {cameras}")

    return RunConfig(
        scene_ply=scene_ply,
        cameras=cameras,
        style_image=style_image,
        content_text=content_text,
        style_text=style_text,
        backend=backend,
        embed_dim=embed_dim,
        descriptor_dim=descriptor_dim,
        style_shift=style_shift,
        stylize_strength=stylize_strength,
        score_target=score_target,
        n_opt=n_opt,
        view_start=view_start,
        timetable=timetable,
        weights=weights,
        sos=sos,
        qa=qa,
        lr_dc=lr_dc,
        lr_rest=lr_rest,
        optimize_sh_rest=optimize_sh_rest,
        background=background,
        mask_threshold=mask_threshold,
        seed=seed,
        out_dir=out_dir,
        previews=previews,
        checkpoint_every=checkpoint_every,
    )


def build_providers(config: RunConfig) -> ProviderSet:
    """Instantiate the provider stack named by the config."""
    if config.backend != "toy":
        raise ConfigError(
            "providers.backend",
            "external backends are wired programmatically; the CLI runs the toy stack",
        )
    if config.score_target == "style":
        target = load_image(config.style_image)
    else:
        target = load_image(config.score_target)
    return toy_providers(
        target,
        seed=config.seed,
        embed_dim=config.embed_dim,
        descriptor_dim=config.descriptor_dim,
        t_total=config.weights.dssd.t_total,
        style_shift=config.style_shift,
        stylize_strength=config.stylize_strength,
    )


def to_settings(config: RunConfig) -> TrainSettings:
    return TrainSettings(
        timetable=config.timetable,
        n_opt=config.n_opt,
        view_start=config.view_start,
        lr_dc=config.lr_dc,
        lr_rest=config.lr_rest,
        optimize_sh_rest=config.optimize_sh_rest,
        background=config.background,
        seed=config.seed,
        mask_threshold=config.mask_threshold,
        sos=config.sos,
        qa=config.qa,
        checkpoint_every=config.checkpoint_every,
        checkpoint_dir=config.out_dir / "checkpoints" if config.checkpoint_every > 0 else None,
    )
