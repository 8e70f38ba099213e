"""Command-line entry points: stylize, render, eval, inspect."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import torch

from .camera import load_cameras
from .cloud import GaussianCloud
from .config import build_providers, load_run_config, to_settings
from .errors import ConfigError, NonFiniteLossError, SplatStyleError
from .images import load_image, save_image
from .metrics import lpips, psnr, ssim
from .ply_io import load_ply, save_ply
from .providers import ToyFeatureExtractor
from .render import render
from .style_clean import clean_style
from .train import StyleBundle, stylize


def _parse_background(text: str) -> tuple:
    parts = text.split(",")
    if len(parts) != 3:
        raise ValueError("background must be three comma-separated floats, e.g. '0,0,0'")
    return tuple(float(p) for p in parts)


def cmd_stylize(args) -> int:
    config = load_run_config(args.config)
    cloud = load_ply(config.scene_ply)
    views = load_cameras(config.cameras)
    style_image = load_image(config.style_image)
    providers = build_providers(config)

    embedding = clean_style(
        style_image, config.content_text, config.style_text, providers.embedding
    )
    bundle = StyleBundle(
        reference_image=style_image,
        embedding=embedding,
        content_text=config.content_text,
        style_text=config.style_text,
    )
    settings = to_settings(config)

    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if config.previews and views:
        preview_view = views[0]

        def preview_hook(step, phase, snapshot: GaussianCloud):
            img = render(snapshot, preview_view, settings.background).rgb
            save_image(out_dir / f"preview_step{step:05d}_{phase.value}.png", img)

        settings.preview_hook = preview_hook

    try:
        result, record = stylize(cloud, views, bundle, config.weights, settings, providers)
    except NonFiniteLossError as exc:
        if exc.record is not None and len(exc.record):
            exc.record.write_jsonl(out_dir / "record_abort.jsonl")
            print(f"error: {exc}; diagnostic record in {out_dir / 'record_abort.jsonl'}", file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return 1

    save_ply(result, out_dir / "stylized.ply")
    record.write_jsonl(out_dir / "record.jsonl")
    summary = record.summary()
    summary["seed"] = config.seed
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if config.previews and views:
        final = render(result, views[0], settings.background).rgb
        save_image(out_dir / "preview_final.png", final)
    print(f"wrote {out_dir / 'stylized.ply'} ({len(record)} steps)")
    return 0


def cmd_render(args) -> int:
    cloud = load_ply(args.ply)
    views = load_cameras(args.cameras)
    background = _parse_background(args.background)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, view in enumerate(views):
        out = render(cloud, view, background)
        save_image(out_dir / f"view_{i:03d}.png", out.rgb)
    print(f"rendered {len(views)} view(s) to {out_dir}")
    return 0


def cmd_eval(args) -> int:
    dir_a, dir_b = Path(args.dir_a), Path(args.dir_b)
    names_a = {p.name for p in dir_a.glob("*.png")}
    names_b = {p.name for p in dir_b.glob("*.png")}
    if names_a != names_b:
        only_a = sorted(names_a - names_b)
        only_b = sorted(names_b - names_a)
        print(f"error: file sets differ; only in {dir_a}: {only_a}; only in {dir_b}: {only_b}", file=sys.stderr)
        return 1
    if not names_a:
        print(f"error: no .png files in {dir_a}", file=sys.stderr)
        return 1

    extractor = ToyFeatureExtractor(args.seed)
    pairs = {}
    for name in sorted(names_a):
        a = load_image(dir_a / name)
        b = load_image(dir_b / name)
        pairs[name] = {
            "psnr": psnr(a, b),
            "ssim": ssim(a, b),
            "lpips": lpips(a, b, extractor),
        }
    means = {
        metric: sum(p[metric] for p in pairs.values()) / len(pairs)
        for metric in ("psnr", "ssim", "lpips")
    }
    print(json.dumps({"pairs": pairs, "mean": means}, indent=2, sort_keys=True))
    return 0


def cmd_inspect(args) -> int:
    cloud = load_ply(args.ply)
    info = {"count": cloud.num_gaussians, "sh_degree": cloud.sh_degree}
    if cloud.num_gaussians > 0:
        opacities = torch.sigmoid(cloud.opacity_logits)
        info["bbox"] = {
            "min": cloud.positions.min(dim=0).values.tolist(),
            "max": cloud.positions.max(dim=0).values.tolist(),
        }
        info["opacity"] = {
            "min": float(opacities.min()),
            "max": float(opacities.max()),
            "mean": float(opacities.mean()),
        }
    else:
        info["bbox"] = None
        info["opacity"] = None
    print(json.dumps(info, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatstyle",
        description="Stylize the colors of a pre-trained 3D Gaussian scene.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stylize", help="run a stylization config")
    p.add_argument("config", help="path to the TOML run config")
    p.set_defaults(func=cmd_stylize)

    p = sub.add_parser("render", help="render a PLY scene from a camera set")
    p.add_argument("ply")
    p.add_argument("cameras")
    p.add_argument("out_dir")
    p.add_argument("--background", default="0,0,0", help="RGB triple, e.g. '0,0,0'")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="PSNR/SSIM/LPIPS between two image directories")
    p.add_argument("dir_a")
    p.add_argument("dir_b")
    p.add_argument("--seed", type=int, default=0, help="toy feature extractor seed")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="print summary stats of a PLY scene")
    p.add_argument("ply")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    # single-threaded math keeps reruns byte-identical
    torch.set_num_threads(1)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SplatStyleError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
