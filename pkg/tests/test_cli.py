import json
import textwrap

import pytest
import torch

from splatstyle import camera_ring, load_ply, save_cameras, save_ply
from splatstyle.cli import main
from splatstyle.images import load_image, save_image, srgb_encode

from conftest import flat_cloud, front_camera, make_cloud
from oracles import oracle_render
from test_providers import checker
from test_ply import write_fixture

RUN_CONFIG = """
[scene]
ply = "scene.ply"
cameras = "cameras.json"

[style]
image = "style.png"
content_text = "a cluster of blobs"

[weights]
sos = 1.0

[weights.dssd]
lambda_rgb = 1.0

[sos]
scales = [1.0, 0.5]
pretrain_steps = 0

[schedule]
n_opt = 5

[[schedule.timetable]]
start = 0
end = 10
phase = "global_adaptive"
rgb_overlay = true

[[schedule.timetable]]
start = 10
end = 20
phase = "local"

[seeds]
master = 123

[output]
dir = "out"
previews = true
"""


def make_run_dir(tmp_path, config_text=RUN_CONFIG):
    save_ply(make_cloud(3, seed=1, opacity_range=(2.0, 4.0)), tmp_path / "scene.ply")
    save_cameras(camera_ring(2, width=10, height=10, fx=20.0, fy=20.0), tmp_path / "cameras.json")
    save_image(tmp_path / "style.png", checker(10, 10), apply_srgb=False)
    cfg = tmp_path / "run.toml"
    cfg.write_text(textwrap.dedent(config_text))
    return cfg


class TestStylizeCommand:
    def test_end_to_end(self, tmp_path, capsys):
        cfg = make_run_dir(tmp_path)
        assert main(["stylize", str(cfg)]) == 0
        out = tmp_path / "out"
        stylized = load_ply(out / "stylized.ply")
        original = load_ply(tmp_path / "scene.ply")
        for name in ("positions", "rotations", "log_scales", "opacity_logits"):
            assert torch.equal(getattr(stylized, name), getattr(original, name))
        assert (out / "record.jsonl").exists()
        assert (out / "summary.json").exists()
        record = [json.loads(line) for line in (out / "record.jsonl").read_text().splitlines()]
        assert len(record) == 20
        previews = sorted(out.glob("preview_*.png"))
        assert len(previews) == 3  # two phase starts + final

    def test_reruns_are_byte_identical(self, tmp_path):
        cfg = make_run_dir(tmp_path)
        assert main(["stylize", str(cfg)]) == 0
        first_summary = (tmp_path / "out" / "summary.json").read_bytes()
        first_ply = (tmp_path / "out" / "stylized.ply").read_bytes()
        assert main(["stylize", str(cfg)]) == 0
        assert (tmp_path / "out" / "summary.json").read_bytes() == first_summary
        assert (tmp_path / "out" / "stylized.ply").read_bytes() == first_ply

    def test_timetable_gap_exits_nonzero_naming_range(self, tmp_path, capsys):
        broken = RUN_CONFIG.replace("start = 10", "start = 12")
        cfg = make_run_dir(tmp_path, broken)
        assert main(["stylize", str(cfg)]) == 2
        err = capsys.readouterr().err
        assert "uncovered range [10, 12)" in err

    def test_missing_style_image_exits_nonzero_with_key(self, tmp_path, capsys):
        cfg = make_run_dir(tmp_path)
        (tmp_path / "style.png").unlink()
        assert main(["stylize", str(cfg)]) == 2
        assert "style.image" in capsys.readouterr().err


class TestRenderCommand:
    def test_renders_one_png_per_camera(self, tmp_path):
        write_fixture(tmp_path / "two.ply")
        cam = front_camera(width=9, height=9)
        save_cameras([cam], tmp_path / "cams.json")
        assert main(["render", str(tmp_path / "two.ply"), str(tmp_path / "cams.json"), str(tmp_path / "imgs")]) == 0
        files = sorted((tmp_path / "imgs").glob("*.png"))
        assert len(files) == 1

        cloud = load_ply(tmp_path / "two.ply")
        rgb, _ = oracle_render(cloud, cam)
        expected = srgb_encode(torch.from_numpy(rgb))
        expected = torch.round(expected * 255.0) / 255.0
        got = load_image(files[0])
        assert float((got[4, 4] - expected[4, 4]).abs().max()) < 1e-6

    def test_empty_camera_list(self, tmp_path):
        write_fixture(tmp_path / "two.ply")
        save_cameras([], tmp_path / "cams.json")
        assert main(["render", str(tmp_path / "two.ply"), str(tmp_path / "cams.json"), str(tmp_path / "imgs")]) == 0
        assert list((tmp_path / "imgs").glob("*.png")) == []

    def test_bad_ply_exits_nonzero(self, tmp_path):
        bad = tmp_path / "bad.ply"
        bad.write_bytes(b"not a ply at all")
        save_cameras([front_camera()], tmp_path / "cams.json")
        assert main(["render", str(bad), str(tmp_path / "cams.json"), str(tmp_path / "imgs")]) == 1

    def test_background_flag(self, tmp_path):
        save_ply(make_cloud(0), tmp_path / "empty.ply")
        save_cameras([front_camera(width=9, height=9)], tmp_path / "cams.json")
        assert main([
            "render", str(tmp_path / "empty.ply"), str(tmp_path / "cams.json"),
            str(tmp_path / "imgs"), "--background", "1,0,0",
        ]) == 0
        img = load_image(tmp_path / "imgs" / "view_000.png")
        assert img[0, 0].tolist() == [1.0, 0.0, 0.0]


class TestEvalCommand:
    def _render_dir(self, tmp_path, name, offset=0.0):
        d = tmp_path / name
        d.mkdir()
        gen = torch.Generator().manual_seed(0)
        for i in range(2):
            img = torch.rand((16, 16, 3), generator=gen, dtype=torch.float64) * 0.5
            save_image(d / f"v{i}.png", img + offset, apply_srgb=False)
        return d

    def test_dir_vs_itself(self, tmp_path, capsys):
        d = self._render_dir(tmp_path, "a")
        assert main(["eval", str(d), str(d)]) == 0
        data = json.loads(capsys.readouterr().out)
        for pair in data["pairs"].values():
            assert pair["psnr"] == 100.0
            assert abs(pair["ssim"] - 1.0) < 1e-12
            assert pair["lpips"] == 0.0

    def test_constant_offset_psnr(self, tmp_path, capsys):
        import math

        a = self._render_dir(tmp_path, "a")
        b = self._render_dir(tmp_path, "b", offset=16.0 / 255.0)
        assert main(["eval", str(a), str(b)]) == 0
        data = json.loads(capsys.readouterr().out)
        want = 20.0 * math.log10(255.0 / 16.0)
        assert abs(data["mean"]["psnr"] - want) < 1e-3

    def test_mismatched_sets_exit_nonzero(self, tmp_path, capsys):
        a = self._render_dir(tmp_path, "a")
        b = self._render_dir(tmp_path, "b")
        (b / "extra.png").write_bytes((b / "v0.png").read_bytes())
        assert main(["eval", str(a), str(b)]) == 1
        assert "extra.png" in capsys.readouterr().err


class TestInspectCommand:
    def test_fixture_stats(self, tmp_path, capsys):
        write_fixture(tmp_path / "two.ply")
        assert main(["inspect", str(tmp_path / "two.ply")]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["count"] == 2
        assert data["sh_degree"] == 0
        assert data["bbox"]["min"] == [-0.25, -1.0, -3.0]
        assert 0.0 < data["opacity"]["mean"] < 1.0

    def test_sh_degree_echo_matches_header(self, tmp_path, capsys):
        save_ply(make_cloud(4, seed=2, degree=2), tmp_path / "deg2.ply")
        assert main(["inspect", str(tmp_path / "deg2.ply")]) == 0
        assert json.loads(capsys.readouterr().out)["sh_degree"] == 2

    def test_corrupted_header_exits_nonzero(self, tmp_path, capsys):
        path = tmp_path / "corrupt.ply"
        write_fixture(path)
        content = path.read_bytes().replace(b"property float opacity\n", b"")
        path.write_bytes(content)
        assert main(["inspect", str(path)]) == 1
        assert "opacity" in capsys.readouterr().err
