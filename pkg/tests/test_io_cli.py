import json
import subprocess
import sys

import numpy as np
import pytest

from layersplat import io_formats as io
from layersplat.cli import main
from layersplat.losses import LossWeights
from layersplat.synthetic import desk_scene, random_scene, true_scene
from layersplat.types import Camera, Extrinsics, Intrinsics


def _bundle(scene):
    cam = Camera(Intrinsics(64.0, 64.0, 32.0, 32.0), Extrinsics.identity())
    return io.SplatBundle(scene=scene, camera=cam, source_size=(64, 64))


# ---------------------------------------------------------------------------
# Splat container
# ---------------------------------------------------------------------------


def test_splat_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    scene = io.quantize(random_scene(6, rng))
    path = tmp_path / "s.splat"
    io.write_splat(path, _bundle(scene))
    back = io.read_splat(path)
    for name in ("positions", "scales", "rotations", "colors", "opacities"):
        assert np.array_equal(getattr(back.scene, name), getattr(scene, name)), name
    assert back.scene.smax == scene.smax
    assert back.source_size == (64, 64)
    assert back.camera.intrinsics == Intrinsics(64.0, 64.0, 32.0, 32.0)


def test_splat_file_layout(tmp_path):
    scene = io.quantize(true_scene(16))
    path = tmp_path / "s.splat"
    io.write_splat(path, _bundle(scene))
    raw = path.read_bytes()
    assert raw[:4] == b"SHRP"
    assert len(raw) == io._HEADER.size + 56 * scene.count


def test_splat_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.splat"
    path.write_bytes(b"NOPE" + b"\x00" * 300)
    with pytest.raises(io.FileFormatError):
        io.read_splat(path)


def test_splat_rejects_truncation(tmp_path):
    scene = io.quantize(true_scene(16))
    path = tmp_path / "s.splat"
    io.write_splat(path, _bundle(scene))
    raw = path.read_bytes()
    (tmp_path / "t.splat").write_bytes(raw[:-13])
    with pytest.raises(io.FileFormatError):
        io.read_splat(tmp_path / "t.splat")


def test_splat_rejects_future_version(tmp_path):
    scene = io.quantize(true_scene(16))
    path = tmp_path / "s.splat"
    io.write_splat(path, _bundle(scene))
    raw = bytearray(path.read_bytes())
    raw[4] = io.SPLAT_VERSION + 1
    (tmp_path / "v.splat").write_bytes(bytes(raw))
    with pytest.raises(io.FileFormatError):
        io.read_splat(tmp_path / "v.splat")


# ---------------------------------------------------------------------------
# PFM / PNG
# ---------------------------------------------------------------------------


def test_pfm_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    depth = rng.uniform(0.5, 5.0, (7, 5))
    io.write_pfm(tmp_path / "d.pfm", depth)
    back = io.read_pfm(tmp_path / "d.pfm")
    assert np.allclose(back, depth, rtol=1e-7)  # float32 precision


def test_png16_depth_roundtrip(tmp_path):
    depth = np.array([[1.0, 2.5], [0.001, 65.535]])
    io.write_depth_png16(tmp_path / "d.png", depth)
    back = io.read_depth_png16(tmp_path / "d.png")
    assert np.allclose(back, depth, atol=5e-4)  # millimeter quantization


def test_image_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    img = rng.uniform(0, 1, (8, 8, 3))
    from layersplat.types import ImageRGB

    io.write_image(tmp_path / "i.png", ImageRGB(img))
    back = io.read_image(tmp_path / "i.png")
    assert np.abs(back.data - img).max() <= 0.5 / 255


# ---------------------------------------------------------------------------
# Cameras, weights, manifests
# ---------------------------------------------------------------------------


def test_camera_roundtrip(tmp_path):
    cam = Camera(
        Intrinsics(100.0, 90.0, 31.5, 32.5),
        Extrinsics.from_rt(np.eye(3), [0.1, 0.2, 0.3]),
    )
    io.write_camera(tmp_path / "c.json", cam)
    back = io.read_camera(tmp_path / "c.json")
    assert back.intrinsics == cam.intrinsics
    assert np.array_equal(back.extrinsics.matrix, cam.extrinsics.matrix)


def test_weights_file_defaults_roundtrip(tmp_path):
    io.write_weights(tmp_path / "w.json", LossWeights())
    back = io.read_weights(tmp_path / "w.json")
    assert back == LossWeights()
    # parse -> serialize -> parse is a fixed point
    io.write_weights(tmp_path / "w2.json", back)
    assert (tmp_path / "w.json").read_text() == (tmp_path / "w2.json").read_text()


def test_weights_file_rejects_unknown_keys(tmp_path):
    (tmp_path / "w.json").write_text(json.dumps({"lambda_nope": 1.0}))
    with pytest.raises(io.SchemaError):
        io.read_weights(tmp_path / "w.json")


def test_manifest_parsing_and_line_numbers(tmp_path):
    (tmp_path / "views.txt").write_text(
        "# comment\n"
        "input img.png cam.json depth.pfm\n"
        "novel nv.png cam2.json\n"
    )
    views = io.read_views_manifest(tmp_path / "views.txt")
    assert [v.role for v in views] == ["input", "novel"]
    assert views[0].depth_path == tmp_path / "depth.pfm"
    assert views[1].depth_path is None

    (tmp_path / "bad.txt").write_text("input a b\nwrong x y\nnovel a\n")
    with pytest.raises(io.SchemaError) as err:
        io.read_views_manifest(tmp_path / "bad.txt")
    msg = str(err.value)
    assert "line 2" in msg and "line 3" in msg


def test_atomic_write_leaves_no_partial_file(tmp_path):
    target = tmp_path / "out.bin"
    with pytest.raises(RuntimeError):
        with io.atomic_write(target) as f:
            f.write(b"partial")
            raise RuntimeError("boom")
    assert not target.exists()
    assert list(tmp_path.iterdir()) == []


# ---------------------------------------------------------------------------
# CLI end to end
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    """RGB-D inputs on disk for the 64x64 fixture."""
    root = tmp_path_factory.mktemp("cli")
    fx = desk_scene(64)
    io.write_image(root / "input.png", fx.image)
    io.write_pfm(root / "depth1.pfm", fx.depth.layer1)
    io.write_pfm(root / "depth2.pfm", fx.depth.layer2)
    io.write_camera(root / "cam_src.json", fx.camera)
    io.write_camera(root / "cam_nv0.json", fx.novel[0])
    io.write_image(root / "nv0.png", fx.renders_novel[0].color)
    io.write_pfm(
        root / "nv0_depth.pfm",
        1.0 / np.clip(fx.renders_novel[0].inv_depth, 1e-6, None),
    )
    (root / "views.txt").write_text(
        "input input.png cam_src.json depth1.pfm\n"
        "novel nv0.png cam_nv0.json nv0_depth.pfm\n"
    )
    return root


def test_cli_init_counts_and_roundtrip(cli_workspace, capsys):
    root = cli_workspace
    rc = main(
        [
            "init",
            str(root / "input.png"),
            str(root / "depth1.pfm"),
            str(root / "depth2.pfm"),
            "--camera",
            str(root / "cam_src.json"),
            "--out",
            str(root / "g0.splat"),
        ]
    )
    assert rc == 0
    out = capsys.readouterr().out
    assert "2048 Gaussians" in out  # 2 * 32 * 32
    bundle = io.read_splat(root / "g0.splat")
    assert bundle.scene.count == 2048
    # Read-back equals the in-memory (quantized) set bit-exactly: rewrite
    # and compare bytes.
    io.write_splat(root / "g0_again.splat", bundle)
    assert (root / "g0.splat").read_bytes() == (root / "g0_again.splat").read_bytes()


def test_cli_init_missing_depth_exits_2(cli_workspace, capsys):
    root = cli_workspace
    rc = main(
        [
            "init",
            str(root / "input.png"),
            str(root / "nope.pfm"),
            "--out",
            str(root / "x.splat"),
        ]
    )
    assert rc == 2
    assert "nope.pfm" in capsys.readouterr().err


def test_cli_fit_zero_steps_equals_composed_input(cli_workspace):
    root = cli_workspace
    rc = main(
        [
            "fit",
            f"{root / 'input.png'},{root / 'depth1.pfm'},{root / 'depth2.pfm'}",
            str(root / "views.txt"),
            "--steps",
            "0",
            "--warmup",
            "0",
            "--out",
            str(root / "fit0.splat"),
        ]
    )
    assert rc == 0
    from layersplat.composer import compose
    from layersplat.initializer import initialize
    from layersplat.types import DeltaSet, LayeredDepthMap

    img = io.read_image(root / "input.png")
    depth = LayeredDepthMap.from_layers(
        io.read_pfm(root / "depth1.pfm"),
        np.maximum(
            io.read_pfm(root / "depth1.pfm"), io.read_pfm(root / "depth2.pfm")
        ),
    )
    base = initialize(img, depth)
    expect = io.quantize(compose(base, DeltaSet.zeros(base.grid_w, base.grid_h)))
    got = io.read_splat(root / "fit0.splat").scene
    assert np.array_equal(got.positions, expect.positions)
    assert np.array_equal(got.opacities, expect.opacities)


def test_cli_fit_writes_trace_with_step_rows(cli_workspace):
    root = cli_workspace
    rc = main(
        [
            "fit",
            f"{root / 'input.png'},{root / 'depth1.pfm'},{root / 'depth2.pfm'}",
            str(root / "views.txt"),
            "--steps",
            "3",
            "--warmup",
            "1",
            "--out",
            str(root / "fit3.splat"),
            "--trace",
            str(root / "trace.csv"),
        ]
    )
    assert rc == 0
    rows = (root / "trace.csv").read_text().strip().splitlines()
    assert len(rows) == 4  # header + one row per step
    header = rows[0].split(",")
    assert header[0] == "step" and header[-1] == "lr"
    assert "raw_color" in header and "weighted_grad_scale" in header


def test_cli_fit_default_weights_match_trained_config(tmp_path, cli_workspace):
    io.write_weights(tmp_path / "w.json", LossWeights())
    loaded = io.read_weights(tmp_path / "w.json")
    assert loaded.lambda_percep == 3.0 and loaded.lambda_grad_scale == 5.0


def test_cli_fit_from_splat_file(cli_workspace, tmp_path):
    root = cli_workspace
    rc = main(
        [
            "fit",
            str(root / "g0.splat"),
            str(root / "views.txt"),
            "--steps",
            "2",
            "--warmup",
            "1",
            "--out",
            str(tmp_path / "tuned.splat"),
        ]
    )
    assert rc == 0
    out = io.read_splat(tmp_path / "tuned.splat")
    assert out.scene.count == 2048
    base = io.read_splat(root / "g0.splat")
    # Two steps must have moved the attributes, starting from the file.
    assert not np.array_equal(out.scene.opacities, base.scene.opacities)


def test_cli_fit_bad_manifest_exits_2(cli_workspace, tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("input a.png\n")
    rc = main(
        [
            "fit",
            f"{cli_workspace / 'input.png'},{cli_workspace / 'depth1.pfm'}",
            str(bad),
            "--out",
            str(tmp_path / "x.splat"),
        ]
    )
    assert rc == 2
    assert "line 1" in capsys.readouterr().err


def test_cli_render_deterministic_and_empty(cli_workspace, tmp_path):
    root = cli_workspace
    assert main(
        [
            "render",
            str(root / "g0.splat"),
            str(root / "cam_src.json"),
            "--width",
            "64",
            "--height",
            "64",
            "--out-color",
            str(tmp_path / "a.png"),
            "--out-alpha",
            str(tmp_path / "alpha.png"),
            "--out-invdepth",
            str(tmp_path / "inv.png"),
        ]
    ) == 0
    assert main(
        [
            "render",
            str(root / "g0.splat"),
            str(root / "cam_src.json"),
            "--width",
            "64",
            "--height",
            "64",
            "--out-color",
            str(tmp_path / "b.png"),
        ]
    ) == 0
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    assert (tmp_path / "inv.png.scale.txt").exists()


def test_cli_render_source_view_matches_target(cli_workspace, tmp_path):
    # A fitted splat rendered from the source camera should resemble the
    # fit target; the init splat is blurrier but must correlate strongly.
    root = cli_workspace
    main(
        [
            "render",
            str(root / "g0.splat"),
            str(root / "cam_src.json"),
            "--width",
            "64",
            "--height",
            "64",
            "--out-color",
            str(tmp_path / "src.png"),
        ]
    )
    rendered = io.read_image(tmp_path / "src.png").data
    target = io.read_image(root / "input.png").data
    assert np.abs(rendered - target).mean() < 0.25


def test_cli_eval_identical_and_masked(cli_workspace, tmp_path, capsys):
    root = cli_workspace
    rc = main(
        [
            "eval",
            str(root / "nv0.png"),
            str(root / "nv0.png"),
            "--mask-from",
            f"{root / 'cam_src.json'},{root / 'cam_nv0.json'},{root / 'nv0_depth.pfm'}",
            "--out",
            str(tmp_path / "report.json"),
        ]
    )
    assert rc == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["psnr"] == 99.0
    assert report["ssim"] == pytest.approx(1.0)
    assert report["masked_psnr"] == 99.0


def test_cli_eval_sensitivity_table(cli_workspace, tmp_path):
    root = cli_workspace
    rc = main(
        [
            "eval",
            str(root / "nv0.png"),
            str(root / "input.png"),
            "--shifts",
            "0.01,0.05",
            "--out",
            str(tmp_path / "report.json"),
        ]
    )
    assert rc == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert len(report["shift_sensitivity"]) == 3  # 2 shifts + mean image


def test_cli_export_viewer_and_idempotence(cli_workspace, tmp_path):
    root = cli_workspace
    out = tmp_path / "bundle"
    assert main(["export-viewer", str(root / "g0.splat"), "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["count"] == 2048
    assert manifest["headboxRadiusMeters"] == 0.5
    first = (out / "scene.splat").read_bytes(), (out / "manifest.json").read_bytes()
    assert main(["export-viewer", str(root / "g0.splat"), "--out", str(out)]) == 0
    second = (out / "scene.splat").read_bytes(), (out / "manifest.json").read_bytes()
    assert first == second


def test_cli_entrypoint_runs_as_module():
    proc = subprocess.run(
        [sys.executable, "-m", "layersplat.cli", "--help"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "export-viewer" in proc.stdout
