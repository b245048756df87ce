import json

import numpy as np
import pytest

from src.checks.scenes import default_camera, random_scene
from src.config.render_config import ImageFormat, RenderConfig
from src.config.yaml_loader import clear_config_cache
from src.io.cameras import save_cameras
from src.io.images import read_image, write_image
from src.io.ply import save_ply
from src.main import EXIT_CHECK_FAILED, EXIT_ERROR, EXIT_OK, build_parser, main
from src.raster.forward import render_sorted_ab
from src.report.writer import read_jsonl


@pytest.fixture(autouse=True)
def fresh_cache():
    clear_config_cache()
    yield
    clear_config_cache()


@pytest.fixture
def inputs(tmp_path):
    scene_path = tmp_path / "scene.ply"
    cameras_path = tmp_path / "cameras.json"
    config_path = tmp_path / "conf.yaml"
    save_ply(random_scene(6, seed=3), scene_path)
    save_cameras([default_camera(8, 8, id=0), default_camera(8, 8, id=1).rotated((0.0, 1.0, 0.0), 0.05)], cameras_path)
    config_path.write_text(
        "render:\n  spp: 2\n  threads: 1\n"
        "bench:\n  spp_list: [1]\n  scales: [0.25]\n  tile_sizes: [16]\n  runs: 1\n  warmup: 0\n"
        "taa:\n  spp: 1\n  reference_spp: 8\n  static_frames: 3\n"
    )
    return scene_path, cameras_path, config_path


def render_args(inputs, out, *extra):
    scene_path, cameras_path, config_path = inputs
    return [
        "render", "--scene", str(scene_path), "--cameras", str(cameras_path),
        "--config", str(config_path), "--out", str(out), "--format", "pfm", *extra,
    ]


def test_render_writes_images_and_reports(inputs, tmp_path):
    out = tmp_path / "out"
    assert main(render_args(inputs, out, "--reference", "sorted")) == EXIT_OK
    assert (out / "cam_0000.pfm").exists() and (out / "cam_0001.pfm").exists()
    records = read_jsonl(out / "report.jsonl")
    assert [r["camera"] for r in records] == [0, 1]
    assert records[0]["spp"] == 2
    assert records[0]["mse"] is not None
    assert "Render summary" in (out / "summary.md").read_text(encoding="utf-8")


def test_render_is_deterministic(inputs, tmp_path):
    assert main(render_args(inputs, tmp_path / "a", "--seed", "9")) == EXIT_OK
    assert main(render_args(inputs, tmp_path / "b", "--seed", "9", "--threads", "2")) == EXIT_OK
    np.testing.assert_array_equal(read_image(tmp_path / "a" / "cam_0001.pfm"), read_image(tmp_path / "b" / "cam_0001.pfm"))


@pytest.mark.parametrize(
    "extra",
    [["--spp", "0"], ["--background", "2.0"], ["--tile-size", "0"]],
)
def test_invalid_flags_exit_with_error(inputs, tmp_path, extra):
    assert main(render_args(inputs, tmp_path / "out", *extra)) == EXIT_ERROR


def test_missing_inputs_exit_with_error(inputs, tmp_path):
    scene_path, cameras_path, config_path = inputs
    assert main(["render", "--scene", str(tmp_path / "absent.ply"), "--cameras", str(cameras_path),
                 "--config", str(config_path), "--out", str(tmp_path / "out")]) == EXIT_ERROR
    assert main(["render", "--cameras", str(cameras_path), "--config", str(config_path)]) == EXIT_ERROR
    assert main(render_args(inputs, tmp_path / "out", "--config", str(tmp_path / "absent.yaml"))) == EXIT_ERROR


def test_malformed_camera_file(inputs, tmp_path):
    scene_path, cameras_path, config_path = inputs
    cameras_path.write_text(json.dumps([{"width": 4}]))
    assert main(render_args(inputs, tmp_path / "out")) == EXIT_ERROR


def test_bench_writes_table(inputs, tmp_path):
    _, _, config_path = inputs
    out = tmp_path / "bench"
    assert main(["bench", "--config", str(config_path), "--out", str(out)]) == EXIT_OK
    assert (out / "bench.csv").exists()
    rows = read_jsonl(out / "report.jsonl")
    assert {r["renderer"] for r in rows} == {"stochastic", "sorted"}
    assert [r["spp"] for r in rows if r["renderer"] == "sorted"] == [None]


def test_taa_static_path(inputs, tmp_path):
    _, _, config_path = inputs
    out = tmp_path / "taa"
    code = main(["taa", "--config", str(config_path), "--out", str(out), "--format", "pfm"])
    assert code in (EXIT_OK, EXIT_CHECK_FAILED)
    assert len(read_jsonl(out / "report.jsonl")) == 3
    assert (out / "taa" / "frame_0002.pfm").exists()


def test_finetune_round_trip(inputs, tmp_path):
    scene_path, cameras_path, config_path = inputs
    scene = random_scene(6, seed=3)
    cam = default_camera(8, 8, id=0, image_path=tmp_path / "view.pfm")
    write_image(render_sorted_ab(scene, cam, RenderConfig(threads=1)), tmp_path / "view.pfm", ImageFormat.PFM)
    save_cameras([cam], cameras_path)
    out = tmp_path / "tune"
    assert main(["finetune", "--scene", str(scene_path), "--cameras", str(cameras_path), "--config", str(config_path),
                 "--out", str(out), "--iterations", "2", "--spp-train", "2", "--checkpoint-every", "1"]) == EXIT_OK
    assert (out / "scene.ply").exists()
    assert (out / "checkpoint_00002.ply").exists()
    assert len(read_jsonl(out / "report.jsonl")) == 2


def test_subcommand_is_required():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
