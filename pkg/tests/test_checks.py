import numpy as np
import pandas as pd
import pytest

from src.checks.bench import BENCH_COLUMNS, run_bench, spp_ratio, stochastic_vs_sorted, time_call
from src.checks.gradcheck import GradcheckOptions, normalized_cross_correlation, relative_error, run_gradcheck
from src.checks.popcheck import PopcheckOptions, frame_differences, run_popcheck, sweep_angles
from src.checks.render_run import image_name, load_reference, render_views
from src.checks.scenes import default_camera, popping_scene, random_scene
from src.config.render_config import BenchConfig, DepthMode, ImageFormat, RenderConfig, RendererKind
from src.io.images import ImageFormatError, read_image


class TestBench:
    def test_grid_rows_and_columns(self):
        bench = BenchConfig(spp_list=[1, 2], scales=[1.0, 0.5], tile_sizes=[8], runs=1, warmup=0)
        table = run_bench(random_scene(4), default_camera(16, 16), RenderConfig(threads=1), bench)
        assert list(table.columns) == BENCH_COLUMNS
        assert len(table) == 2 * 2 + 2
        assert sorted(table["width"].unique().tolist()) == [8, 16]
        assert table.loc[table["renderer"] == "sorted", "spp"].isna().all()
        assert (table["median_ms"] > 0).all()
        assert spp_ratio(table, 1, 2) is not None
        assert stochastic_vs_sorted(table) is not None

    def test_ratios_from_a_known_table(self):
        table = pd.DataFrame(
            [
                ["stochastic", 1, 32, 32, 16, 10, 2.0, 2.0, 1],
                ["stochastic", 8, 32, 32, 16, 10, 5.0, 5.0, 1],
                ["stochastic", 1, 16, 16, 16, 4, 1.0, 1.0, 1],
                ["sorted", None, 32, 32, 16, 10, 4.0, 4.0, 1],
            ],
            columns=BENCH_COLUMNS,
        )
        assert spp_ratio(table) == pytest.approx(2.5)
        assert stochastic_vs_sorted(table) == pytest.approx(0.5)
        assert spp_ratio(table, 1, 16) is None
        assert spp_ratio(table[table["renderer"] == "sorted"]) is None

    def test_time_call_counts_runs(self):
        calls = []
        times = time_call(lambda: calls.append(1), runs=3, warmup=2)
        assert len(times) == 3
        assert len(calls) == 5


class TestRenderViews:
    def test_writes_images_and_scores_against_sorted(self, tmp_path, two_splats):
        cams = [default_camera(8, 8, id=0), default_camera(8, 8, id=7)]
        cfg = RenderConfig(threads=1, early_stop_transmittance=0.0)
        records = render_views(two_splats, cams, cfg, RendererKind.SORTED, tmp_path, ImageFormat.PFM, "sorted")
        assert [r["image"] for r in records] == ["cam_0000.pfm", "cam_0007.pfm"]
        assert records[0]["mse"] == 0.0
        assert records[0]["psnr"] == 100.0
        assert records[1]["spp"] is None
        assert read_image(tmp_path / "cam_0007.pfm").shape == (8, 8, 3)

    def test_reference_directory(self, tmp_path, two_splats):
        cam = default_camera(8, 8, id=2)
        cfg = RenderConfig(spp=4, threads=1)
        render_views(two_splats, [cam], cfg, RendererKind.STOCHASTIC, tmp_path / "ref", ImageFormat.PFM)
        records = render_views(
            two_splats, [cam], cfg, RendererKind.STOCHASTIC, tmp_path / "run", ImageFormat.PNG8, str(tmp_path / "ref")
        )
        assert records[0]["mse"] == 0.0
        assert records[0]["spp"] == 4

    def test_missing_reference_image(self, tmp_path, two_splats):
        with pytest.raises(ImageFormatError):
            load_reference(str(tmp_path), two_splats, default_camera(8, 8, id=9), RenderConfig(threads=1))

    def test_image_names(self):
        assert image_name(default_camera(4, 4, id=12), ImageFormat.PNG8) == "cam_0012.png"


class TestPopcheck:
    def test_sweep_angles(self):
        angles = sweep_angles(2e-3, 2e-4)
        assert angles.size == 21
        assert angles[0] == pytest.approx(-2e-3)
        assert angles[10] == pytest.approx(0.0, abs=1e-15)

    def test_plane_depth_removes_the_pop(self):
        report, heatmaps = run_popcheck(PopcheckOptions())
        assert report.jump(DepthMode.MEAN) > 0.1
        assert report.jump(DepthMode.PLANE) <= 0.1 * report.jump(DepthMode.MEAN)
        assert report.passed
        assert set(heatmaps) == {"heatmap_mean", "heatmap_plane"}

    def test_unrotated_frames_do_not_change(self):
        scene, cam = popping_scene()
        jumps, maps = frame_differences(scene, cam, RenderConfig(threads=1), [0.0, 0.0])
        assert jumps.tolist() == [0.0]
        assert maps[0].shape == (cam.height, cam.width)


class TestGradcheckHelpers:
    def test_relative_error(self):
        assert relative_error(1.1, 1.0) == pytest.approx(0.1)
        assert relative_error(1e-9, 0.0, floor=1e-6) == pytest.approx(1e-3)

    def test_normalized_cross_correlation(self):
        a = np.arange(16.0).reshape(4, 4)
        assert normalized_cross_correlation(a, 3.0 * a + 1.0) == pytest.approx(1.0)
        assert normalized_cross_correlation(a, -a) == pytest.approx(-1.0)
        assert normalized_cross_correlation(a, np.ones_like(a)) == 0.0

    @pytest.mark.slow
    def test_full_gradient_check(self):
        report, images = run_gradcheck(GradcheckOptions())
        assert report.passed, [(e.suite, e.parameter, e.error) for e in report.failures()]
        assert report.image_ncc >= 0.9
        assert set(images) == {"gradient_stochastic", "gradient_sorted"}
