import numpy as np
import pytest

from src.checks.scenes import default_camera, random_scene
from src.config.render_config import LossKind, OptimConfig, RenderConfig
from src.optim.adam import SceneOptimizer, adam_step
from src.optim.finetune import FinetuneHistory, PosedImage, finetune
from src.raster.forward import render_sorted_ab
from src.metrics.image_metrics import psnr


def one_group(value, lr=0.05):
    config = OptimConfig(lr_opacity=lr)
    return {"opacity_logits": np.asarray(value, dtype=np.float64)}, config


class TestAdam:
    def test_two_hand_computed_steps(self):
        params, config = one_group([0.0])
        params, state, _ = adam_step(params, {"opacity_logits": np.array([1.0])}, None, config)
        assert params["opacity_logits"][0] == pytest.approx(-0.05, rel=1e-9)
        params, state, _ = adam_step(params, {"opacity_logits": np.array([-1.0])}, state, config)
        # m = −0.01 / 0.19, v = 0.001999 / 0.001999
        assert params["opacity_logits"][0] == pytest.approx(-0.05 + 0.05 * 0.01 / 0.19, rel=1e-7)

    def test_zero_gradient_leaves_parameters(self):
        params, config = one_group([0.3, -1.2])
        out, _, report = adam_step(params, {"opacity_logits": np.zeros(2)}, None, config)
        np.testing.assert_array_equal(out["opacity_logits"], params["opacity_logits"])
        assert report.total_skipped == 0

    def test_constant_gradient_moves_by_learning_rate(self):
        params, config = one_group([0.0], lr=0.01)
        state = None
        for _ in range(5):
            params, state, _ = adam_step(params, {"opacity_logits": np.array([3.0])}, state, config)
        assert params["opacity_logits"][0] == pytest.approx(-0.05, rel=1e-6)

    def test_non_finite_rows_are_skipped(self):
        params, config = one_group([0.0, 0.0, 0.0])
        params, state, _ = adam_step(params, {"opacity_logits": np.array([1.0, 1.0, 1.0])}, None, config)
        before = state.optimizer.state[state.tensors["opacity_logits"]]["exp_avg"].clone()
        params, state, report = adam_step(params, {"opacity_logits": np.array([1.0, np.nan, np.inf])}, state, config)
        assert report.skipped_rows["opacity_logits"] == 2
        assert params["opacity_logits"][1] == pytest.approx(-0.05)
        assert params["opacity_logits"][2] == pytest.approx(-0.05)
        assert params["opacity_logits"][0] < -0.05
        after = state.optimizer.state[state.tensors["opacity_logits"]]["exp_avg"]
        assert after[1].item() == before[1].item()
        assert after[0].item() != before[0].item()

    def test_skipped_row_on_first_step_keeps_zero_moments(self):
        params, config = one_group([0.0, 0.0])
        params, state, report = adam_step(params, {"opacity_logits": np.array([np.nan, 1.0])}, None, config)
        assert report.total_skipped == 1
        assert params["opacity_logits"][0] == 0.0
        assert state.optimizer.state[state.tensors["opacity_logits"]]["exp_avg_sq"][0].item() == 0.0

    def test_matrix_rows_are_skipped_as_a_whole(self):
        scene = random_scene(3)
        optimizer = SceneOptimizer.for_scene(scene, OptimConfig())
        grads = {name: np.ones_like(value) for name, value in scene.params().items()}
        grads["sh_coeffs"][1, 5, 2] = np.nan
        report = optimizer.step(grads)
        assert report.skipped_rows["sh_coeffs"] == 1
        updated = optimizer.apply_to(scene)
        np.testing.assert_array_equal(updated.sh_coeffs[1], scene.sh_coeffs[1])
        assert not np.array_equal(updated.sh_coeffs[0], scene.sh_coeffs[0])
        np.testing.assert_array_equal(updated.ids, scene.ids)

    def test_shape_mismatch(self):
        params, config = one_group([0.0, 0.0])
        with pytest.raises(ValueError):
            adam_step(params, {"opacity_logits": np.zeros(3)}, None, config)

    def test_unknown_group(self):
        with pytest.raises(KeyError):
            SceneOptimizer({"colour": np.zeros(2)}, OptimConfig())

    def test_missing_gradient_is_zero(self):
        scene = random_scene(2)
        optimizer = SceneOptimizer.for_scene(scene, OptimConfig())
        optimizer.step({"opacity_logits": np.ones(2)})
        updated = optimizer.apply_to(scene)
        np.testing.assert_array_equal(updated.positions, scene.positions)
        assert np.all(updated.opacity_logits < scene.opacity_logits)


def small_dataset(scene, views=2, size=8):
    cam = default_camera(size, size)
    cameras = [cam] + [cam.rotated((0.0, 1.0, 0.0), 0.05 * i) for i in range(1, views)]
    cfg = RenderConfig(early_stop_transmittance=0.0, threads=1)
    return [PosedImage(camera=c, image=render_sorted_ab(scene, c, cfg)) for c in cameras]


class TestFinetune:
    def test_zero_iterations_returns_input(self, small_scene):
        dataset = small_dataset(small_scene)
        assert finetune(small_scene, dataset, OptimConfig(iterations=0), RenderConfig(threads=1)) is small_scene

    def test_empty_dataset(self, small_scene):
        with pytest.raises(ValueError):
            finetune(small_scene, [], OptimConfig(iterations=1), RenderConfig(threads=1))

    def test_zero_learning_rates_are_the_identity(self, small_scene):
        dataset = small_dataset(small_scene)
        cfg = OptimConfig(
            iterations=3, spp_train=2, lr_position=0.0, lr_opacity=0.0, lr_sh=0.0, lr_scale=0.0, lr_rotation=0.0
        )
        result = finetune(small_scene, dataset, cfg, RenderConfig(threads=1))
        for name, value in small_scene.params().items():
            np.testing.assert_array_equal(getattr(result, name), value)

    def test_history_and_checkpoints(self, small_scene):
        dataset = small_dataset(small_scene, views=3)
        cfg = OptimConfig(iterations=4, spp_train=2, checkpoint_every=2, loss=LossKind.L2)
        history = FinetuneHistory()
        saved = []
        finetune(small_scene, dataset, cfg, RenderConfig(threads=1), checkpoint=lambda s, i: saved.append(i), history=history)
        assert saved == [2, 4]
        assert len(history.losses) == 4
        assert history.skipped_rows == [0, 0, 0, 0]
        assert all(np.isfinite(history.losses))

    def test_runs_are_reproducible(self, small_scene):
        dataset = small_dataset(small_scene)
        cfg = OptimConfig(iterations=2, spp_train=2)
        render_cfg = RenderConfig(pass_seed=4, threads=1)
        a = finetune(small_scene, dataset, cfg, render_cfg)
        b = finetune(small_scene, dataset, cfg, render_cfg)
        np.testing.assert_array_equal(a.opacity_logits, b.opacity_logits)
        np.testing.assert_array_equal(a.positions, b.positions)

    def test_smoothed_history(self):
        history = FinetuneHistory()
        for value in range(10):
            history.record(float(value), 0)
        np.testing.assert_allclose(history.smoothed(4), [1.5, 2.5, 3.5, 4.5, 5.5, 6.5, 7.5])
        np.testing.assert_allclose(history.smoothed(50), np.arange(10.0))

    @pytest.mark.slow
    def test_recovers_perturbed_opacities(self):
        target_scene = random_scene(50, seed=8, scale_range=(0.2, 0.6))
        cameras = [default_camera(32, 32).rotated((0.0, 1.0, 0.0), a) for a in np.linspace(-0.1, 0.1, 8)]
        exact = RenderConfig(early_stop_transmittance=0.0, threads=1)
        dataset = [PosedImage(c, render_sorted_ab(target_scene, c, exact)) for c in cameras]

        rng = np.random.default_rng(1)
        perturbed = target_scene.with_params(opacity_logits=target_scene.opacity_logits + rng.uniform(-0.8, 0.8, 50))
        cfg = OptimConfig(
            iterations=500, lr_opacity=0.01, lr_position=0.0, lr_sh=0.0, lr_scale=0.0, lr_rotation=0.0, loss=LossKind.L2
        )
        result = finetune(perturbed, dataset, cfg, RenderConfig(threads=1))

        def mean_psnr(scene):
            return np.mean([psnr(render_sorted_ab(scene, v.camera, exact), v.image) for v in dataset])

        assert mean_psnr(result) >= mean_psnr(perturbed) + 5.0
