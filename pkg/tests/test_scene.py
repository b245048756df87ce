import math

import numpy as np
import pytest
import torch
from scipy.spatial.transform import Rotation

from src.checks.scenes import default_camera, random_scene
from src.scene.camera import Camera, InvalidCameraError, is_rotation
from src.scene.gaussian import (
    Gaussian3D,
    Scene,
    covariance_from,
    inverse_covariance_from,
    normalize_quaternion,
    quaternion_to_rotation,
)
from src.scene.sh import SH_C0, eval_sh, rgb_to_sh_dc, sh_basis_color


class TestGaussian:
    def test_create_round_trips_activated_values(self):
        g = Gaussian3D.create((1.0, 2.0, 3.0), scale=(0.5, 1.0, 2.0), opacity=0.25, color=(0.2, 0.4, 0.6))
        assert g.opacity == pytest.approx(0.25)
        np.testing.assert_allclose(g.scale, [0.5, 1.0, 2.0])
        np.testing.assert_allclose(eval_sh(g.sh_coeffs, np.array([0.0, 0.0, 1.0]), 0), [0.2, 0.4, 0.6])

    @pytest.mark.parametrize("opacity", [0.0, 1.0, -0.1, 1.5])
    def test_create_rejects_opacity_outside_open_interval(self, opacity):
        with pytest.raises(ValueError):
            Gaussian3D.create((0.0, 0.0, 1.0), opacity=opacity)

    def test_covariance_is_rotated_scale(self):
        q = Rotation.from_euler("xyz", [0.3, -0.2, 0.9]).as_quat()  # x, y, z, w
        wxyz = np.array([q[3], q[0], q[1], q[2]])
        log_scale = np.log([0.3, 0.7, 1.4])
        r = Rotation.from_quat(q).as_matrix()
        expected = r @ np.diag(np.exp(2 * log_scale)) @ r.T
        np.testing.assert_allclose(covariance_from(log_scale, wxyz), expected, atol=1e-12)
        np.testing.assert_allclose(quaternion_to_rotation(wxyz), r, atol=1e-12)

    def test_unnormalized_quaternion_is_normalized(self):
        q = np.array([2.0, 0.0, 0.0, 0.0])
        np.testing.assert_allclose(covariance_from(np.zeros(3), q), np.eye(3))

    def test_inverse_covariance_inverts(self):
        log_scale = np.log([0.01, 0.5, 3.0])
        q = np.array([0.9, 0.1, -0.3, 0.2])
        product = covariance_from(log_scale, q) @ inverse_covariance_from(log_scale, q)
        np.testing.assert_allclose(product, np.eye(3), atol=1e-9)

    def test_torch_and_numpy_agree(self):
        log_scale = np.log([0.3, 0.5, 0.8])
        q = np.array([0.8, 0.2, 0.1, -0.4])
        expected = covariance_from(log_scale, q)
        actual = covariance_from(torch.tensor(log_scale), torch.tensor(q)).numpy()
        np.testing.assert_allclose(actual, expected, atol=1e-14)

    def test_covariance_is_positive_definite_for_extreme_scales(self):
        rng = np.random.default_rng(7)
        log_scale = rng.uniform(-10.0, 10.0, size=(2000, 3))
        log_scale[:4] = [[10.0, -10.0, -10.0], [-10.0, 10.0, 10.0], [10.0, 10.0, -10.0], [-10.0, -10.0, -10.0]]
        q = rng.normal(size=(2000, 4))
        np.linalg.cholesky(covariance_from(log_scale, q))

    def test_moderate_anisotropy_is_kept(self):
        log_scale = np.array([2.0, -9.0, 0.0])
        cov = covariance_from(log_scale, np.array([1.0, 0.0, 0.0, 0.0]))
        np.testing.assert_allclose(np.diag(cov), np.exp(2 * log_scale), rtol=1e-12)

    def test_activation_is_idempotent_on_normalized_rotations(self):
        rng = np.random.default_rng(3)
        q = rng.normal(size=(50, 4)) * rng.uniform(0.1, 10.0, size=(50, 1))
        log_scale = rng.uniform(-2.0, 1.0, size=(50, 3))
        once = normalize_quaternion(q)
        np.testing.assert_allclose(normalize_quaternion(once), once, atol=1e-15)
        np.testing.assert_allclose(covariance_from(log_scale, once), covariance_from(log_scale, q), rtol=1e-12, atol=1e-13)
        np.testing.assert_allclose(quaternion_to_rotation(once), quaternion_to_rotation(normalize_quaternion(once)), atol=1e-14)


class TestScene:
    def test_shapes_are_validated(self):
        scene = random_scene(3)
        with pytest.raises(ValueError):
            Scene(**{**scene.params(), "positions": np.zeros((3, 2))}, ids=scene.ids)

    def test_ids_must_be_unique(self):
        scene = random_scene(3)
        with pytest.raises(ValueError):
            Scene(**scene.params(), ids=np.array([0, 0, 1]))

    def test_permute_keeps_rows_and_ids_together(self):
        scene = random_scene(5, seed=2)
        permuted = scene.permute([4, 2, 0, 1, 3])
        np.testing.assert_array_equal(permuted.ids, [4, 2, 0, 1, 3])
        np.testing.assert_array_equal(permuted.positions[0], scene.positions[4])
        with pytest.raises(ValueError):
            scene.permute([0, 0, 1, 2, 3])

    def test_with_offset_changes_one_entry(self):
        scene = random_scene(3)
        moved = scene.with_offset("sh_coeffs", 1, (0, 2), 0.25)
        diff = moved.sh_coeffs - scene.sh_coeffs
        assert diff[1, 0, 2] == pytest.approx(0.25)
        assert np.count_nonzero(diff) == 1
        assert scene.sh_coeffs is not moved.sh_coeffs

    def test_with_params_rejects_unknown_names(self):
        with pytest.raises(KeyError):
            random_scene(2).with_params(colour=np.zeros(2))

    def test_concat_shifts_ids(self):
        a = random_scene(3, seed=0)
        b = random_scene(2, seed=1)
        merged = a.concat(b)
        assert len(merged) == 5
        np.testing.assert_array_equal(merged.ids, [0, 1, 2, 3, 4])

    def test_empty_scene(self):
        scene = Scene.empty()
        assert len(scene) == 0
        assert scene.bounding_diagonal() == 0.0
        assert len(Scene.from_gaussians([])) == 0

    def test_bounding_diagonal_of_single_gaussian(self):
        scene = Scene.from_gaussians([Gaussian3D.create((0.0, 0.0, 0.0), scale=(1.0, 1.0, 1.0))])
        assert scene.bounding_diagonal() == pytest.approx(6.0 * math.sqrt(3.0))


class TestSphericalHarmonics:
    def test_dc_only_is_view_independent(self):
        sh = np.zeros((16, 3))
        sh[0] = rgb_to_sh_dc([0.1, 0.5, 0.9])
        for d in ([1.0, 0.0, 0.0], [0.0, 0.6, 0.8]):
            np.testing.assert_allclose(eval_sh(sh, np.array(d), 3), [0.1, 0.5, 0.9])

    def test_negative_colours_are_clamped_at_zero_only(self):
        sh = np.zeros((16, 3))
        sh[0] = np.array([-10.0, 0.0, 10.0]) / SH_C0
        np.testing.assert_allclose(eval_sh(sh, np.array([0.0, 0.0, 1.0]), 0), [0.0, 0.5, 10.5])

    def test_degree_one_follows_view_direction(self):
        sh = np.zeros((16, 3))
        sh[2] = 1.0  # z-lobe
        front = sh_basis_color(sh, np.array([0.0, 0.0, 1.0]), 1)
        back = sh_basis_color(sh, np.array([0.0, 0.0, -1.0]), 1)
        np.testing.assert_allclose(front, -back)
        assert front[0] > 0

    def test_higher_bands_ignored_below_their_degree(self):
        sh = np.zeros((16, 3))
        sh[9:] = 1.0
        d = np.array([0.6, 0.0, 0.8])
        np.testing.assert_allclose(sh_basis_color(sh, d, 2), 0.0)
        assert np.any(sh_basis_color(sh, d, 3) != 0.0)

    def test_invalid_degree(self):
        with pytest.raises(ValueError):
            sh_basis_color(np.zeros((16, 3)), np.array([0.0, 0.0, 1.0]), 4)


class TestCamera:
    def test_pixel_centres_are_at_half_integers(self):
        xs, ys = default_camera(4, 3).pixel_centers()
        assert xs.shape == (3, 4)
        assert xs[0, 0] == 0.5 and ys[2, 3] == 2.5

    def test_projection_of_optical_axis_hits_principal_point(self):
        cam = default_camera(32, 32)
        uv, z = cam.project(np.array([[0.0, 0.0, 5.0]]))
        np.testing.assert_allclose(uv[0], [16.0, 16.0])
        assert z[0] == 5.0

    def test_pixel_rays_pass_through_projected_points(self):
        cam = Camera.look_at((1.0, -2.0, -3.0), (0.2, 0.1, 4.0), 40, 30, focal=35.0)
        point = np.array([0.5, 0.3, 2.0])
        uv, _ = cam.project(point[None])
        ray = cam.pixel_rays(uv[:, 0], uv[:, 1])[0]
        to_point = point - cam.camera_center
        np.testing.assert_allclose(ray, to_point / np.linalg.norm(to_point), atol=1e-12)

    def test_look_at_faces_the_target(self):
        cam = Camera.look_at((0.0, 0.0, -5.0), (0.0, 0.0, 0.0), 16, 16, focal=16.0)
        np.testing.assert_allclose(cam.camera_center, [0.0, 0.0, -5.0], atol=1e-12)
        uv, z = cam.project(np.zeros((1, 3)))
        np.testing.assert_allclose(uv[0], [8.0, 8.0], atol=1e-12)
        assert z[0] == pytest.approx(5.0)

    def test_rotation_keeps_centre(self):
        cam = Camera.look_at((1.0, 2.0, 3.0), (0.0, 0.0, 10.0), 16, 16, focal=16.0)
        turned = cam.rotated((0.0, 1.0, 0.0), 0.3)
        np.testing.assert_allclose(turned.camera_center, cam.camera_center, atol=1e-12)
        assert is_rotation(turned.rotation)

    def test_small_yaw_shifts_image_horizontally(self):
        cam = default_camera(64, 64)
        uv0, _ = cam.project(np.array([[0.0, 0.0, 5.0]]))
        uv1, _ = cam.rotated((0.0, 1.0, 0.0), 0.01).project(np.array([[0.0, 0.0, 5.0]]))
        assert abs(uv1[0, 0] - uv0[0, 0]) == pytest.approx(64.0 * math.tan(0.01), rel=1e-6)
        assert uv1[0, 1] == pytest.approx(uv0[0, 1])

    def test_resized_scales_intrinsics(self):
        cam = default_camera(32, 16).resized(16, 8)
        assert (cam.fx, cam.fy, cam.cx, cam.cy) == (16.0, 16.0, 8.0, 4.0)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"width": 0},
            {"fx": -1.0},
            {"near": 0.0},
            {"near": 10.0, "far": 5.0},
            {"rotation": np.diag([1.0, 1.0, -1.0])},
            {"rotation": np.eye(3) * 1.01},
        ],
    )
    def test_invalid_cameras_are_rejected(self, kwargs):
        params = dict(width=8, height=8, fx=8.0, fy=8.0, cx=4.0, cy=4.0, rotation=np.eye(3), translation=np.zeros(3))
        params.update(kwargs)
        with pytest.raises(InvalidCameraError):
            Camera(**params)
