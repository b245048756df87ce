import numpy as np
import pytest

from src.metrics.image_metrics import (
    PSNR_CAP_DB,
    ImageSizeMismatchError,
    abs_diff_heatmap,
    evaluate,
    mse,
    psnr,
    ssim,
)


@pytest.fixture
def noisy_pair():
    rng = np.random.default_rng(0)
    a = rng.uniform(size=(24, 24, 3))
    b = np.clip(a + rng.normal(scale=0.05, size=a.shape), 0.0, 1.0)
    return a, b


def test_identical_images():
    image = np.random.default_rng(1).uniform(size=(16, 16, 3))
    report = evaluate(image, image)
    assert report.mse == 0.0
    assert report.psnr == PSNR_CAP_DB
    assert report.ssim == pytest.approx(1.0)


def test_known_values():
    zeros = np.zeros((8, 8, 3))
    assert psnr(zeros, np.full((8, 8, 3), 0.1)) == pytest.approx(20.0)
    assert mse(zeros, np.full((8, 8, 3), 0.5)) == pytest.approx(0.25)


def test_values_are_clipped_to_unit_range():
    assert mse(np.full((4, 4, 3), 2.0), np.ones((4, 4, 3))) == 0.0
    assert mse(np.full((4, 4, 3), -1.0), np.zeros((4, 4, 3))) == 0.0


def test_ssim_of_constant_images():
    c1 = 0.01**2
    value = ssim(np.zeros((16, 16, 3)), np.full((16, 16, 3), 0.5))
    assert value == pytest.approx(c1 / (0.25 + c1), rel=1e-6)


def test_metrics_are_symmetric(noisy_pair):
    a, b = noisy_pair
    assert mse(a, b) == pytest.approx(mse(b, a))
    assert ssim(a, b) == pytest.approx(ssim(b, a))
    assert 0.0 < ssim(a, b) < 1.0


def test_ssim_accepts_single_channel(noisy_pair):
    a, b = noisy_pair
    assert ssim(a[..., 0], b[..., 0]) == pytest.approx(ssim(a[..., :1], b[..., :1]))


def test_size_mismatch():
    with pytest.raises(ImageSizeMismatchError):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))
    with pytest.raises(ValueError):
        abs_diff_heatmap(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)))


def test_heatmap_takes_the_worst_channel():
    a = np.zeros((2, 2, 3))
    b = a.copy()
    b[0, 1] = [0.1, -0.4, 0.2]
    np.testing.assert_allclose(abs_diff_heatmap(a, b), [[0.0, 0.4], [0.0, 0.0]])
