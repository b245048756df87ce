import math

import numpy as np
import pytest
from scipy.integrate import quad

from src.raster.freeflight import (
    FreeFlightParams,
    Ray,
    extinction,
    interaction_probability,
    line_integral_params,
    min_free_flight,
    optical_depth,
    sample_free_flight,
    sigma_t_from_alpha,
    total_optical_depth,
    volume_render_quadrature,
)
from src.raster.rng import SampleKey, Stream, sample_uniform
from src.scene.gaussian import Gaussian3D


def random_params(rng: np.random.Generator) -> FreeFlightParams:
    a = rng.uniform(-4.0, 1.0)
    return FreeFlightParams(
        a=a, b=a * a + rng.uniform(0.0, 2.0), cq=rng.uniform(0.5, 3.0), sigma_t=rng.uniform(0.1, 3.0)
    )


@pytest.fixture
def ray():
    return Ray(origin=np.zeros(3), direction=np.array([0.0, 0.0, 1.0]))


def test_ray_direction_must_be_unit():
    with pytest.raises(ValueError):
        Ray(origin=np.zeros(3), direction=np.array([0.0, 0.0, 2.0]))


@pytest.mark.parametrize("seed", range(5))
def test_optical_depth_matches_numerical_integral(seed):
    p = random_params(np.random.default_rng(seed))
    for t in (0.3, 1.0, 4.0):
        expected, _ = quad(lambda s: float(extinction(p, s)), 0.0, t, epsabs=1e-13, epsrel=1e-11)
        assert float(optical_depth(p, t)) == pytest.approx(expected, rel=1e-8, abs=1e-14)
    assert float(optical_depth(p, np.inf)) == pytest.approx(float(total_optical_depth(p)))


@pytest.mark.parametrize("seed", range(20))
def test_sampled_distances_follow_the_interaction_cdf(seed):
    rng = np.random.default_rng(seed)
    p = random_params(rng)
    u = rng.uniform(size=100_000)
    t = sample_free_flight(p, u)

    grid = np.linspace(0.0, float(-p.a / p.cq) + 6.0 / float(p.cq), 200)
    empirical = np.array([(t <= x).mean() for x in grid])
    expected = interaction_probability(p, grid)
    assert np.max(np.abs(empirical - expected)) < 0.01
    assert np.isinf(t).mean() == pytest.approx(math.exp(-float(total_optical_depth(p))), abs=0.01)


@pytest.mark.parametrize("seed", range(5))
def test_inverse_is_exact(seed):
    rng = np.random.default_rng(100 + seed)
    p = random_params(rng)
    u = rng.uniform(size=2000)
    t = sample_free_flight(p, u)
    finite = np.isfinite(t)
    np.testing.assert_allclose(optical_depth(p, t[finite]), -np.log1p(-u[finite]), rtol=1e-6, atol=1e-12)
    # the misses are exactly the samples beyond the total interaction probability
    np.testing.assert_array_equal(~finite, u >= interaction_probability(p))


def test_inverse_stays_precise_in_the_far_tail():
    p = FreeFlightParams(a=6.0, b=36.5, cq=1.0, sigma_t=2.0)
    total = float(interaction_probability(p))
    assert 0.0 < total < 1e-8
    u = np.array([0.25, 0.5, 0.75]) * total
    t = sample_free_flight(p, u)
    assert np.all(np.isfinite(t))
    np.testing.assert_allclose(optical_depth(p, t), -np.log1p(-u), rtol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_sampled_distance_is_nondecreasing_in_u(seed):
    p = random_params(np.random.default_rng(300 + seed))
    u = np.linspace(0.0, 1.0, 4001, endpoint=False)
    t = sample_free_flight(p, u)
    assert np.all(t[1:] >= t[:-1])


def test_zero_uniform_interacts_at_the_origin():
    p = FreeFlightParams(a=-2.0, b=4.5, cq=1.0, sigma_t=1.0)
    assert float(sample_free_flight(p, 0.0)) == pytest.approx(0.0, abs=1e-12)


def test_zero_extinction_never_interacts():
    p = FreeFlightParams(a=-2.0, b=4.5, cq=1.0, sigma_t=0.0)
    assert np.all(np.isinf(sample_free_flight(p, np.array([0.0, 0.3, 0.99]))))


def test_calibrated_extinction_reproduces_alpha_on_the_central_ray():
    g = Gaussian3D.create((0.3, -0.2, 4.0), scale=(0.4, 0.9, 0.2), rotation=(0.8, 0.4, 0.2, 0.4))
    direction = g.position / np.linalg.norm(g.position)
    for alpha in (0.05, 0.5, 0.95):
        p = line_integral_params(g, Ray(np.zeros(3), direction), sigma_t_from_alpha(g, alpha))
        assert float(interaction_probability(p)) == pytest.approx(alpha, rel=1e-10)


def test_calibration_rejects_opaque_alpha():
    g = Gaussian3D.create((0.0, 0.0, 4.0))
    with pytest.raises(ValueError):
        sigma_t_from_alpha(g, 1.0)
    assert sigma_t_from_alpha(g, 0.0) == 0.0


def test_decomposition_tracking_matches_volume_quadrature(ray):
    g1 = Gaussian3D.create((0.1, 0.0, 3.0), scale=(0.5, 0.5, 0.5))
    g2 = Gaussian3D.create((-0.1, 0.05, 3.5), scale=(0.7, 0.6, 0.8), rotation=(0.9, 0.0, 0.3, 0.1))
    params = [line_integral_params(g1, ray, 1.2), line_integral_params(g2, ray, 0.8)]
    colors = np.array([[0.9, 0.2, 0.1], [0.1, 0.4, 0.8]])
    background = np.array([0.2, 0.2, 0.2])

    rng = np.random.default_rng(7)
    n = 200_000
    t = np.stack([sample_free_flight(p, rng.uniform(size=n)) for p in params])
    nearest = np.argmin(t, axis=0)
    hit = np.isfinite(t.min(axis=0))
    samples = np.where(hit[:, None], colors[nearest], background)

    expected = volume_render_quadrature(params, colors, background)
    estimate = samples.mean(axis=0)
    stderr = samples.std(axis=0) / math.sqrt(n)
    assert np.all(np.abs(estimate - expected) <= 5.0 * stderr + 1e-4)


def test_quadrature_of_empty_ray_is_background():
    np.testing.assert_array_equal(volume_render_quadrature([], np.zeros((0, 3)), (0.1, 0.2, 0.3)), [0.1, 0.2, 0.3])


def test_min_free_flight_picks_nearest(ray):
    g1 = Gaussian3D.create((0.0, 0.0, 3.0), scale=(0.5, 0.5, 0.5))
    g2 = Gaussian3D.create((0.0, 0.0, 3.2), scale=(0.5, 0.5, 0.5))
    params = [line_integral_params(g, ray, 2.0) for g in (g1, g2)]
    keys = [SampleKey(5, (0, 0), 0, gid, Stream.FREE_FLIGHT) for gid in (0, 1)]
    t, winner = min_free_flight(params, keys)
    distances = [float(sample_free_flight(p, sample_uniform(k))) for p, k in zip(params, keys)]
    assert t == min(distances)
    assert winner == (None if math.isinf(t) else int(np.argmin(distances)))
    with pytest.raises(ValueError):
        min_free_flight(params, keys[:1])
