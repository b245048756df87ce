import numpy as np
import pytest
from scipy import stats

from src.raster.rng import (
    DECORRELATION_KEY,
    SampleKey,
    Stream,
    decorrelated_seed,
    derive_seed,
    sample_uniform,
    uniform,
)


def test_uniform_is_a_pure_function_of_the_key():
    a = uniform(7, 3, 4, 2, 11)
    b = uniform(7, 3, 4, 2, 11)
    assert a[0] == b[0]


@pytest.mark.parametrize(
    "field,value",
    [
        ("pass_seed", 8),
        ("px", 4),
        ("py", 5),
        ("spp_index", 3),
        ("gaussian_id", 12),
        ("stream", Stream.FREE_FLIGHT),
    ],
)
def test_every_key_component_changes_the_value(field, value):
    key = dict(pass_seed=7, px=3, py=4, spp_index=2, gaussian_id=11, stream=Stream.ACCEPT)
    base = uniform(**key)[0]
    key[field] = value
    assert uniform(**key)[0] != base


def test_swapping_pixel_coordinates_gives_different_values():
    assert uniform(0, 1, 2, 0, 0)[0] != uniform(0, 2, 1, 0, 0)[0]


def test_values_lie_in_unit_interval_and_are_uniform():
    ids = np.arange(100_000)
    u = uniform(123, 5, 9, 0, ids)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.005
    assert stats.kstest(u, "uniform").pvalue > 1e-4


def test_broadcasting_matches_scalar_calls():
    px = np.arange(4)[:, None]
    ids = np.array([0, 5, 9])[None, :]
    grid = uniform(3, px, 1, 2, ids)
    assert grid.shape == (4, 3)
    assert grid[2, 1] == uniform(3, 2, 1, 2, 5)[0]


def test_sample_uniform_matches_vectorised_form():
    key = SampleKey(pass_seed=42, pixel=(6, 2), spp_index=3, gaussian_id=17, stream=Stream.FREE_FLIGHT)
    assert sample_uniform(key) == uniform(42, 6, 2, 3, 17, Stream.FREE_FLIGHT)[0]


def test_large_seeds_are_accepted():
    value = uniform(2**64 - 1, 0, 0, 0, 0)[0]
    assert 0.0 <= value < 1.0


def test_decorrelated_seed_is_an_involution_and_differs():
    seed = 12345
    other = decorrelated_seed(seed)
    assert other != seed
    assert other == seed ^ DECORRELATION_KEY
    assert decorrelated_seed(other) == seed


def test_derived_seeds_are_distinct_and_reproducible():
    seeds = [derive_seed(9, i) for i in range(1000)]
    assert len(set(seeds)) == 1000
    assert derive_seed(9, 17) == seeds[17]
    assert derive_seed(10, 17) != seeds[17]
