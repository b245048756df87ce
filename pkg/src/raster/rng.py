"""
Stateless counter-based uniforms.

Every random number the renderer consumes is a pure function of
(pass_seed, pixel, spp_index, gaussian_id, stream). Replaying a pass only
needs the seed, so nothing per sample is stored, and the order in which
primitives are visited cannot change a decision.

The mixer is the splitmix64 finalizer, chained once per key component.
"""

import enum
from dataclasses import dataclass

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_MUL2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_S32 = np.uint64(32)
_S8 = np.uint64(8)
_MASK32 = np.uint64(0xFFFFFFFF)

# XOR-ed into a pass seed to get an independent, reproducible companion seed.
DECORRELATION_KEY = 0xD1B54A32D192ED03

_TO_UNIT = 2.0 ** -53


class Stream(enum.IntEnum):
    ACCEPT = 1
    FREE_FLIGHT = 2


@dataclass(frozen=True)
class SampleKey:
    pass_seed: int
    pixel: tuple
    spp_index: int
    gaussian_id: int
    stream: Stream = Stream.ACCEPT


def _u64(value) -> np.ndarray:
    arr = np.asarray(value)
    if arr.dtype != np.uint64:
        arr = arr.astype(np.int64).astype(np.uint64)
    return np.atleast_1d(arr)


def mix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 step: add the golden gamma, then the two multiply-xorshift rounds."""
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> _S30)) * _MUL1
        z = (z ^ (z >> _S27)) * _MUL2
    return z ^ (z >> _S31)


def hash_key(pass_seed, px, py, spp_index, gaussian_id, stream) -> np.ndarray:
    """64-bit hash of broadcastable key components."""
    seed = np.uint64(int(pass_seed) % 2**64)
    pixel = (_u64(py) & _MASK32) << _S32 | (_u64(px) & _MASK32)
    sample = _u64(spp_index) << _S8 | _u64(int(stream))
    h = mix64(np.atleast_1d(seed))
    h = mix64(h ^ pixel)
    h = mix64(h ^ sample)
    return mix64(h ^ _u64(gaussian_id))


def uniform(pass_seed, px, py, spp_index, gaussian_id, stream=Stream.ACCEPT) -> np.ndarray:
    """Uniforms in [0, 1) for broadcastable integer key arrays."""
    return (hash_key(pass_seed, px, py, spp_index, gaussian_id, stream) >> _S11).astype(np.float64) * _TO_UNIT


def sample_uniform(key: SampleKey) -> float:
    px, py = key.pixel
    return float(uniform(key.pass_seed, px, py, key.spp_index, key.gaussian_id, key.stream)[0])


def decorrelated_seed(pass_seed: int) -> int:
    return (int(pass_seed) ^ DECORRELATION_KEY) % 2**64


def derive_seed(base_seed: int, index: int) -> int:
    """Seed for the index-th pass of a sequence (fine-tuning iteration, TAA frame)."""
    h = mix64(np.atleast_1d(np.uint64(int(base_seed) % 2**64)) ^ mix64(_u64(index)))
    return int(h[0])
