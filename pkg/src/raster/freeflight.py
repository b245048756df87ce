"""
Free-flight sampling through Gaussian extinction fields.

A Gaussian with peak extinction σ_t has density σ(x) = σ_t·exp(−½(x−μ)ᵀΣ⁻¹(x−μ)).
Along x_t = o + t·d this is a 1D Gaussian in t, so the optical depth has a
closed form in erf and the free-flight distance can be drawn by inverting it.
Overlapping Gaussians are resolved by decomposition tracking: sample one
distance per Gaussian and keep the nearest.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import quad_vec
from scipy.optimize import brentq
from scipy.special import erf, erfc, erfcinv

from src.raster.rng import SampleKey, sample_uniform
from src.scene.gaussian import Gaussian3D, inverse_covariance_from

logger = logging.getLogger(__name__)

_SQRT2 = math.sqrt(2.0)
_SQRT_HALF_PI = math.sqrt(math.pi / 2.0)
# Relative optical-depth error above which the analytic inverse is refined.
_INVERSE_TOLERANCE = 1e-7


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        direction = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
            raise ValueError(f"Ray direction must be unit length, got |d|={np.linalg.norm(direction)}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class FreeFlightParams:
    """
    a = (o−μ)ᵀΣ⁻¹d / cq, b = (o−μ)ᵀΣ⁻¹(o−μ), cq = sqrt(dᵀΣ⁻¹d).

    Fields may be scalars or equally-shaped arrays.
    """

    a: np.ndarray
    b: np.ndarray
    cq: np.ndarray
    sigma_t: np.ndarray


def ray_params(origin, directions, means, inv_covs) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Vectorised (a, b, cq) for rays (P, 3) against Gaussians (K, ...).

    Returns arrays of shape (P, K).
    """
    directions = np.atleast_2d(directions)
    diff = np.asarray(origin, dtype=np.float64)[None, :] - np.atleast_2d(means)  # (K, 3)
    a_d = np.einsum("kij,pj->pki", inv_covs, directions)  # (P, K, 3)
    cq = np.sqrt(np.einsum("pj,pkj->pk", directions, a_d))
    a = np.einsum("kj,pkj->pk", diff, a_d) / cq
    b = np.einsum("ki,kij,kj->k", diff, inv_covs, diff)[None, :]
    return a, np.broadcast_to(b, a.shape), cq


def line_integral_params(g: Gaussian3D, ray: Ray, sigma_t: float) -> FreeFlightParams:
    inv_cov = inverse_covariance_from(np.asarray(g.log_scale, dtype=np.float64), np.asarray(g.rotation, dtype=np.float64))
    a, b, cq = ray_params(ray.origin, ray.direction[None, :], np.asarray(g.position)[None, :], inv_cov[None])
    return FreeFlightParams(a=float(a[0, 0]), b=float(b[0, 0]), cq=float(cq[0, 0]), sigma_t=float(sigma_t))


def _amplitude(p: FreeFlightParams) -> np.ndarray:
    """σ_t·sqrt(π/2)/cq·exp((a²−b)/2); a² ≤ b by Cauchy–Schwarz so the exponent is ≤ 0."""
    expo = np.minimum((np.square(p.a) - p.b) / 2.0, 0.0)
    return np.asarray(p.sigma_t) * _SQRT_HALF_PI / np.asarray(p.cq) * np.exp(expo)


def _erf_difference(x0, x1):
    """erf(x1) − erf(x0) for x1 ≥ x0 without cancellation in either tail."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    upper = erfc(x0) - erfc(x1)
    lower = erfc(-x1) - erfc(-x0)
    return np.where(x0 >= 0.0, upper, np.where(x1 <= 0.0, lower, erf(x1) - erf(x0)))


def optical_depth(p: FreeFlightParams, t) -> np.ndarray:
    """τ(t) = ∫_0^t σ(x_s) ds."""
    t = np.asarray(t, dtype=np.float64)
    x0 = np.asarray(p.a) / _SQRT2
    x1 = (np.asarray(p.a) + t * np.asarray(p.cq)) / _SQRT2
    with np.errstate(invalid="ignore"):
        depth = _amplitude(p) * _erf_difference(x0, x1)
    return np.where(np.isinf(t), total_optical_depth(p), depth)


def total_optical_depth(p: FreeFlightParams) -> np.ndarray:
    return _amplitude(p) * erfc(np.asarray(p.a) / _SQRT2)


def transmittance_total(p: FreeFlightParams) -> np.ndarray:
    return np.exp(-total_optical_depth(p))


def interaction_probability(p: FreeFlightParams, t=np.inf) -> np.ndarray:
    """P(free-flight distance ≤ t) = 1 − exp(−τ(t))."""
    return -np.expm1(-optical_depth(p, t))


def _refine(p: FreeFlightParams, target: float) -> float:
    """Solve τ(t) = target by bracketed root finding."""
    cq = float(p.cq)
    hi = max((-float(p.a) + 1.0) / cq, 1.0 / cq)
    f = lambda t: float(optical_depth(FreeFlightParams(p.a, p.b, p.cq, p.sigma_t), t)) - target
    for _ in range(200):
        if f(hi) >= 0.0:
            break
        hi *= 2.0
    else:
        return math.inf
    return brentq(f, 0.0, hi, xtol=1e-14, rtol=1e-12)


def sample_free_flight(p: FreeFlightParams, u) -> np.ndarray:
    """
    Invert 1 − exp(−τ(t)) = u. Returns inf where u lies in the residual
    transmittance, i.e. the ray passes through without interacting.

    With L = −ln(1−u) the inversion reads erfc((a+t·cq)/√2) = erfc(a/√2) − L/A.
    The right-hand side is inverted on whichever tail of erfc keeps precision.
    """
    u = np.asarray(u, dtype=np.float64)
    a = np.broadcast_to(np.asarray(p.a, dtype=np.float64), u.shape)
    cq = np.broadcast_to(np.asarray(p.cq, dtype=np.float64), u.shape)
    amp = np.broadcast_to(_amplitude(p), u.shape)
    depth_target = -np.log1p(-u)
    x0 = a / _SQRT2

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ratio = np.where(amp > 0.0, depth_target / amp, np.inf)
        lower_tail = erfc(x0) - ratio  # erfc of the interaction point
        upper_tail = erfc(-x0) + ratio  # = 2 − lower_tail
        x = np.where(lower_tail <= 1.0, erfcinv(lower_tail), -erfcinv(upper_tail))
        t = np.maximum((_SQRT2 * x - a) / cq, 0.0)

    interacts = (amp > 0.0) & (lower_tail > 0.0)
    t = np.where(interacts, t, np.inf)

    check = optical_depth(FreeFlightParams(a, np.broadcast_to(p.b, u.shape), cq, np.broadcast_to(p.sigma_t, u.shape)), np.where(interacts, t, 0.0))
    bad = interacts & ~(np.abs(check - depth_target) <= _INVERSE_TOLERANCE * depth_target + 1e-13 * amp)
    if np.any(bad):
        flat_t = t.reshape(-1).copy()
        b = np.broadcast_to(p.b, u.shape).reshape(-1)
        sig = np.broadcast_to(p.sigma_t, u.shape).reshape(-1)
        for i in np.flatnonzero(bad.reshape(-1)):
            single = FreeFlightParams(a.reshape(-1)[i], b[i], cq.reshape(-1)[i], sig[i])
            flat_t[i] = _refine(single, float(depth_target.reshape(-1)[i]))
        logger.debug(f"Refined {int(bad.sum())} free-flight samples by root finding")
        t = flat_t.reshape(u.shape)
    return t


def min_free_flight(
    params_list: Sequence[FreeFlightParams], keys: Sequence[SampleKey]
) -> Tuple[float, Optional[int]]:
    """Decomposition tracking: nearest of the per-Gaussian free-flight distances."""
    if len(params_list) != len(keys):
        raise ValueError("min_free_flight needs one sample key per Gaussian")
    best_t, winner = math.inf, None
    for index, (params, key) in enumerate(zip(params_list, keys)):
        t = float(sample_free_flight(params, sample_uniform(key)))
        if t < best_t:
            best_t, winner = t, index
    return best_t, winner


def central_ray_integral(origin, means, inv_covs) -> np.ndarray:
    """Unit-σ_t optical depth τ(∞) along the ray from `origin` through each mean."""
    means = np.atleast_2d(means)
    offset = means - np.asarray(origin, dtype=np.float64)[None, :]
    dirs = offset / np.linalg.norm(offset, axis=1, keepdims=True)
    a_d = np.einsum("kij,kj->ki", inv_covs, dirs)
    cq = np.sqrt(np.einsum("kj,kj->k", dirs, a_d))
    a = np.einsum("kj,kj->k", -offset, a_d) / cq
    b = np.einsum("ki,kij,kj->k", offset, inv_covs, offset)
    return total_optical_depth(FreeFlightParams(a, b, cq, np.ones_like(a)))


def calibrate_sigma_t(origin, means, inv_covs, alphas) -> np.ndarray:
    """σ_t = −ln(1−α)/I₀ so the central ray interacts with probability α."""
    alphas = np.asarray(alphas, dtype=np.float64)
    return -np.log1p(-alphas) / central_ray_integral(origin, means, inv_covs)


def sigma_t_from_alpha(g: Gaussian3D, alpha: float, origin=(0.0, 0.0, 0.0)) -> float:
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")
    inv_cov = inverse_covariance_from(np.asarray(g.log_scale, dtype=np.float64), np.asarray(g.rotation, dtype=np.float64))
    return float(calibrate_sigma_t(origin, np.asarray(g.position)[None, :], inv_cov[None], [alpha])[0])


def extinction(p: FreeFlightParams, t) -> np.ndarray:
    """σ(x_t) along the ray."""
    t = np.asarray(t, dtype=np.float64)
    expo = np.minimum((np.square(p.a) - p.b) / 2.0, 0.0)
    return np.asarray(p.sigma_t) * np.exp(expo - 0.5 * np.square(np.asarray(p.a) + t * np.asarray(p.cq)))


def volume_render_quadrature(
    params_list: Sequence[FreeFlightParams], colors, background=(0.0, 0.0, 0.0)
) -> np.ndarray:
    """
    Reference colour of the mixed-extinction volume rendering equation,
    C = ∫ Σσ_i(t)·c_i·exp(−Στ_i(t)) dt + exp(−Στ_i(∞))·background,
    integrated numerically.
    """
    colors = np.atleast_2d(np.asarray(colors, dtype=np.float64))
    background = np.asarray(background, dtype=np.float64)
    if not params_list:
        return background.copy()

    centers = [max(-float(p.a) / float(p.cq), 0.0) for p in params_list]
    t_hi = max(max((-float(p.a) + 12.0) / float(p.cq) for p in params_list), 1e-9)

    def integrand(t):
        sigmas = np.array([float(extinction(p, t)) for p in params_list])
        depth = sum(float(optical_depth(p, t)) for p in params_list)
        return (sigmas[:, None] * colors).sum(axis=0) * math.exp(-depth)

    points = sorted({c for c in centers if 0.0 < c < t_hi})
    total = 0.0 * background
    edges = [0.0, *points, t_hi]
    for lo, hi in zip(edges[:-1], edges[1:]):
        value, _ = quad_vec(integrand, lo, hi, epsabs=1e-12, epsrel=1e-10)
        total = total + value
    residual = math.exp(-sum(float(total_optical_depth(p)) for p in params_list))
    return total + residual * background
