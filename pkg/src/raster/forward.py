"""
Forward renderers: the sorted alpha-blending reference and the sorting-free
stochastic-transparency estimator.

Images are float64 arrays of shape (H, W, 3), linear and unclamped.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.config.render_config import DepthMode, RenderConfig
from src.raster.binning import TileBins, cull_and_bin
from src.raster.freeflight import FreeFlightParams, ray_params, sample_free_flight
from src.raster.parallel import map_tiles
from src.raster.projection import (
    ProjectedSplat,
    ProjectedSplats,
    gaussian_alpha,
    plane_depth,
    project_scene,
    splat_alpha,
)
from src.raster.rng import SampleKey, Stream, sample_uniform, uniform
from src.scene.camera import Camera
from src.scene.gaussian import Scene

logger = logging.getLogger(__name__)

# Upper bound on (samples × pixels × splats) evaluated at once per tile.
MAX_BATCH_ELEMENTS = 1 << 22


class RenderError(Exception):
    """Base exception for rendering failures."""
    pass


class UnsupportedDepthModeError(RenderError):
    """The requested depth mode has no meaning for this renderer."""
    pass


@dataclass(frozen=True)
class PixelSampleState:
    z: float = math.inf
    color: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    selected_id: Optional[int] = None


@dataclass(frozen=True)
class ReplayEntry:
    gaussian_id: np.ndarray  # (S,), −1 for background
    color: np.ndarray  # (S, 3)
    depth: np.ndarray  # (S,)


@dataclass(frozen=True)
class ReplayRecord:
    """Per (pixel, sample) selection of a stochastic pass."""

    pass_seed: int
    depth_mode: DepthMode
    gaussian_id: np.ndarray  # (S, H, W)
    color: np.ndarray  # (S, H, W, 3)
    depth: np.ndarray  # (S, H, W)

    def entry(self, x: int, y: int) -> ReplayEntry:
        return ReplayEntry(self.gaussian_id[:, y, x], self.color[:, y, x], self.depth[:, y, x])


@dataclass(frozen=True)
class RenderResult:
    image: np.ndarray
    variance: np.ndarray  # per-pixel variance of a single sample
    hit_position: np.ndarray  # mean world-space hit point per pixel
    replay: Optional[ReplayRecord] = None


@dataclass(frozen=True)
class FrameContext:
    """Projection and binning shared by every pass over one view."""

    splats: ProjectedSplats
    bins: TileBins
    cam: Camera


def prepare_frame(scene: Scene, cam: Camera, tile_size: int) -> FrameContext:
    splats = project_scene(scene, cam)
    return FrameContext(splats=splats, bins=cull_and_bin(splats, cam, tile_size), cam=cam)


@dataclass(frozen=True)
class TileGeometry:
    ix: np.ndarray  # (P,)
    iy: np.ndarray
    idx: np.ndarray  # (K,) rows of ProjectedSplats, sorted by gaussian id
    uid: np.ndarray
    alpha: np.ndarray  # (P, K)
    colors: np.ndarray  # (K, 3)
    depth: Optional[np.ndarray]  # (P, K); None in FREE_FLIGHT mode
    flight: Optional[FreeFlightParams] = None  # (P, K) fields
    depth_per_t: Optional[np.ndarray] = None  # (P,) camera-z per unit ray length


def tile_geometry(ctx: FrameContext, tile: int, mode: DepthMode) -> TileGeometry:
    splats, cam = ctx.splats, ctx.cam
    ix, iy = ctx.bins.tile_pixels(tile)
    px, py = ix + 0.5, iy + 0.5
    idx = ctx.bins.lists[tile]
    alpha = splat_alpha(splats, idx, px, py)
    geom = dict(ix=ix, iy=iy, idx=idx, uid=splats.ids[idx], alpha=alpha, colors=splats.view_color[idx])

    if mode is DepthMode.MEAN:
        return TileGeometry(**geom, depth=np.broadcast_to(splats.mean_depth[idx][None, :], alpha.shape))
    if mode is DepthMode.PLANE:
        depth = plane_depth(splats.plane[idx][None], splats.mean2d[idx][None], px[:, None], py[:, None])
        return TileGeometry(**geom, depth=depth)

    dirs = cam.pixel_rays(px, py)
    a, b, cq = ray_params(cam.camera_center, dirs, splats.world_mean[idx], splats.inv_cov3d[idx])
    flight = FreeFlightParams(a=a, b=b, cq=cq, sigma_t=np.broadcast_to(splats.sigma_t[idx][None, :], a.shape))
    depth_per_t = (dirs @ cam.rotation.T)[:, 2]
    return TileGeometry(**geom, depth=None, flight=flight, depth_per_t=depth_per_t)


def tile_samples(geom: TileGeometry, cfg: RenderConfig, s0: int, s1: int, pass_seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Winners of samples s0..s1 for every pixel of a tile.

    Returns (winner, z) of shape (S, P): winner indexes the tile's splat list,
    −1 marks the background. Ties in z go to the smaller gaussian id.
    """
    n_p, n_k = geom.alpha.shape
    n_s = s1 - s0
    if n_k == 0:
        return np.full((n_s, n_p), -1, dtype=np.int64), np.full((n_s, n_p), np.inf)

    s = np.arange(s0, s1)[:, None, None]
    ix = geom.ix[None, :, None]
    iy = geom.iy[None, :, None]
    uid = geom.uid[None, None, :]
    if cfg.depth_mode is DepthMode.FREE_FLIGHT:
        u = uniform(pass_seed, ix, iy, s, uid, Stream.FREE_FLIGHT)
        f = geom.flight
        t = sample_free_flight(FreeFlightParams(f.a[None], f.b[None], f.cq[None], f.sigma_t[None]), u)
        z = np.where(geom.alpha[None] > 0.0, t * geom.depth_per_t[None, :, None], np.inf)
    else:
        u = uniform(pass_seed, ix, iy, s, uid, Stream.ACCEPT)
        z = np.where(u < geom.alpha[None], geom.depth[None], np.inf)

    winner = np.argmin(z, axis=2)
    z_min = np.take_along_axis(z, winner[..., None], axis=2)[..., 0]
    winner = np.where(np.isfinite(z_min), winner, -1)
    return winner, z_min


def sample_batches(n_samples: int, n_pixels: int, n_splats: int) -> List[Tuple[int, int]]:
    step = max(1, MAX_BATCH_ELEMENTS // max(1, n_pixels * n_splats))
    return [(s, min(s + step, n_samples)) for s in range(0, n_samples, step)]


@dataclass
class _StochasticTile:
    ix: np.ndarray
    iy: np.ndarray
    color_sum: np.ndarray
    color_sq_sum: np.ndarray
    depth_sum: np.ndarray
    winner_ids: Optional[np.ndarray] = None
    colors: Optional[np.ndarray] = None
    depths: Optional[np.ndarray] = None


def _stochastic_tile(ctx: FrameContext, cfg: RenderConfig, tile: int, keep_replay: bool) -> _StochasticTile:
    geom = tile_geometry(ctx, tile, cfg.depth_mode)
    background = np.asarray(cfg.background, dtype=np.float64)
    colors_ext = np.vstack([geom.colors, background[None]])  # index −1 → background
    uid_ext = np.append(geom.uid, -1)
    n_p, n_k = geom.alpha.shape

    out = _StochasticTile(geom.ix, geom.iy, np.zeros((n_p, 3)), np.zeros((n_p, 3)), np.zeros(n_p))
    if keep_replay:
        out.winner_ids = np.empty((cfg.spp, n_p), dtype=np.int64)
        out.colors = np.empty((cfg.spp, n_p, 3))
        out.depths = np.empty((cfg.spp, n_p))

    for s0, s1 in sample_batches(cfg.spp, n_p, n_k):
        winner, z = tile_samples(geom, cfg, s0, s1, cfg.pass_seed)
        color = colors_ext[winner]
        out.color_sum += color.sum(axis=0)
        out.color_sq_sum += np.square(color).sum(axis=0)
        out.depth_sum += np.where(winner >= 0, z, ctx.cam.far).sum(axis=0)
        if keep_replay:
            out.winner_ids[s0:s1] = uid_ext[winner]
            out.colors[s0:s1] = color
            out.depths[s0:s1] = z
    return out


def stochastic_pass(
    scene: Scene,
    cam: Camera,
    cfg: RenderConfig,
    keep_replay: bool = False,
    ctx: Optional[FrameContext] = None,
) -> RenderResult:
    """
    One stochastic-transparency pass: cfg.spp independent single-sample
    estimates per pixel, averaged. Every binned splat is tested; there is no
    early termination.
    """
    ctx = ctx or prepare_frame(scene, cam, cfg.tile_size)
    tiles = map_tiles(lambda t: _stochastic_tile(ctx, cfg, t, keep_replay), ctx.bins, cfg.threads)

    h, w, s = cam.height, cam.width, cfg.spp
    color_sum = np.zeros((h, w, 3))
    color_sq_sum = np.zeros((h, w, 3))
    depth_sum = np.zeros((h, w))
    if keep_replay:
        ids = np.empty((s, h, w), dtype=np.int64)
        colors = np.empty((s, h, w, 3))
        depths = np.empty((s, h, w))
    for tile in tiles:
        color_sum[tile.iy, tile.ix] = tile.color_sum
        color_sq_sum[tile.iy, tile.ix] = tile.color_sq_sum
        depth_sum[tile.iy, tile.ix] = tile.depth_sum
        if keep_replay:
            ids[:, tile.iy, tile.ix] = tile.winner_ids
            colors[:, tile.iy, tile.ix] = tile.colors
            depths[:, tile.iy, tile.ix] = tile.depths

    image = color_sum / s
    if s > 1:
        variance = np.maximum(color_sq_sum / s - np.square(image), 0.0) * (s / (s - 1))
    else:
        variance = np.zeros_like(image)

    px, py = cam.pixel_centers()
    ray_unit_z = cam.camera_rays(px, py) @ cam.rotation
    hit_position = cam.camera_center + (depth_sum / s)[..., None] * ray_unit_z

    replay = ReplayRecord(cfg.pass_seed, cfg.depth_mode, ids, colors, depths) if keep_replay else None
    return RenderResult(image=image, variance=variance, hit_position=hit_position, replay=replay)


def render_stochastic(scene: Scene, cam: Camera, cfg: RenderConfig) -> np.ndarray:
    return stochastic_pass(scene, cam, cfg).image


@dataclass(frozen=True)
class SortedTile:
    """Front-to-back blending state of one tile, in per-pixel depth order."""

    geom: TileGeometry
    order: np.ndarray  # (P, K) column permutation, nearest first
    alpha: np.ndarray  # (P, K) in that order
    colors: np.ndarray  # (P, K, 3) in that order
    transmittance: np.ndarray  # (P, K) before each splat
    included: np.ndarray  # (P, K) reached before the early stop
    final_transmittance: np.ndarray  # (P,)


def sorted_tile(ctx: FrameContext, cfg: RenderConfig, tile: int) -> SortedTile:
    if cfg.depth_mode is DepthMode.FREE_FLIGHT:
        raise UnsupportedDepthModeError(
            "The sorted reference has no FREE_FLIGHT mode; use the volume quadrature oracle instead"
        )
    geom = tile_geometry(ctx, tile, cfg.depth_mode)
    n_p, n_k = geom.alpha.shape
    order = np.argsort(geom.depth, axis=1, kind="stable")
    alpha = np.take_along_axis(geom.alpha, order, axis=1)
    colors = geom.colors[order]
    transmittance = np.cumprod(np.hstack([np.ones((n_p, 1)), 1.0 - alpha[:, :-1]]), axis=1)[:, :n_k]
    included = transmittance >= cfg.early_stop_transmittance
    if n_k:
        final = np.where(included, transmittance * (1.0 - alpha), np.inf).min(axis=1)
    else:
        final = np.ones(n_p)
    return SortedTile(geom, order, alpha, colors, transmittance, included, final)


def _sorted_tile_color(ctx: FrameContext, cfg: RenderConfig, tile: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    st = sorted_tile(ctx, cfg, tile)
    weights = st.alpha * st.transmittance * st.included
    color = np.einsum("pk,pkc->pc", weights, st.colors) + st.final_transmittance[:, None] * np.asarray(cfg.background)
    return st.geom.ix, st.geom.iy, color


def render_sorted_ab(
    scene: Scene, cam: Camera, cfg: RenderConfig, ctx: Optional[FrameContext] = None
) -> np.ndarray:
    """
    Alpha blending in depth order: C = Σ c_i·α_i·T_i + T_final·background.

    MEAN mode sorts by mean depth; PLANE mode sorts every pixel by its
    plane depth. Ties go to the smaller gaussian id.
    """
    if cfg.depth_mode is DepthMode.FREE_FLIGHT:
        raise UnsupportedDepthModeError(
            "The sorted reference has no FREE_FLIGHT mode; use the volume quadrature oracle instead"
        )
    ctx = ctx or prepare_frame(scene, cam, cfg.tile_size)
    image = np.zeros((cam.height, cam.width, 3))
    for ix, iy, color in map_tiles(lambda t: _sorted_tile_color(ctx, cfg, t), ctx.bins, cfg.threads):
        image[iy, ix] = color
    return image


def pmf_exact(alphas: Sequence[float], depths: Sequence[float], ids: Optional[Sequence[int]] = None) -> Tuple[np.ndarray, float]:
    """
    Selection probabilities P(i) = α_i·Π_{front}(1 − α_k), in input order, and
    the background probability Π(1 − α_k).
    """
    alphas = np.asarray(alphas, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    ids = np.arange(alphas.size) if ids is None else np.asarray(ids)
    order = np.lexsort((ids, depths))
    a = alphas[order]
    before = np.cumprod(np.concatenate([[1.0], 1.0 - a]))
    probs = np.empty_like(alphas)
    probs[order] = a * before[:-1]
    return probs, float(before[-1])


def resolve_depth(
    splat: ProjectedSplat,
    pixel: Tuple[int, int],
    cfg: RenderConfig,
    key: SampleKey,
    cam: Optional[Camera] = None,
) -> float:
    """Depth of `splat` for one sample at integer pixel (x, y); inf means no interaction."""
    px, py = pixel[0] + 0.5, pixel[1] + 0.5
    if cfg.depth_mode is DepthMode.MEAN:
        return splat.mean_depth
    if cfg.depth_mode is DepthMode.PLANE:
        return splat.depth_at(px, py)

    if cam is None:
        raise ValueError("FREE_FLIGHT depth needs the camera to build the pixel ray")
    if splat.sigma_t <= 0.0:
        return math.inf
    direction = cam.pixel_rays(np.array([px]), np.array([py]))
    a, b, cq = ray_params(cam.camera_center, direction, splat.world_mean[None], splat.inv_cov3d[None])
    u = sample_uniform(SampleKey(key.pass_seed, key.pixel, key.spp_index, key.gaussian_id, Stream.FREE_FLIGHT))
    t = float(sample_free_flight(FreeFlightParams(a[0, 0], b[0, 0], cq[0, 0], splat.sigma_t), u))
    return t * float((direction @ cam.rotation.T)[0, 2])


def listing_sample(
    splats: ProjectedSplats,
    visit_order: Sequence[int],
    pixel: Tuple[int, int],
    spp_index: int,
    cfg: RenderConfig,
    cam: Optional[Camera] = None,
) -> PixelSampleState:
    """
    One sample of the stochastic estimator evaluated literally: visit splats
    in the given order, accept with probability α, keep the nearest.
    """
    px, py = pixel[0] + 0.5, pixel[1] + 0.5
    state = PixelSampleState(color=tuple(cfg.background))
    for i in visit_order:
        splat = splats[i]
        alpha = float(gaussian_alpha(splat.mean2d, splat.inv_cov2d, splat.opacity, px, py))
        key = SampleKey(cfg.pass_seed, pixel, spp_index, splat.gaussian_id, Stream.ACCEPT)
        z = resolve_depth(splat, pixel, cfg, key, cam)
        if cfg.depth_mode is DepthMode.FREE_FLIGHT:
            accepted = alpha > 0.0 and math.isfinite(z)
        else:
            accepted = sample_uniform(key) < alpha
        if not accepted:
            continue
        closer = z < state.z or (z == state.z and splat.gaussian_id < state.selected_id)
        if closer:
            state = PixelSampleState(z=z, color=tuple(splat.view_color.tolist()), selected_id=splat.gaussian_id)
    return state
