"""
Detached gradients of the stochastic renderer with path replay.

The estimator only decides *weights*: per (pixel, splat) pair a weight on
the splat's opacity at that pixel, and a weight on its view colour. Those
decisions (acceptance, depth comparisons) live in numpy. A torch surrogate
Σ w_α·α + Σ w_c·c, recomputed from leaf parameters, is then differentiated
so the partials reach positions, scales, rotations, opacity logits and SH
coefficients without ever touching a sampling decision.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import torch

from src.config.render_config import DepthMode, LossKind, RenderConfig
from src.raster.forward import (
    FrameContext,
    RenderError,
    ReplayEntry,
    ReplayRecord,
    UnsupportedDepthModeError,
    prepare_frame,
    render_sorted_ab,
    sample_batches,
    sorted_tile,
    stochastic_pass,
    tile_geometry,
    tile_samples,
)
from src.metrics.image_metrics import ImageSizeMismatchError
from src.raster.parallel import map_tiles
from src.raster.projection import ProjectedSplats, gaussian_alpha, project_tensors, scene_tensors
from src.raster.rng import decorrelated_seed
from src.scene.camera import Camera
from src.scene.gaussian import PARAM_NAMES, Scene

logger = logging.getLogger(__name__)


class ReplayMismatchError(RenderError):
    """The replayed pass selected different splats than the recorded pass."""
    pass


_GRAD_FIELDS = {
    "positions": "d_position",
    "log_scales": "d_log_scale",
    "rotations": "d_rotation",
    "opacity_logits": "d_opacity_logit",
    "sh_coeffs": "d_sh",
}


@dataclass
class GradientBuffer:
    """Per-Gaussian partials, rows aligned with the scene arrays."""

    ids: np.ndarray
    d_position: np.ndarray
    d_log_scale: np.ndarray
    d_rotation: np.ndarray
    d_opacity_logit: np.ndarray
    d_sh: np.ndarray
    loss: float = float("nan")

    @classmethod
    def zeros(cls, scene: Scene) -> "GradientBuffer":
        return cls(
            ids=scene.ids.copy(),
            **{_GRAD_FIELDS[name]: np.zeros_like(value) for name, value in scene.params().items()},
        )

    def by_param(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, attr) for name, attr in _GRAD_FIELDS.items()}

    def __add__(self, other: "GradientBuffer") -> "GradientBuffer":
        summed = {attr: getattr(self, attr) + getattr(other, attr) for attr in _GRAD_FIELDS.values()}
        return GradientBuffer(ids=self.ids, **summed, loss=self.loss)

    def scaled(self, factor: float) -> "GradientBuffer":
        scaled = {attr: getattr(self, attr) * factor for attr in _GRAD_FIELDS.values()}
        return GradientBuffer(ids=self.ids, **scaled, loss=self.loss)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.by_param().values())


def _check_sizes(rendered: np.ndarray, target: np.ndarray) -> None:
    if rendered.shape != target.shape:
        raise ImageSizeMismatchError(f"Image shapes differ: {rendered.shape} vs {target.shape}")


def loss_value(rendered: np.ndarray, target: np.ndarray, loss: LossKind) -> float:
    _check_sizes(rendered, target)
    diff = rendered - target
    return float(np.mean(np.abs(diff)) if loss is LossKind.L1 else np.mean(np.square(diff)))


def loss_grad(rendered: np.ndarray, target: np.ndarray, loss: LossKind) -> np.ndarray:
    """∂L/∂C per pixel-channel for the mean L1 or L2 loss."""
    _check_sizes(rendered, target)
    diff = rendered - target
    if loss is LossKind.L2:
        return 2.0 * diff / diff.size
    return np.sign(diff) / diff.size


@dataclass(frozen=True)
class CoveringSplats:
    """The splats of a pixel's tile, in gaussian-id order, evaluated at that pixel."""

    splat_index: np.ndarray  # rows of ProjectedSplats
    uid: np.ndarray
    alpha: np.ndarray
    depth: np.ndarray


@dataclass(frozen=True)
class PairWeights:
    px: np.ndarray  # integer pixel x
    py: np.ndarray
    splat: np.ndarray  # rows of ProjectedSplats
    w_alpha: np.ndarray  # (M,)
    w_color: np.ndarray  # (M, 3)

    def __len__(self) -> int:
        return int(self.splat.shape[0])


@dataclass
class PairAccumulator:
    """Collects per-pixel weight rows; concatenation order is the insertion order."""

    _px: List[np.ndarray] = field(default_factory=list)
    _py: List[np.ndarray] = field(default_factory=list)
    _splat: List[np.ndarray] = field(default_factory=list)
    _w_alpha: List[np.ndarray] = field(default_factory=list)
    _w_color: List[np.ndarray] = field(default_factory=list)

    def add(self, pixel: Tuple[int, int], splat: np.ndarray, w_alpha: np.ndarray, w_color: np.ndarray) -> None:
        keep = (w_alpha != 0.0) | np.any(w_color != 0.0, axis=1)
        if not np.any(keep):
            return
        count = int(keep.sum())
        self._px.append(np.full(count, pixel[0], dtype=np.int64))
        self._py.append(np.full(count, pixel[1], dtype=np.int64))
        self._splat.append(splat[keep])
        self._w_alpha.append(w_alpha[keep])
        self._w_color.append(w_color[keep])

    def extend(self, other: "PairAccumulator") -> None:
        self._px += other._px
        self._py += other._py
        self._splat += other._splat
        self._w_alpha += other._w_alpha
        self._w_color += other._w_color

    def weights(self) -> PairWeights:
        if not self._splat:
            empty = np.zeros(0, dtype=np.int64)
            return PairWeights(empty, empty, empty, np.zeros(0), np.zeros((0, 3)))
        return PairWeights(
            px=np.concatenate(self._px),
            py=np.concatenate(self._py),
            splat=np.concatenate(self._splat),
            w_alpha=np.concatenate(self._w_alpha),
            w_color=np.concatenate(self._w_color),
        )


def backprop_pixel(
    entry: ReplayEntry,
    covering: CoveringSplats,
    dldc: np.ndarray,
    background: np.ndarray,
    out: PairAccumulator,
    pixel: Tuple[int, int],
    sample_weight: float = 1.0,
) -> None:
    """
    Accumulate the detached per-sample gradient of every recorded sample of a pixel.

    Selected splat i: ∂L/∂c_i += ∂L/∂C and ∂L/∂α_i += ∂L/∂C·c_i/α_i.
    Splats k in front of i: ∂L/∂α_k += −∂L/∂C·c_i/(1 − α_k).
    Background samples use c_i = background and treat every splat as in front.
    Splats behind the selection receive nothing.
    """
    n_k = covering.uid.size
    w_alpha = np.zeros(n_k)
    w_color = np.zeros((n_k, 3))
    selected = entry.gaussian_id
    hit = selected >= 0
    # dL/dC · c_i per sample; the recorded colour is the background for misses.
    gc = entry.color @ dldc

    if np.any(hit):
        col = np.searchsorted(covering.uid, selected[hit])
        if np.any(col >= n_k) or np.any(covering.uid[np.minimum(col, n_k - 1)] != selected[hit]):
            raise ReplayMismatchError(f"Pixel {pixel}: recorded selection is not among the covering splats")
        alpha_sel = covering.alpha[col]
        if np.any(alpha_sel <= 0.0):
            raise ReplayMismatchError(f"Pixel {pixel}: a selected splat has zero opacity")
        np.add.at(w_alpha, col, gc[hit] / alpha_sel)
        w_color += np.bincount(col, minlength=n_k)[:, None] * dldc[None, :]

    z_sel = np.where(hit, entry.depth, np.inf)
    depth = covering.depth[None, :]
    front = (depth < z_sel[:, None]) | ((depth == z_sel[:, None]) & (covering.uid[None, :] < selected[:, None]))
    front &= covering.alpha[None, :] > 0.0
    w_alpha -= (front * gc[:, None]).sum(axis=0) / (1.0 - covering.alpha)

    out.add(pixel, covering.splat_index, w_alpha * sample_weight, w_color * sample_weight)


def _replay_tile(
    ctx: FrameContext, cfg: RenderConfig, tile: int, replay: ReplayRecord, dldc: np.ndarray
) -> PairAccumulator:
    acc = PairAccumulator()
    geom = tile_geometry(ctx, tile, cfg.depth_mode)
    n_p, n_k = geom.alpha.shape
    if n_k == 0:
        return acc

    uid_ext = np.append(geom.uid, -1)
    for s0, s1 in sample_batches(cfg.spp, n_p, n_k):
        winner, _ = tile_samples(geom, cfg, s0, s1, replay.pass_seed)
        if not np.array_equal(uid_ext[winner], replay.gaussian_id[s0:s1, geom.iy, geom.ix]):
            raise ReplayMismatchError(f"Tile {tile}: replay diverged from the recorded pass")

    background = np.asarray(cfg.background, dtype=np.float64)
    for p in range(n_p):
        x, y = int(geom.ix[p]), int(geom.iy[p])
        g = dldc[y, x]
        if not np.any(g):
            continue
        covering = CoveringSplats(geom.idx, geom.uid, geom.alpha[p], geom.depth[p])
        backprop_pixel(replay.entry(x, y), covering, g, background, acc, (x, y), 1.0 / cfg.spp)
    return acc


def replay_weights(ctx: FrameContext, cfg: RenderConfig, replay: ReplayRecord, dldc: np.ndarray) -> PairWeights:
    """Pass 3: re-traverse with the recorded seed and collect pair weights in tile order."""
    acc = PairAccumulator()
    for tile_acc in map_tiles(lambda t: _replay_tile(ctx, cfg, t, replay, dldc), ctx.bins, cfg.threads):
        acc.extend(tile_acc)
    return acc.weights()


def _sorted_tile_weights(ctx: FrameContext, cfg: RenderConfig, tile: int, dldc: np.ndarray) -> PairAccumulator:
    acc = PairAccumulator()
    st = sorted_tile(ctx, cfg, tile)
    n_p, n_k = st.alpha.shape
    if n_k == 0:
        return acc
    g = dldc[st.geom.iy, st.geom.ix]  # (P, 3)
    gc = np.einsum("pkc,pc->pk", st.colors, g)
    live = st.included & (st.alpha > 0.0)
    visible = st.alpha * st.transmittance * live
    contrib = visible * gc
    behind = contrib.sum(axis=1, keepdims=True) - np.cumsum(contrib, axis=1)
    background = (g @ np.asarray(cfg.background)) * st.final_transmittance
    w_alpha_sorted = live * (gc * st.transmittance - (behind + background[:, None]) / (1.0 - st.alpha))
    w_color_sorted = visible[..., None] * g[:, None, :]

    w_alpha = np.empty_like(w_alpha_sorted)
    np.put_along_axis(w_alpha, st.order, w_alpha_sorted, axis=1)
    w_color = np.empty_like(w_color_sorted)
    np.put_along_axis(w_color, st.order[..., None], w_color_sorted, axis=1)
    for p in range(n_p):
        acc.add((int(st.geom.ix[p]), int(st.geom.iy[p])), st.geom.idx, w_alpha[p], w_color[p])
    return acc


def sorted_weights(ctx: FrameContext, cfg: RenderConfig, dldc: np.ndarray) -> PairWeights:
    """
    Exact expected weights of the sorted renderer:
    ∂C/∂α_k = c_k·T_k − (Σ_{i behind k} c_i·α_i·T_i + background·T_final)/(1 − α_k),
    ∂C/∂c_k = α_k·T_k.
    """
    acc = PairAccumulator()
    for tile_acc in map_tiles(lambda t: _sorted_tile_weights(ctx, cfg, t, dldc), ctx.bins, cfg.threads):
        acc.extend(tile_acc)
    return acc.weights()


def pair_gradients(scene: Scene, cam: Camera, splats: ProjectedSplats, pairs: PairWeights) -> GradientBuffer:
    """Differentiate Σ w_α·α(pixel) + Σ w_c·colour through the projection."""
    grads = GradientBuffer.zeros(scene)
    if len(pairs) == 0:
        return grads

    leaves = scene_tensors(scene, requires_grad=True)
    rows = torch.as_tensor(splats.index)
    proj = project_tensors(**{k: v[rows] for k, v in leaves.items()}, sh_degree=scene.sh_degree, cam=cam)

    splat = torch.as_tensor(pairs.splat)
    px = torch.as_tensor(pairs.px + 0.5, dtype=torch.float64)
    py = torch.as_tensor(pairs.py + 0.5, dtype=torch.float64)
    alpha = gaussian_alpha(proj["mean2d"][splat], proj["inv_cov2d"][splat], proj["opacity"][splat], px, py)

    w_color = torch.zeros((len(splats), 3), dtype=torch.float64)
    w_color.index_add_(0, splat, torch.as_tensor(pairs.w_color))
    surrogate = (torch.as_tensor(pairs.w_alpha) * alpha).sum() + (w_color * proj["color"]).sum()
    surrogate.backward()

    for name in PARAM_NAMES:
        if leaves[name].grad is not None:
            setattr(grads, _GRAD_FIELDS[name], leaves[name].grad.numpy().copy())
    return grads


def per_pair_position_gradients(scene: Scene, cam: Camera, splats: ProjectedSplats, pairs: PairWeights) -> np.ndarray:
    """∂(w_α·α + w_c·c)/∂position for every pair separately, shape (M, 3)."""
    if len(pairs) == 0:
        return np.zeros((0, 3))
    rows = splats.index[pairs.splat]
    params = {k: torch.tensor(v[rows], dtype=torch.float64) for k, v in scene.params().items()}
    params["positions"].requires_grad_(True)
    proj = project_tensors(**params, sh_degree=scene.sh_degree, cam=cam)
    px = torch.as_tensor(pairs.px + 0.5, dtype=torch.float64)
    py = torch.as_tensor(pairs.py + 0.5, dtype=torch.float64)
    alpha = gaussian_alpha(proj["mean2d"], proj["inv_cov2d"], proj["opacity"], px, py)
    surrogate = (torch.as_tensor(pairs.w_alpha) * alpha).sum() + (torch.as_tensor(pairs.w_color) * proj["color"]).sum()
    surrogate.backward()
    return params["positions"].grad.numpy().copy()


def _require_differentiable(cfg: RenderConfig) -> None:
    if cfg.depth_mode is DepthMode.FREE_FLIGHT:
        raise UnsupportedDepthModeError("Gradients are only available for MEAN and PLANE depth modes")


def path_replay_backward(
    scene: Scene,
    cam: Camera,
    cfg: RenderConfig,
    target: np.ndarray,
    loss: LossKind = LossKind.L1,
    decorrelate: bool = True,
    ctx: Optional[FrameContext] = None,
) -> GradientBuffer:
    """
    Three passes sharing one projection:
      1. render with an independent seed and evaluate ∂L/∂C,
      2. render with cfg.pass_seed and record every selection,
      3. replay pass 2 and accumulate the detached per-sample gradients.
    With decorrelate=False pass 1 reuses cfg.pass_seed (the biased variant).
    """
    _require_differentiable(cfg)
    ctx = ctx or prepare_frame(scene, cam, cfg.tile_size)

    first_seed = decorrelated_seed(cfg.pass_seed) if decorrelate else cfg.pass_seed
    first = stochastic_pass(scene, cam, cfg.with_seed(first_seed), ctx=ctx)
    dldc = loss_grad(first.image, target, loss)

    second = stochastic_pass(scene, cam, cfg, keep_replay=True, ctx=ctx)
    pairs = replay_weights(ctx, cfg, second.replay, dldc)

    grads = pair_gradients(scene, cam, ctx.splats, pairs)
    grads.loss = loss_value(first.image, target, loss)
    logger.debug(f"Path replay: {len(pairs)} weighted pairs, loss {grads.loss:.6f}")
    return grads


def sorted_backward(
    scene: Scene,
    cam: Camera,
    cfg: RenderConfig,
    target: np.ndarray,
    loss: LossKind = LossKind.L2,
    ctx: Optional[FrameContext] = None,
) -> GradientBuffer:
    """Analytic gradient of the sorted renderer's loss."""
    _require_differentiable(cfg)
    ctx = ctx or prepare_frame(scene, cam, cfg.tile_size)
    rendered = render_sorted_ab(scene, cam, cfg, ctx=ctx)
    pairs = sorted_weights(ctx, cfg, loss_grad(rendered, target, loss))
    grads = pair_gradients(scene, cam, ctx.splats, pairs)
    grads.loss = loss_value(rendered, target, loss)
    return grads


def finite_difference_gradient(
    scene: Scene,
    cam: Camera,
    cfg: RenderConfig,
    target: np.ndarray,
    loss: LossKind,
    name: str,
    row: int,
    index: tuple = (),
    h: float = 1e-3,
) -> float:
    """Central difference of the sorted renderer's loss in one parameter entry."""
    plus = loss_value(render_sorted_ab(scene.with_offset(name, row, index, h), cam, cfg), target, loss)
    minus = loss_value(render_sorted_ab(scene.with_offset(name, row, index, -h), cam, cfg), target, loss)
    return (plus - minus) / (2.0 * h)


def gradient_image(
    scene: Scene,
    cam: Camera,
    cfg: RenderConfig,
    axis: int = 0,
    estimator: str = "stochastic",
    target: Optional[np.ndarray] = None,
    loss: LossKind = LossKind.L2,
) -> np.ndarray:
    """
    (H, W) map of Σ_gaussians ∂L_pixel/∂position[axis], each pixel
    back-propagated on its own.

    With a target, ∂L/∂C comes from `loss_grad` on a render of the same
    estimator (a decorrelated pass for the stochastic one), so the map sums to
    the loss gradient. Without one ∂L/∂C = (1, 1, 1) and the map shows how the
    colour sum of every pixel responds to the shift.
    """
    _require_differentiable(cfg)
    image = np.zeros((cam.height, cam.width))
    if len(scene) == 0:
        return image
    ctx = prepare_frame(scene, cam, cfg.tile_size)

    def seed(render: Callable[[], np.ndarray]) -> np.ndarray:
        if target is None:
            return np.ones((cam.height, cam.width, 3))
        return loss_grad(render(), target, loss)

    if estimator == "stochastic":
        independent = cfg.with_seed(decorrelated_seed(cfg.pass_seed))
        dldc = seed(lambda: stochastic_pass(scene, cam, independent, ctx=ctx).image)
        record = stochastic_pass(scene, cam, cfg, keep_replay=True, ctx=ctx).replay
        pairs = replay_weights(ctx, cfg, record, dldc)
    elif estimator == "sorted":
        pairs = sorted_weights(ctx, cfg, seed(lambda: render_sorted_ab(scene, cam, cfg)))
    else:
        raise ValueError(f"Unknown gradient estimator: {estimator}")
    per_pair = per_pair_position_gradients(scene, cam, ctx.splats, pairs)
    np.add.at(image, (pairs.py, pairs.px), per_pair[:, axis])
    return image
