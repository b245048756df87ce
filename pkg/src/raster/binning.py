"""Assignment of projected splats to screen tiles by oriented-box overlap."""

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterator, Tuple

import numpy as np

if TYPE_CHECKING:
    from src.raster.projection import ProjectedSplats
    from src.scene.camera import Camera

logger = logging.getLogger(__name__)


def _interval(points: np.ndarray, axis: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    proj = np.einsum("kci,ki->kc", points, axis)
    return proj.min(axis=1), proj.max(axis=1)


def obb_overlaps_rect(corners: np.ndarray, rect_min: np.ndarray, rect_max: np.ndarray) -> np.ndarray:
    """
    Separating-axis test of oriented boxes (K, 4, 2) against axis-aligned
    rectangles given by (K, 2) corners. Boxes that only touch do not overlap.
    """
    corners = np.asarray(corners, dtype=np.float64)
    k = corners.shape[0]
    rect_min = np.broadcast_to(rect_min, (k, 2))
    rect_max = np.broadcast_to(rect_max, (k, 2))
    rect = np.stack(
        [
            rect_min,
            np.stack([rect_max[:, 0], rect_min[:, 1]], axis=1),
            rect_max,
            np.stack([rect_min[:, 0], rect_max[:, 1]], axis=1),
        ],
        axis=1,
    )
    axes = [
        np.broadcast_to(np.array([1.0, 0.0]), (k, 2)),
        np.broadcast_to(np.array([0.0, 1.0]), (k, 2)),
        corners[:, 1] - corners[:, 0],
        corners[:, 3] - corners[:, 0],
    ]
    overlap = np.ones(k, dtype=bool)
    for axis in axes:
        lo_a, hi_a = _interval(corners, axis)
        lo_b, hi_b = _interval(rect, axis)
        overlap &= (hi_a > lo_b) & (hi_b > lo_a)
    return overlap


@dataclass(frozen=True)
class TileBins:
    """Per-tile splat index lists; each list is sorted by gaussian id."""

    tile_size: int
    width: int
    height: int
    tiles_x: int
    tiles_y: int
    lists: Tuple[np.ndarray, ...]

    def __len__(self) -> int:
        return len(self.lists)

    def __iter__(self) -> Iterator[int]:
        return iter(range(len(self.lists)))

    def tile_rect(self, tile: int) -> Tuple[int, int, int, int]:
        ty, tx = divmod(tile, self.tiles_x)
        x0 = tx * self.tile_size
        y0 = ty * self.tile_size
        return x0, y0, min(x0 + self.tile_size, self.width), min(y0 + self.tile_size, self.height)

    def tile_pixels(self, tile: int) -> Tuple[np.ndarray, np.ndarray]:
        """Integer pixel coordinates (ix, iy) of a tile, row-major."""
        x0, y0, x1, y1 = self.tile_rect(tile)
        iy, ix = np.mgrid[y0:y1, x0:x1]
        return ix.reshape(-1), iy.reshape(-1)

    def total_pairs(self) -> int:
        return int(sum(len(entry) for entry in self.lists))


def cull_and_bin(splats: "ProjectedSplats", cam: "Camera", tile_size: int) -> TileBins:
    if tile_size < 1:
        raise ValueError(f"tile_size must be positive, got {tile_size}")
    tiles_x = -(-cam.width // tile_size)
    tiles_y = -(-cam.height // tile_size)
    n_tiles = tiles_x * tiles_y
    if len(splats) == 0:
        empty = tuple(np.zeros(0, dtype=np.int64) for _ in range(n_tiles))
        return TileBins(tile_size, cam.width, cam.height, tiles_x, tiles_y, empty)

    corners = splats.bbox
    finite = np.isfinite(corners).all(axis=(1, 2))
    grid_max = np.array([tiles_x - 1, tiles_y - 1], dtype=np.float64)
    # clamp to the grid before the integer cast; boxes with NaN or inf corners are dropped
    with np.errstate(invalid="ignore"):
        lo = np.clip(np.floor(corners.min(axis=1) / tile_size), 0.0, grid_max)
        hi = np.clip(np.floor(corners.max(axis=1) / tile_size), 0.0, grid_max)
    lo = np.where(finite[:, None], lo, 0.0).astype(np.int64)
    hi = np.where(finite[:, None], hi, 0.0).astype(np.int64)
    counts_x = hi[:, 0] - lo[:, 0] + 1
    counts_y = hi[:, 1] - lo[:, 1] + 1
    counts = np.where(finite, counts_x * counts_y, 0)

    # Enumerate every candidate (splat, tile) inside each splat's tile range.
    splat_idx = np.repeat(np.arange(len(splats)), counts)
    local = np.arange(splat_idx.size) - np.repeat(np.cumsum(counts) - counts, counts)
    tx = lo[splat_idx, 0] + local % counts_x[splat_idx]
    ty = lo[splat_idx, 1] + local // counts_x[splat_idx]

    rect_min = np.stack([tx * tile_size, ty * tile_size], axis=1).astype(np.float64)
    rect_max = np.stack(
        [np.minimum((tx + 1) * tile_size, cam.width), np.minimum((ty + 1) * tile_size, cam.height)], axis=1
    ).astype(np.float64)
    keep = obb_overlaps_rect(corners[splat_idx], rect_min, rect_max)

    splat_idx, tile_idx = splat_idx[keep], (ty * tiles_x + tx)[keep]
    order = np.lexsort((splats.ids[splat_idx], tile_idx))
    splat_idx, tile_idx = splat_idx[order], tile_idx[order]
    bounds = np.searchsorted(tile_idx, np.arange(n_tiles + 1))
    lists = tuple(splat_idx[bounds[t]:bounds[t + 1]] for t in range(n_tiles))

    logger.debug(f"Binned {len(splats)} splats into {n_tiles} tiles ({splat_idx.size} pairs)")
    return TileBins(tile_size, cam.width, cam.height, tiles_x, tiles_y, lists)
