import logging
import time
from typing import Callable, List, Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.config.render_config import BenchConfig, RenderConfig, RendererKind
from src.raster.forward import prepare_frame, render_sorted_ab, render_stochastic
from src.scene.camera import Camera
from src.scene.gaussian import Scene
from src.utils.decorator import log_method_io

logger = logging.getLogger(__name__)

BENCH_COLUMNS = ["renderer", "spp", "width", "height", "tile_size", "pairs", "median_ms", "min_ms", "runs"]


def time_call(fn: Callable[[], object], runs: int, warmup: int) -> List[float]:
    """Wall-clock seconds of `runs` calls after `warmup` discarded calls."""
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(runs):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return times


def _renderer(kind: RendererKind) -> Callable[[Scene, Camera, RenderConfig], np.ndarray]:
    return render_stochastic if kind is RendererKind.STOCHASTIC else render_sorted_ab


@log_method_io
def run_bench(scene: Scene, cam: Camera, cfg: RenderConfig, bench: BenchConfig, show_progress: bool = False) -> pd.DataFrame:
    """
    Frame time per (renderer, spp, resolution, tile size). The sorted
    renderer has no sample count; it is timed once per resolution and tile
    size with `spp` left empty.
    """
    cells = []
    for kind in bench.renderers:
        for scale in bench.scales:
            for tile_size in bench.tile_sizes:
                spp_values = bench.spp_list if kind is RendererKind.STOCHASTIC else [None]
                for spp in spp_values:
                    cells.append((kind, scale, tile_size, spp))

    rows = []
    for kind, scale, tile_size, spp in tqdm(cells, desc="bench", disable=not show_progress):
        width = max(1, int(round(cam.width * scale)))
        height = max(1, int(round(cam.height * scale)))
        view = cam.resized(width, height)
        cell_cfg = cfg.model_copy(update={"tile_size": tile_size, "spp": spp or 1})
        render = _renderer(kind)
        times = time_call(lambda: render(scene, view, cell_cfg), bench.runs, bench.warmup)
        rows.append({
            "renderer": kind.value,
            "spp": spp,
            "width": width,
            "height": height,
            "tile_size": tile_size,
            "pairs": prepare_frame(scene, view, tile_size).bins.total_pairs(),
            "median_ms": 1e3 * float(np.median(times)),
            "min_ms": 1e3 * float(np.min(times)),
            "runs": bench.runs,
        })
        logger.debug(f"Bench {kind.value} spp={spp} {width}x{height} tile={tile_size}: {rows[-1]['median_ms']:.2f} ms")
    return pd.DataFrame(rows, columns=BENCH_COLUMNS)


def spp_ratio(table: pd.DataFrame, low: int = 1, high: int = 8) -> Optional[float]:
    """Median stochastic frame time at `high` SPP over `low` SPP, at full resolution and the first tile size."""
    stochastic = table[table["renderer"] == RendererKind.STOCHASTIC.value]
    if stochastic.empty:
        return None
    full = stochastic[stochastic["width"] == stochastic["width"].max()]
    full = full[full["tile_size"] == full["tile_size"].iloc[0]]
    t_low = full.loc[full["spp"] == low, "median_ms"]
    t_high = full.loc[full["spp"] == high, "median_ms"]
    if t_low.empty or t_high.empty:
        return None
    return float(t_high.iloc[0] / t_low.iloc[0])


def stochastic_vs_sorted(table: pd.DataFrame) -> Optional[float]:
    """Stochastic 1-SPP over sorted frame time at full resolution and the first tile size."""
    full = table[table["width"] == table["width"].max()]
    if full.empty:
        return None
    full = full[full["tile_size"] == full["tile_size"].iloc[0]]
    t_stochastic = full.loc[(full["renderer"] == RendererKind.STOCHASTIC.value) & (full["spp"] == 1), "median_ms"]
    t_sorted = full.loc[full["renderer"] == RendererKind.SORTED.value, "median_ms"]
    if t_stochastic.empty or t_sorted.empty:
        return None
    return float(t_stochastic.iloc[0] / t_sorted.iloc[0])
