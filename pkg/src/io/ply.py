"""
Binary little-endian splat PLY files in the layout most 3DGS tools exchange:

    x y z nx ny nz f_dc_0..2 f_rest_0..(3·(K−1)−1) opacity scale_0..2 rot_0..3

Values are stored raw (pre-activation) and are never modified on load.
f_rest is channel-major: every higher-band coefficient of R, then G, then B.
"""

import logging
import os
import re
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
from plyfile import PlyData, PlyElement

from src.scene.gaussian import Scene
from src.scene.sh import MAX_SH_DEGREE, NUM_SH_COEFFS, num_coeffs
from src.utils.decorator import log_method_io

logger = logging.getLogger(__name__)

_HEADER_END = b"end_header\n"
_MAX_HEADER_BYTES = 1 << 16
_TYPE_SIZES = {
    "char": 1, "int8": 1, "uchar": 1, "uint8": 1,
    "short": 2, "int16": 2, "ushort": 2, "uint16": 2,
    "int": 4, "int32": 4, "uint": 4, "uint32": 4,
    "float": 4, "float32": 4, "double": 8, "float64": 8,
}
_REQUIRED = ("x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
             "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3")
_F_REST = re.compile(r"^f_rest_(\d+)$")


class SplatIOError(Exception):
    """Base class for scene file errors; `offset` is the byte position of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})" if offset is not None else message)


class PlyFormatError(SplatIOError):
    """The header is malformed."""
    pass


class UnsupportedEncodingError(SplatIOError):
    """The file is ascii or big-endian."""
    pass


class TruncatedPayloadError(SplatIOError):
    """The payload is shorter than the header announces."""
    pass


class MissingPropertyError(SplatIOError):
    """A required vertex property is absent."""
    pass


def property_names(sh_degree: int) -> List[str]:
    rest = 3 * (num_coeffs(sh_degree) - 1)
    return (
        ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        + [f"f_rest_{i}" for i in range(rest)]
        + ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    )


def _validate_header(path: Path) -> Tuple[int, Dict[str, str]]:
    """Check the header by hand so errors can name a byte offset; returns (vertex count, properties)."""
    size = os.path.getsize(path)
    with open(path, "rb") as f:
        head = f.read(_MAX_HEADER_BYTES)
    if not head.startswith(b"ply\n"):
        raise PlyFormatError("File does not start with the 'ply' magic line", 0)
    end = head.find(_HEADER_END)
    if end < 0:
        raise PlyFormatError("Header has no end_header line", min(len(head), size))
    header_len = end + len(_HEADER_END)

    offset = 0
    vertex_count = None
    current = None
    properties: Dict[str, str] = {}
    row_sizes: Dict[str, int] = {}
    counts: Dict[str, int] = {}
    element_order: List[str] = []
    for raw in head[:end].split(b"\n"):
        line = raw.decode("ascii", errors="replace").strip()
        words = line.split()
        if not words or words[0] in ("ply", "comment", "obj_info"):
            pass
        elif words[0] == "format":
            if len(words) != 3:
                raise PlyFormatError(f"Malformed format line: {line!r}", offset)
            if words[1] != "binary_little_endian":
                raise UnsupportedEncodingError(f"Unsupported PLY encoding {words[1]!r}", offset)
        elif words[0] == "element":
            if len(words) != 3 or not words[2].isdigit():
                raise PlyFormatError(f"Malformed element line: {line!r}", offset)
            current = words[1]
            element_order.append(current)
            counts[current] = int(words[2])
            row_sizes[current] = 0
            if current == "vertex":
                vertex_count = int(words[2])
        elif words[0] == "property":
            if current is None:
                raise PlyFormatError("Property declared before any element", offset)
            if len(words) == 3 and words[1] in _TYPE_SIZES:
                row_sizes[current] += _TYPE_SIZES[words[1]]
                if current == "vertex":
                    properties[words[2]] = words[1]
            elif len(words) == 5 and words[1] == "list":
                row_sizes[current] = -1
            else:
                raise PlyFormatError(f"Malformed property line: {line!r}", offset)
        else:
            raise PlyFormatError(f"Unknown header keyword {words[0]!r}", offset)
        offset += len(raw) + 1

    if vertex_count is None:
        raise PlyFormatError("No vertex element", header_len)
    missing = [name for name in _REQUIRED if name not in properties]
    if missing:
        raise MissingPropertyError(f"Missing vertex properties {missing}", header_len)

    expected = header_len
    for name in element_order:
        if row_sizes[name] < 0:
            break
        expected += counts[name] * row_sizes[name]
    else:
        if size < expected:
            raise TruncatedPayloadError(f"Payload needs {expected} bytes, file has {size}", size)
    return vertex_count, properties


def _sh_degree_from(properties: Dict[str, str]) -> Tuple[int, int]:
    rest = sorted(int(m.group(1)) for m in map(_F_REST.match, properties) if m)
    if rest != list(range(len(rest))) or len(rest) % 3:
        raise PlyFormatError(f"f_rest properties are not a contiguous multiple of 3 (found {len(rest)})")
    per_channel = len(rest) // 3 + 1
    degree = int(round(np.sqrt(per_channel))) - 1
    if num_coeffs(degree) != per_channel or degree > MAX_SH_DEGREE:
        raise PlyFormatError(f"{len(rest)} f_rest values do not match any SH degree")
    return degree, per_channel


@log_method_io
def load_ply(path: str | Path) -> Scene:
    path = Path(path)
    count, properties = _validate_header(path)
    degree, per_channel = _sh_degree_from(properties)

    vertex = PlyData.read(str(path))["vertex"]

    def column(name: str) -> np.ndarray:
        return np.asarray(vertex[name], dtype=np.float64)

    def stack(names) -> np.ndarray:
        return np.stack([column(n) for n in names], axis=1) if count else np.zeros((0, len(names)))

    sh = np.zeros((count, NUM_SH_COEFFS, 3))
    sh[:, 0, :] = stack([f"f_dc_{i}" for i in range(3)])
    if per_channel > 1:
        rest = stack([f"f_rest_{i}" for i in range(3 * (per_channel - 1))])
        sh[:, 1:per_channel, :] = rest.reshape(count, 3, per_channel - 1).transpose(0, 2, 1)

    scene = Scene(
        positions=stack(["x", "y", "z"]),
        log_scales=stack(["scale_0", "scale_1", "scale_2"]),
        rotations=stack(["rot_0", "rot_1", "rot_2", "rot_3"]),
        opacity_logits=column("opacity") if count else np.zeros((0,)),
        sh_coeffs=sh,
        ids=np.arange(count, dtype=np.int64),
        sh_degree=degree,
        normals=stack(["nx", "ny", "nz"]) if all(n in properties for n in ("nx", "ny", "nz")) else None,
    )
    logger.info(f"Loaded {count} Gaussians (SH degree {degree}) from {path}")
    return scene


@log_method_io
def save_ply(scene: Scene, path: str | Path) -> None:
    """
    Write the scene in file order of its rows; parameters are cast to float32.
    Normals are written back when the scene carries them, zeros otherwise.
    """
    path = Path(path)
    per_channel = num_coeffs(scene.sh_degree)
    n = len(scene)
    rest = scene.sh_coeffs[:, 1:per_channel, :].transpose(0, 2, 1).reshape(n, 3 * (per_channel - 1))
    columns = np.concatenate(
        [
            scene.positions,
            scene.normals if scene.normals is not None else np.zeros((n, 3)),
            scene.sh_coeffs[:, 0, :],
            rest,
            scene.opacity_logits[:, None],
            scene.log_scales,
            scene.rotations,
        ],
        axis=1,
    ).astype(np.float32)

    vertexes = np.empty(n, dtype=[(name, "f4") for name in property_names(scene.sh_degree)])
    for i, name in enumerate(vertexes.dtype.names):
        vertexes[name] = columns[:, i]
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    PlyData([PlyElement.describe(vertexes, "vertex")], byte_order="<").write(str(path))
    logger.info(f"Saved {n} Gaussians to {path}")
