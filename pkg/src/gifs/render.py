"""Binary PGM (P5) rasters of 2-D point clouds."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import UsageError
from .geometry import CompactSetApprox

WHITE = 255
BLACK = 0


def pixel_indices(points: np.ndarray, lo, hi, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Column and row of every point inside the window.

    Column = floor((x - lo) / (hi - lo) * width), clamped to width - 1 so
    the upper edge stays inside; rows count from the top, so y grows upwards.
    Points outside the closed window are dropped.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    inside = np.all((points >= lo) & (points <= hi), axis=1)
    p = points[inside]
    size = np.array([width, height])
    idx = np.floor((p - lo) / (hi - lo) * size).astype(np.int64)
    idx = np.minimum(idx, size - 1)
    return idx[:, 0], height - 1 - idx[:, 1]


def rasterize(cloud: CompactSetApprox, lo, hi, width: int, height: int) -> np.ndarray:
    if cloud.dim != 2:
        raise UsageError(f"rendering needs a 2-D cloud, got dimension {cloud.dim}")
    if width < 1 or height < 1:
        raise UsageError("raster size must be positive")
    if any(b <= a for a, b in zip(lo, hi)):
        raise UsageError("render window must have positive extent")
    img = np.full((height, width), WHITE, dtype=np.uint8)
    cols, rows = pixel_indices(cloud.points, lo, hi, width, height)
    img[rows, cols] = BLACK
    return img


def encode_pgm(img: np.ndarray, lo, hi) -> bytes:
    h, w = img.shape
    box = " ".join(repr(float(v)) for v in lo) + " " + " ".join(repr(float(v)) for v in hi)
    header = f"P5\n# window {box}\n{w} {h}\n255\n".encode("ascii")
    return header + img.astype(np.uint8).tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    """Inverse of :func:`encode_pgm` (comment lines skipped)."""
    fields = []
    pos = 0
    while len(fields) < 4:
        end = data.index(b"\n", pos)
        line = data[pos:end]
        pos = end + 1
        if line.startswith(b"#"):
            continue
        fields.extend(line.split())
    if fields[0] != b"P5":
        raise UsageError("not a binary PGM")
    w, h = int(fields[1]), int(fields[2])
    return np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w)


def write_pgm(path, cloud: CompactSetApprox, lo, hi, width: int, height: int) -> Path:
    path = Path(path)
    path.write_bytes(encode_pgm(rasterize(cloud, lo, hi, width, height), lo, hi))
    return path
