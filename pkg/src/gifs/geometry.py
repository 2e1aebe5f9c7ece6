"""Points, point tuples, finite compact-set approximations and their metrics.

A compact set is represented by a finite point cloud together with a
declared resolution ``h``: the set it stands for lies within Hausdorff
distance ``h`` of the cloud.  Every distance below is Euclidean; tuples of
points use the max metric over their components.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .errors import UsageError

# brute-force kernels work on blocks of at most this many pairs
_BLOCK = 1 << 22
# above this many pairs the tree-backed routes take over in "auto" mode
_TREE_THRESHOLD = 1 << 21


def as_point(p, dim: int | None = None) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(p, dtype=float))
    if arr.ndim != 1 or arr.size == 0:
        raise UsageError(f"a point must be a non-empty 1-d coordinate list, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise UsageError("point coordinates must be finite")
    if dim is not None and arr.size != dim:
        raise UsageError(f"expected a point in R^{dim}, got R^{arr.size}")
    return arr


def as_tuple(x, order: int | None = None, dim: int | None = None) -> np.ndarray:
    """Coerce ``x`` to an ``(m, d)`` array holding a tuple of ``m`` points."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        # a tuple of scalars is a tuple of points in R^1
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise UsageError(f"a point tuple must have shape (m, d), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise UsageError("point coordinates must be finite")
    if order is not None and arr.shape[0] != order:
        raise UsageError(f"expected a tuple of {order} points, got {arr.shape[0]}")
    if dim is not None and arr.shape[1] != dim:
        raise UsageError(f"expected points in R^{dim}, got R^{arr.shape[1]}")
    return arr


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Coordinate-by-coordinate accumulation keeps the rounding identical no
    # matter how the operands were gathered (block vs. candidate lists).
    diff = a[..., 0] - b[..., 0]
    acc = diff * diff
    for k in range(1, a.shape[-1]):
        diff = a[..., k] - b[..., k]
        acc = acc + diff * diff
    return acc


def euclid(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.sqrt(_sqdist(a, b)))


def max_dist(a, b) -> float:
    """The max metric on ``(R^d)^m``: largest Euclidean gap between components."""
    a = as_tuple(a)
    b = as_tuple(b)
    if a.shape != b.shape:
        raise UsageError(f"tuple shapes differ: {a.shape} vs {b.shape}")
    return float(np.sqrt(_sqdist(a, b)).max())


@dataclass(frozen=True, eq=False)
class CompactSetApprox:
    """Finite point cloud standing in for a nonempty compact set.

    ``resolution`` bounds the Hausdorff distance between the cloud and the
    set it represents.
    """

    points: np.ndarray
    resolution: float = 0.0

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
            raise UsageError(f"a compact set needs a nonempty (N, d) point array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise UsageError("point coordinates must be finite")
        res = float(self.resolution)
        if not (res >= 0.0) or math.isinf(res):
            raise UsageError(f"resolution must be a finite nonnegative number, got {self.resolution}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "resolution", res)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def with_resolution(self, resolution: float) -> "CompactSetApprox":
        return CompactSetApprox(self.points, resolution)

    def unique(self) -> "CompactSetApprox":
        return CompactSetApprox(np.unique(self.points, axis=0), self.resolution)

    def decimate(self, cell: float) -> "CompactSetApprox":
        pts, err = snap_to_grid(self.points, cell)
        return CompactSetApprox(pts, self.resolution + err)

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.points.min(axis=0), self.points.max(axis=0)


def snap_to_grid(points: np.ndarray, cell: float) -> tuple[np.ndarray, float]:
    """Replace every point by the centre of its grid cell and drop repeats.

    Returns the sorted unique centres and the largest distance any point
    may have moved (half the cell diagonal, padded for rounding).
    """
    if not cell > 0:
        raise UsageError(f"cell size must be positive, got {cell}")
    idx = np.floor(points / cell).astype(np.int64)
    if idx.shape[1] == 1:
        idx = np.unique(idx[:, 0])[:, None]
    else:
        idx = np.unique(idx, axis=0)
    centers = (idx.astype(float) + 0.5) * cell
    err = 0.5 * cell * math.sqrt(points.shape[1]) * (1.0 + 1e-9)
    return centers, err


def union(sets: Iterable[CompactSetApprox]) -> CompactSetApprox:
    sets = list(sets)
    if not sets:
        raise UsageError("union of an empty family")
    _same_dim(*sets)
    return CompactSetApprox(np.concatenate([s.points for s in sets]), max(s.resolution for s in sets))


def box_grid(lo, hi, spacing: float) -> CompactSetApprox:
    """Uniform grid over an axis-aligned box, endpoints included.

    The declared resolution is half the grid-cell diagonal, i.e. how far
    any point of the box can be from the nearest grid node.
    """
    lo = as_point(lo)
    hi = as_point(hi, lo.size)
    if np.any(hi < lo):
        raise UsageError("box upper corner lies below the lower corner")
    if not spacing > 0:
        raise UsageError("grid spacing must be positive")
    axes = []
    steps = []
    for a, b in zip(lo, hi):
        count = max(int(math.ceil((b - a) / spacing - 1e-9)), 0) + 1
        axes.append(np.linspace(a, b, count))
        steps.append((b - a) / (count - 1) if count > 1 else 0.0)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in mesh], axis=1)
    res = 0.5 * math.sqrt(sum(s * s for s in steps))
    return CompactSetApprox(pts, res)


def interval_grid(lo: float, hi: float, spacing: float) -> CompactSetApprox:
    return box_grid([lo], [hi], spacing)


def singleton(point) -> CompactSetApprox:
    return CompactSetApprox(as_point(point)[None, :], 0.0)


def _same_dim(*sets: CompactSetApprox) -> int:
    dims = {s.dim for s in sets}
    if len(dims) != 1:
        raise UsageError(f"point clouds live in different dimensions: {sorted(dims)}")
    return dims.pop()


def _blocks(n_rows: int, n_cols: int):
    step = max(1, _BLOCK // max(n_rows, 1))
    for start in range(0, n_cols, step):
        yield start, min(start + step, n_cols)


def _nearest_brute(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """For each row of ``dst``, the distance to the nearest row of ``src``."""
    out = np.empty(dst.shape[0])
    for a, b in _blocks(src.shape[0], dst.shape[0]):
        sq = _sqdist(dst[a:b, None, :], src[None, :, :])
        out[a:b] = np.sqrt(sq.min(axis=1))
    return out


def _nearest_tree(src: np.ndarray, dst: np.ndarray, tree: cKDTree | None = None) -> np.ndarray:
    # The tree narrows each query to a handful of candidates; the reported
    # distance is then recomputed with the brute-force kernel so both routes
    # agree to the last bit.
    tree = tree if tree is not None else cKDTree(src)
    approx, _ = tree.query(dst, k=1)
    radius = approx * (1.0 + 1e-9) + 1e-300
    cand = tree.query_ball_point(dst, radius, return_sorted=False)
    lengths = np.fromiter((len(c) for c in cand), dtype=np.int64, count=len(cand))
    flat = np.concatenate([np.asarray(c, dtype=np.int64) for c in cand])
    rows = np.repeat(np.arange(dst.shape[0]), lengths)
    d = np.sqrt(_sqdist(dst[rows], src[flat]))
    starts = np.concatenate(([0], np.cumsum(lengths)[:-1]))
    return np.minimum.reduceat(d, starts)


def _pick_method(method: str, n: int, m: int) -> str:
    if method == "auto":
        return "tree" if n * m > _TREE_THRESHOLD else "brute"
    if method not in ("brute", "tree"):
        raise UsageError(f"unknown method {method!r}")
    return method


def directed_hausdorff(src: CompactSetApprox, dst: CompactSetApprox, method: str = "auto") -> float:
    """sup over points of ``dst`` of the distance to ``src``."""
    _same_dim(src, dst)
    how = _pick_method(method, len(src), len(dst))
    near = _nearest_brute if how == "brute" else _nearest_tree
    return float(near(src.points, dst.points).max())


def hausdorff(a: CompactSetApprox, b: CompactSetApprox, method: str = "auto") -> float:
    """Hausdorff distance between two point clouds.

    ``method="brute"`` is the plain double loop (run in blocks);
    ``"tree"`` uses a k-d tree to shortlist candidates and returns the
    bit-identical value.  ``"auto"`` switches on cloud size.
    """
    if len(a) == 0 or len(b) == 0:
        raise UsageError("Hausdorff distance of an empty cloud")
    return max(directed_hausdorff(a, b, method), directed_hausdorff(b, a, method))


def closest_pair(a: CompactSetApprox, b: CompactSetApprox, method: str = "auto"):
    """Return ``(distance, point_of_a, point_of_b)`` for the closest pair."""
    _same_dim(a, b)
    how = _pick_method(method, len(a), len(b))
    if how == "brute":
        best = (math.inf, 0, 0)
        for lo, hi in _blocks(len(a), len(b)):
            sq = _sqdist(b.points[lo:hi, None, :], a.points[None, :, :])
            j, i = np.unravel_index(np.argmin(sq), sq.shape)
            val = float(np.sqrt(sq[j, i]))
            if val < best[0]:
                best = (val, int(i), int(lo + j))
    else:
        near = _nearest_tree(a.points, b.points)
        j = int(np.argmin(near))
        d = np.sqrt(_sqdist(b.points[j][None, :], a.points))
        i = int(np.argmin(d))
        best = (float(d[i]), i, j)
    dist, i, j = best
    return dist, a.points[i].copy(), b.points[j].copy()


def min_set_distance(a: CompactSetApprox, b: CompactSetApprox, method: str = "auto") -> float:
    return closest_pair(a, b, method)[0]


def diameter(a: CompactSetApprox) -> float:
    """Largest pairwise distance in the cloud."""
    pts = a.points
    if len(pts) == 1:
        return 0.0
    if pts.shape[1] == 1:
        return float(pts.max() - pts.min())
    if len(pts) > 2048:
        # the diameter is attained between hull vertices
        try:
            pts = pts[ConvexHull(pts).vertices]
        except (QhullError, ValueError):
            pass
    best = 0.0
    for lo, hi in _blocks(len(pts), len(pts)):
        sq = _sqdist(pts[lo:hi, None, :], pts[None, :, :])
        best = max(best, float(np.sqrt(sq.max())))
    return best


def distance_to_point(a: CompactSetApprox, p) -> float:
    p = as_point(p, a.dim)
    return float(np.sqrt(_sqdist(a.points, p[None, :]).min()))


def nearest_point(a: CompactSetApprox, p) -> np.ndarray:
    p = as_point(p, a.dim)
    return a.points[int(np.argmin(_sqdist(a.points, p[None, :])))].copy()


# -- point-cloud files --------------------------------------------------------

def format_cloud(cloud: CompactSetApprox, header: bool = True) -> str:
    lines = []
    if header:
        lines.append(f"# d={cloud.dim} h={float(cloud.resolution)!r}")
    for row in cloud.points:
        lines.append(",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def write_cloud(path, cloud: CompactSetApprox, header: bool = True) -> Path:
    path = Path(path)
    with open(path, "w", newline="\n") as fh:
        fh.write(format_cloud(cloud, header))
    return path


def parse_cloud(text: str) -> CompactSetApprox:
    dim = None
    res = 0.0
    rows: list[list[float]] = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line:
            continue
        if line.startswith("#"):
            if lineno != 1:
                raise UsageError(f"line {lineno}: header allowed only on the first line")
            for tok in line[1:].split():
                key, _, val = tok.partition("=")
                if key == "d":
                    dim = int(val)
                elif key == "h":
                    res = float(val)
            continue
        try:
            row = [float(v) for v in line.split(",")]
        except ValueError as exc:
            raise UsageError(f"line {lineno}: {exc}") from None
        if dim is None:
            dim = len(row)
        if len(row) != dim:
            raise UsageError(f"line {lineno}: expected {dim} coordinates, got {len(row)}")
        rows.append(row)
    if not rows:
        raise UsageError("point-cloud file holds no points")
    return CompactSetApprox(np.array(rows), res)


def read_cloud(path) -> CompactSetApprox:
    return parse_cloud(Path(path).read_text())

