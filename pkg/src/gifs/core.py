"""GIFS definition, the Hutchinson-type operator and the attractor iteration."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy.spatial import cKDTree

from .errors import DivergenceError, ResourceError, UsageError
from .geometry import CompactSetApprox, as_tuple, hausdorff, snap_to_grid

log = logging.getLogger(__name__)

DEFAULT_MAX_EVALS = 10**7
DEFAULT_CELL = 1e-3
PROBATION = 10
CONTRACTION_SLACK = 1e-9


# -- comparison functions -------------------------------------------------------

@dataclass(frozen=True)
class LinearPhi:
    """phi(t) = rate * t."""

    rate: float

    def __post_init__(self):
        if not (0.0 <= self.rate < 1.0):
            raise UsageError(f"linear comparison rate must lie in [0, 1), got {self.rate}")

    def __call__(self, t):
        return self.rate * np.asarray(t, dtype=float) if np.ndim(t) else self.rate * float(t)


@dataclass(frozen=True)
class TabulatedPhi:
    """Comparison function given by samples ``(t_j, v_j)``.

    Between samples the value steps up right-continuously: on
    ``[t_j, t_{j+1})`` it is ``v_{j+1}``, the value at the next sample, which
    dominates any nondecreasing function through the samples.  Below the
    first sample the function is the chord ``v_1 * t / t_1`` and past the last
    one it grows with slope one.  The result is nondecreasing and upper
    semicontinuous; ``phi(t) < t`` holds everywhere provided ``v_1 < t_1`` and
    ``v_{j+1} < t_j``, which the constructor enforces.
    """

    samples: tuple

    def __post_init__(self):
        pts = tuple((float(t), float(v)) for t, v in self.samples)
        if not pts:
            raise UsageError("tabulated comparison function needs at least one sample")
        ts = [t for t, _ in pts]
        vs = [v for _, v in pts]
        if not all(math.isfinite(x) for x in ts + vs):
            raise UsageError("tabulated samples must be finite")
        if ts[0] <= 0 or any(b <= a for a, b in zip(ts, ts[1:])):
            raise UsageError("sample arguments must be positive and strictly increasing")
        if vs[0] < 0 or any(b < a for a, b in zip(vs, vs[1:])):
            raise UsageError("sample values must be nonnegative and nondecreasing")
        if vs[0] >= ts[0]:
            raise UsageError(f"phi(t) < t violated at t={ts[0]}")
        for j in range(len(ts) - 1):
            if vs[j + 1] >= ts[j]:
                raise UsageError(
                    f"step value {vs[j + 1]} on [{ts[j]}, {ts[j + 1]}) is not below t={ts[j]}; refine the table"
                )
        object.__setattr__(self, "samples", pts)
        object.__setattr__(self, "_t", np.array(ts))
        object.__setattr__(self, "_v", np.array(vs))

    def __call__(self, t):
        arr = np.asarray(t, dtype=float)
        ts, vs = self._t, self._v
        idx = np.searchsorted(ts, arr, side="right")
        out = np.where(
            idx == 0,
            vs[0] * arr / ts[0],
            np.where(idx >= len(ts), vs[-1] + (arr - ts[-1]), vs[np.minimum(idx, len(ts) - 1)]),
        )
        return out if arr.ndim else float(out)


ComparisonFunction = Union[LinearPhi, TabulatedPhi]


def phi_eval(phi: ComparisonFunction, t: float) -> float:
    if t < 0:
        raise UsageError(f"comparison functions are defined on [0, inf), got t={t}")
    if t == 0:
        return 0.0
    return float(phi(t))


def a_priori_error(phi: ComparisonFunction, a: float, k: int) -> float:
    """k-fold composition phi^k(a): the diameter bound for depth-k pieces."""
    if a < 0:
        raise UsageError("a_priori_error needs a >= 0")
    if k < 0:
        raise UsageError("composition depth must be nonnegative")
    if isinstance(phi, LinearPhi):
        return phi.rate**k * a
    val = float(a)
    for _ in range(k):
        val = phi_eval(phi, val)
    return val


def tail_bound(phi: ComparisonFunction, r: float, upper: float = math.inf, max_steps: int = 100_000) -> float:
    """Largest t <= upper compatible with t <= r + phi(t).

    If a set C satisfies H(C, F(C)) <= r then H(C, A) is such a t, because
    H(F(C), F(A)) <= phi(H(C, A)).  For a linear phi this is r / (1 - c);
    otherwise the bound is tightened from ``upper`` by repeated evaluation.
    """
    if isinstance(phi, LinearPhi):
        return min(r / (1.0 - phi.rate), upper)
    if not math.isfinite(upper):
        return math.inf
    t = upper
    for _ in range(max_steps):
        nxt = min(t, r + phi_eval(phi, t))
        if nxt >= t:
            break
        t = nxt
    return t


# -- maps -----------------------------------------------------------------------

class AffineMap:
    """f(x_1, ..., x_m) = A_1 x_1 + ... + A_m x_m + b on (R^d)^m."""

    def __init__(self, matrices, offset):
        mats = np.asarray(matrices, dtype=float)
        if mats.ndim == 1:
            mats = mats[:, None, None]
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2] or mats.shape[0] == 0:
            raise UsageError(f"expected m square d x d matrices, got array of shape {mats.shape}")
        off = np.atleast_1d(np.asarray(offset, dtype=float))
        if off.shape != (mats.shape[1],):
            raise UsageError(f"offset must have length {mats.shape[1]}, got shape {off.shape}")
        if not (np.all(np.isfinite(mats)) and np.all(np.isfinite(off))):
            raise UsageError("map coefficients must be finite")
        mats.setflags(write=False)
        off.setflags(write=False)
        self.matrices = mats
        self.offset = off

    @property
    def order(self) -> int:
        return self.matrices.shape[0]

    @property
    def dim(self) -> int:
        return self.matrices.shape[1]

    def lipschitz_bound(self) -> float:
        return float(sum(np.linalg.norm(a, 2) for a in self.matrices))

    def __call__(self, x) -> np.ndarray:
        x = as_tuple(x, self.order, self.dim)
        out = self.offset.copy()
        for a, xj in zip(self.matrices, x):
            out = out + a @ xj
        return out

    def apply_batch(self, xs: np.ndarray) -> np.ndarray:
        """Evaluate on an ``(N, m, d)`` stack of tuples."""
        out = np.broadcast_to(self.offset, (xs.shape[0], self.dim)).copy()
        for j, a in enumerate(self.matrices):
            out += xs[:, j, :] @ a.T
        return out

    def linear_batch(self, dxs: np.ndarray) -> np.ndarray:
        """Linear part sum_j A_j dx_j on an ``(N, m, d)`` stack."""
        out = np.zeros((dxs.shape[0], self.dim))
        for j, a in enumerate(self.matrices):
            out += dxs[:, j, :] @ a.T
        return out

    def __repr__(self):
        return f"AffineMap(matrices={self.matrices.tolist()}, offset={self.offset.tolist()})"


class FunctionMap:
    """Escape hatch: a map given by a vectorised callable ``(N, m, d) -> (N, d)``."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], order: int, dim: int):
        self.fn = fn
        self._order = int(order)
        self._dim = int(dim)

    @property
    def order(self) -> int:
        return self._order

    @property
    def dim(self) -> int:
        return self._dim

    def __call__(self, x) -> np.ndarray:
        x = as_tuple(x, self.order, self.dim)
        return self.apply_batch(x[None])[0]

    def apply_batch(self, xs: np.ndarray) -> np.ndarray:
        out = np.asarray(self.fn(xs), dtype=float)
        if out.shape != (xs.shape[0], self.dim):
            raise UsageError(f"map returned shape {out.shape}, expected {(xs.shape[0], self.dim)}")
        return out


GifsMap = Union[AffineMap, FunctionMap]


def map_apply(f: GifsMap, x) -> np.ndarray:
    return f(x)


@dataclass(frozen=True, eq=False)
class Gifs:
    """A generalized IFS of order m: maps f_1..f_n : X^m -> X sharing one phi."""

    order: int
    maps: tuple
    phi: ComparisonFunction

    def __post_init__(self):
        maps = tuple(self.maps)
        if self.order < 1:
            raise UsageError("GIFS order must be at least 1")
        if not maps:
            raise UsageError("a GIFS needs at least one map")
        dims = {f.dim for f in maps}
        if len(dims) != 1:
            raise UsageError(f"maps act on different dimensions: {sorted(dims)}")
        for i, f in enumerate(maps, start=1):
            if f.order != self.order:
                raise UsageError(f"map {i} takes {f.order} arguments, GIFS order is {self.order}")
        object.__setattr__(self, "maps", maps)

    @property
    def n(self) -> int:
        return len(self.maps)

    @property
    def dim(self) -> int:
        return self.maps[0].dim

    @property
    def affine(self) -> bool:
        return all(isinstance(f, AffineMap) for f in self.maps)

    def contraction_factor(self) -> float | None:
        """max_i sum_j ||A_ij|| for affine systems, else None."""
        if not self.affine:
            return None
        return max(f.lipschitz_bound() for f in self.maps)

    @property
    def certified(self) -> bool:
        """True when the linear phi provably dominates every affine map."""
        c = self.contraction_factor()
        return isinstance(self.phi, LinearPhi) and c is not None and c <= self.phi.rate + 1e-12


def absorbing_ball(S: Gifs) -> tuple[np.ndarray, float]:
    """Closed ball around the origin mapped into itself by every f_i.

    |f_i(x)| <= c' R + |b_i| <= R whenever R = max|b_i| / (1 - c').
    """
    c = S.contraction_factor()
    if c is None:
        raise UsageError("absorbing_ball needs affine maps")
    if c >= 1.0:
        raise UsageError(f"maps are not contractive in sum of operator norms (c' = {c:.6g})")
    radius = max(float(np.linalg.norm(f.offset)) for f in S.maps) / (1.0 - c)
    return np.zeros(S.dim), radius


def _attractor_upper(S: Gifs, cloud: CompactSetApprox) -> float:
    # crude bound on H(cloud, A): A sits inside the absorbing ball
    try:
        _, radius = absorbing_ball(S)
    except UsageError:
        return math.inf
    return radius + float(np.sqrt((cloud.points**2).sum(axis=1)).max())


# -- Hutchinson operator ----------------------------------------------------------

@dataclass(frozen=True)
class SamplingPolicy:
    """How the operator evaluates a product of clouds.

    ``max_evals`` caps map evaluations; larger products are subsampled with
    a generator seeded from ``seed`` unless ``exhaustive`` is demanded.
    ``cell`` (if set) snaps the image onto a grid of that size.
    """

    max_evals: int = DEFAULT_MAX_EVALS
    cell: float | None = None
    seed: int = 0
    exhaustive: bool = False
    chunk: int = 1 << 20


def _gather(clouds: Sequence[CompactSetApprox], flat: np.ndarray) -> np.ndarray:
    sizes = [len(c) for c in clouds]
    idx = np.unravel_index(flat, sizes)
    return np.stack([c.points[i] for c, i in zip(clouds, idx)], axis=1)


def _coverage_radius(clouds, sampled: np.ndarray, rng, probes: int = 256) -> float:
    # Euclidean distance on the concatenated tuple dominates the max metric,
    # so this overestimates the covering radius of the sampled tuples.
    tree = cKDTree(sampled.reshape(len(sampled), -1))
    total = math.prod(len(c) for c in clouds)
    probe = _gather(clouds, rng.integers(0, total, size=probes))
    dist, _ = tree.query(probe.reshape(probes, -1), k=1)
    return float(dist.max())


def image_of_product(maps: Sequence[GifsMap], phi: ComparisonFunction, clouds: Sequence[CompactSetApprox],
                     policy: SamplingPolicy) -> tuple[CompactSetApprox, float]:
    """Union of f(C_1 x ... x C_m) over ``maps``.

    Returns the image cloud and the extra slack (sampling plus decimation)
    that was added to its resolution on top of phi(max input resolution).
    """
    dims = {c.dim for c in clouds}
    if len(dims) != 1:
        raise UsageError("input clouds live in different dimensions")
    total = math.prod(len(c) for c in clouds)
    evals = total * len(maps)
    slack = 0.0
    if evals <= policy.max_evals:
        blocks = (np.arange(a, min(a + policy.chunk, total)) for a in range(0, total, policy.chunk))
    else:
        if policy.exhaustive:
            raise ResourceError(f"exhaustive image needs {evals} evaluations, budget is {policy.max_evals}")
        rng = np.random.default_rng(policy.seed)
        count = max(1, policy.max_evals // len(maps))
        picks = rng.integers(0, total, size=count)
        slack += phi_eval(phi, _coverage_radius(clouds, _gather(clouds, picks), rng))
        log.debug("subsampled %d of %d tuples", count, total)
        blocks = (picks[a:a + policy.chunk] for a in range(0, count, policy.chunk))

    parts = []
    for flat in blocks:
        xs = _gather(clouds, flat)
        for f in maps:
            img = f.apply_batch(xs)
            if policy.cell:
                img, _ = snap_to_grid(img, policy.cell)
            parts.append(img)
    pts = np.concatenate(parts)
    if policy.cell:
        pts, err = snap_to_grid(pts, policy.cell)
        slack += err
    res = phi_eval(phi, max(c.resolution for c in clouds)) + slack
    return CompactSetApprox(pts, res), slack


def hutchinson(S: Gifs, D: Sequence[CompactSetApprox], policy: SamplingPolicy | None = None) -> CompactSetApprox:
    """F_S(D_1, ..., D_m) = f_1(D_1 x ... x D_m) u ... u f_n(D_1 x ... x D_m)."""
    if len(D) != S.order:
        raise UsageError(f"operator of order {S.order} applied to {len(D)} sets")
    if any(c.dim != S.dim for c in D):
        raise UsageError("input cloud dimension does not match the maps")
    cloud, _ = image_of_product(S.maps, S.phi, D, policy or SamplingPolicy())
    return cloud


# -- attractor ------------------------------------------------------------------

@dataclass(eq=False)
class AttractorApprox:
    cloud: CompactSetApprox
    residual: float
    iterations: int
    error_bound: float
    cell: float | None = None
    converged: bool = True
    history: list = field(default_factory=list)


def _residual_with_slack(S: Gifs, cloud: CompactSetApprox, cell, policy: SamplingPolicy | None):
    pol = policy or SamplingPolicy()
    pol = SamplingPolicy(pol.max_evals, cell, pol.seed, pol.exhaustive, pol.chunk)
    image, slack = image_of_product(S.maps, S.phi, [cloud] * S.order, pol)
    return hausdorff(image, cloud), slack


def fixed_point_residual(S: Gifs, A, *, cell: float | None = None, policy: SamplingPolicy | None = None) -> float:
    """H(F_S(A, ..., A), A).

    ``A`` may be an :class:`AttractorApprox`, in which case the image is
    decimated on the same grid the iteration used.
    """
    if isinstance(A, AttractorApprox):
        cell = A.cell if cell is None else cell
        A = A.cloud
    return _residual_with_slack(S, A, cell, policy)[0]


def attractor_iterate(S: Gifs, seeds, tol: float, max_iter: int = 1000, *, cell: float | None = DEFAULT_CELL,
                      policy: SamplingPolicy | None = None, probation: int = PROBATION,
                      max_points: int = 5_000_000) -> AttractorApprox:
    """Run D_{k+m} = F_S(D_k, ..., D_{k+m-1}) until successive iterates settle.

    ``seeds`` is either one cloud (used for every slot) or m clouds.  Images
    are snapped to a grid of size ``cell`` to keep the clouds from growing
    without bound.  Stops once H(D_{k+m}, D_{k+m-1}) <= tol.

    The returned ``error_bound`` bounds H(cloud, A_S): with r the residual
    H(F(C..C), C) of the final cloud C, measured after decimation, plus the
    decimation and sampling slack, H(C, A_S) solves t <= r + phi(t).
    """
    if not tol > 0:
        raise UsageError("tol must be positive")
    if max_iter < 0:
        raise UsageError("max_iter must be nonnegative")
    if isinstance(seeds, CompactSetApprox):
        seeds = [seeds] * S.order
    window = list(seeds)
    if len(window) != S.order:
        raise UsageError(f"need {S.order} seed sets, got {len(window)}")
    if any(c.dim != S.dim for c in window):
        raise UsageError("seed dimension does not match the maps")
    base = policy or SamplingPolicy()
    pol = SamplingPolicy(base.max_evals, cell, base.seed, base.exhaustive, base.chunk)
    noise_floor = 2.0 * (cell or 0.0) * math.sqrt(S.dim)

    history: list[float] = []
    converged = max_iter == 0
    its = 0
    for its in range(1, max_iter + 1):
        new, _ = image_of_product(S.maps, S.phi, window, pol)
        if len(new) > max_points:
            raise ResourceError(f"iterate {its} holds {len(new)} points (limit {max_points})")
        diff = hausdorff(new, window[-1])
        window = window[1:] + [new]
        history.append(diff)
        log.debug("iteration %d: %d points, step %.3g", its, len(new), diff)
        if diff <= tol:
            converged = True
            break
        tail = history[-(probation + 1):]
        if len(tail) == probation + 1 and all(b >= a for a, b in zip(tail, tail[1:])):
            if diff > noise_floor:
                raise DivergenceError(
                    f"successive distances did not decrease over {probation} iterations (last {diff:.6g})"
                )
            # stuck on the decimation grid rather than diverging
            log.info("iteration stalled at grid noise level %.3g > tol", diff)
            break
    else:
        its = max_iter

    cloud = window[-1]
    residual, slack = _residual_with_slack(S, cloud, cell, base)
    bound = tail_bound(S.phi, residual + slack, _attractor_upper(S, cloud))
    return AttractorApprox(cloud, residual, its, bound, cell, converged, history)


# -- contraction check --------------------------------------------------------------

@dataclass
class ContractionReport:
    max_ratio: tuple
    bound: float
    passed: bool
    samples: int


def contraction_check(S: Gifs, sample_count: int, rng_seed: int = 0) -> ContractionReport:
    """Estimate max d(f(x), f(y)) / phi(d_m(x, y)) on random tuple pairs.

    Pairs are drawn in the absorbing ball; half are independent, half are
    close pairs at log-uniform separations to probe phi near zero.
    """
    if sample_count < 1:
        raise UsageError("sample_count must be at least 1")
    rng = np.random.default_rng(rng_seed)
    try:
        center, radius = absorbing_ball(S)
    except UsageError:
        center = np.zeros(S.dim)
        offsets = [float(np.linalg.norm(f.offset)) for f in S.maps if isinstance(f, AffineMap)]
        radius = max([1.0] + offsets)
    radius = max(radius, 1e-6)
    m, d = S.order, S.dim
    x = center + rng.uniform(-radius, radius, size=(sample_count, m, d))
    far = center + rng.uniform(-radius, radius, size=(sample_count, m, d))
    scale = radius * 10.0 ** rng.uniform(-6, 0, size=(sample_count, 1, 1))
    near = x + scale * rng.uniform(-1, 1, size=(sample_count, m, d))
    y = np.where((np.arange(sample_count) % 2 == 0)[:, None, None], far, near)
    dm = np.sqrt(((x - y) ** 2).sum(axis=2)).max(axis=1)
    keep = dm > 0
    x, y, dm = x[keep], y[keep], dm[keep]
    phis = np.asarray(S.phi(dm), dtype=float)
    ratios = []
    for f in S.maps:
        if isinstance(f, AffineMap):
            # f(x) - f(y) from x - y directly, free of cancellation at close pairs
            diff = f.linear_batch(x - y)
        else:
            diff = f.apply_batch(x) - f.apply_batch(y)
        num = np.sqrt((diff**2).sum(axis=1))
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(phis > 0, num / np.where(phis > 0, phis, 1.0), np.where(num > 0, np.inf, 0.0))
        ratios.append(float(r.max()) if r.size else 0.0)
    bound = 1.0 + CONTRACTION_SLACK
    return ContractionReport(tuple(ratios), bound, all(r <= bound for r in ratios), int(keep.sum()))
