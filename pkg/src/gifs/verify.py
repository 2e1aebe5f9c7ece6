"""Invariant suite run by ``gifs verify``: one PASS/FAIL line per check."""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import codes as cs
from .config import STREAM_CONTRACTION, STREAM_VERIFY, RunConfig
from .core import (AttractorApprox, SamplingPolicy, absorbing_ball, a_priori_error,
                   attractor_iterate, contraction_check, fixed_point_residual, hutchinson, phi_eval)
from .errors import GifsError
from .geometry import (CompactSetApprox, closest_pair, diameter, distance_to_point, hausdorff, singleton,
                       snap_to_grid, union)
from .topology import (Verdict, arc_spread, build_arc, connectedness_verdict, default_threshold, find_chain,
                       overlap_graph, proper_family_build)

log = logging.getLogger(__name__)


@dataclass
class CheckResult:
    check_id: str
    passed: bool
    observed: float
    bound: float

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.check_id} {self.observed!r} {self.bound!r}"


def _le(check_id: str, observed: float, bound: float) -> CheckResult:
    return CheckResult(check_id, bool(observed <= bound), float(observed), float(bound))


class Context:
    """Lazily computed objects shared by the checks."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.S = cfg.gifs()
        self.rng = np.random.default_rng(cfg.stream_seed(STREAM_VERIFY))
        self.policy = cfg.policy()
        self.cyl_policy = cfg.policy(cylinder=True)
        self.cache = cs.CylinderCache()
        self._A: AttractorApprox | None = None

    @property
    def A(self) -> AttractorApprox:
        if self._A is None:
            c = self.cfg
            self._A = attractor_iterate(self.S, c.seeds(), c.tol, c.max_iter, cell=c.cell, policy=self.policy)
        return self._A

    @property
    def ball_diam(self) -> float:
        """Diameter of a set holding the attractor and its cloud."""
        A = self.A
        try:
            center, radius = absorbing_ball(self.S)
        except GifsError:
            return diameter(A.cloud) + 2 * A.error_bound
        far = float(np.sqrt(((A.cloud.points - center) ** 2).sum(axis=1)).max())
        return max(2 * radius, far + radius)

    def cylinder(self, code: cs.FiniteCode) -> CompactSetApprox:
        p = self.cyl_policy
        return cs.cylinder_set(self.S, self.A, code, p.max_evals, p.seed, cache=self.cache)

    def sub_cloud(self, size: int) -> CompactSetApprox:
        pts = self.A.cloud.points
        if len(pts) > size:
            pts = pts[np.sort(self.rng.choice(len(pts), size, replace=False))]
        return CompactSetApprox(pts)


# -- geometry -----------------------------------------------------------------

def check_geometry(ctx: Context) -> list[CheckResult]:
    a = ctx.sub_cloud(400)
    b = CompactSetApprox(a.points + ctx.rng.normal(scale=1e-2, size=a.points.shape))
    c = ctx.sub_cloud(300)
    hab, hba = hausdorff(a, b), hausdorff(b, a)
    tri = hausdorff(a, c) - hausdorff(a, b) - hausdorff(b, c)
    du = max(diameter(a), diameter(b)) - diameter(union([a, b]))
    return [
        _le("geometry.hausdorff_symmetry", abs(hab - hba), 0.0),
        _le("geometry.hausdorff_triangle", tri, 1e-12),
        _le("geometry.hausdorff_identity", hausdorff(a, a), 0.0),
        _le("geometry.diameter_union", du, 0.0),
    ]


# -- core -------------------------------------------------------------------

def check_core(ctx: Context) -> list[CheckResult]:
    S, A, cfg = ctx.S, ctx.A, ctx.cfg
    out = []
    ts = np.concatenate([np.geomspace(1e-9, 1e3, 400), [0.0]])
    vals = np.array([phi_eval(S.phi, float(t)) for t in np.sort(ts)])
    drops = float(np.max(vals[:-1] - vals[1:], initial=0.0))
    out.append(_le("core.phi_nondecreasing", drops, 0.0))
    pos = np.sort(ts)[1:]
    gap = float(np.max(vals[1:] - pos))
    out.append(CheckResult("core.phi_below_identity", gap < 0, gap, 0.0))

    rep = contraction_check(S, 20000, cfg.stream_seed(STREAM_CONTRACTION))
    out.append(_le("core.contraction", max(rep.max_ratio), rep.bound))

    if S.affine:
        try:
            center, radius = absorbing_ball(S)
        except GifsError:
            pass
        else:
            x = ctx.rng.normal(size=(4000, S.order, S.dim))
            x /= np.linalg.norm(x, axis=2, keepdims=True)
            x *= radius * ctx.rng.uniform(0, 1, size=(4000, S.order, 1)) ** (1 / S.dim)
            worst = max(float(np.linalg.norm(f.apply_batch(x + center) - center, axis=1).max()) for f in S.maps)
            out.append(_le("core.absorbing_ball", worst, radius * (1 + 1e-12) + 1e-12))

    p = A.cloud.points[0]
    img = hutchinson(S, [singleton(p)] * S.order, SamplingPolicy(exhaustive=True))
    expect = np.unique(np.stack([f(np.stack([p] * S.order)) for f in S.maps]), axis=0)
    mismatch = 0.0 if img.points.shape == expect.shape and np.array_equal(np.unique(img.points, axis=0), expect) \
        else 1.0
    out.append(_le("core.singleton_image", mismatch, 0.0))

    floor = 2.0 * cfg.cell * math.sqrt(S.dim)
    out.append(_le("core.final_residual", A.residual, cfg.tol if A.converged else max(cfg.tol, floor)))
    out.append(_le("core.stored_residual", abs(fixed_point_residual(S, A) - A.residual), 0.0))

    # a second run from a different start must land on the same set
    other = singleton(np.full(S.dim, 1.0)) if cfg.seed_cloud is None else singleton(np.zeros(S.dim))
    B = attractor_iterate(S, other, cfg.tol, cfg.max_iter, cell=cfg.cell, policy=ctx.policy)
    h1, h2 = A.cloud.resolution, B.cloud.resolution
    out.append(_le("core.seed_independence", hausdorff(A.cloud, B.cloud), 2 * (h1 + h2) + 2 * cfg.tol))

    # operator contraction on exact (undecimated) images of small clouds
    size = max(2, int((2e6 / S.n) ** (1.0 / S.order)))
    size = min(size, 400)
    a = ctx.sub_cloud(size)
    b = ctx.sub_cloud(size)
    b = CompactSetApprox(b.points + ctx.rng.normal(scale=1e-2, size=b.points.shape))
    exact = SamplingPolicy(exhaustive=True, max_evals=10**8)
    fa = hutchinson(S, [a] * S.order, exact)
    fb = hutchinson(S, [b] * S.order, exact)
    out.append(_le("core.operator_contraction", hausdorff(fa, fb), phi_eval(S.phi, hausdorff(a, b)) * (1 + 1e-9) + 1e-12))
    return out


# -- code space -----------------------------------------------------------------

def _enum_codes(n: int, m: int, k: int):
    return (cs.FiniteCode(levels, m, check=False)
            for levels in itertools.product(*[list(cs.enumerate_level(n, m, j)) for j in range(1, k + 1)]))


def _code_count(n: int, m: int, k: int) -> int:
    return math.prod(cs.level_cardinality(n, m, j) for j in range(1, k + 1))


def check_codes(ctx: Context) -> list[CheckResult]:
    S, A, rng = ctx.S, ctx.A, ctx.rng
    n, m = S.n, S.order
    out = []

    worst = 0
    k = 1
    while k <= 4 and cs.level_cardinality(n, m, k) <= 10**4:
        worst = max(worst, abs(sum(1 for _ in cs.enumerate_level(n, m, k)) - cs.level_cardinality(n, m, k)))
        k += 1
    out.append(_le("codes.level_cardinality", worst, 0))

    misses = 0
    k = 1
    while k <= 3 and _code_count(n, m, k + 1) <= 40000:
        for gamma in _enum_codes(n, m, k + 1):
            args = [cs.project(gamma, j) for j in range(1, m + 1)]
            misses += cs.tau_apply(gamma.level(1), args, k + 1) != gamma
        k += 1
    out.append(_le("codes.tau_covering", misses, 0))

    horizon, ratio_excess, proj_bad = 20, -math.inf, 0
    lip = m / (m + 1)
    for _ in range(2000):
        i = int(rng.integers(1, n + 1))
        al = [cs.random_codespec(rng, n, m, 5) for _ in range(m)]
        be = [cs.random_codespec(rng, n, m, 5) for _ in range(m)]
        lhs = cs.code_distance(cs.tau_apply(i, al, horizon), cs.tau_apply(i, be, horizon), horizon)
        rhs = max(cs.code_distance(a, b, horizon).upper for a, b in zip(al, be))
        ratio_excess = max(ratio_excess, float(lhs.lower - lip * rhs - lhs.tail))
        t = cs.tau_apply(i, al, 6)
        proj_bad += any(cs.project(t, j) != al[j - 1].truncate(5) for j in range(1, m + 1))
    out.append(_le("codes.tau_lipschitz", ratio_excess, 0.0))
    out.append(_le("codes.tau_projection", proj_bad, 0))

    D = diameter(A.cloud) + 2 * A.error_bound
    excess = -math.inf
    max_depth = 6 if m <= 2 else 4
    for k in range(1, max_depth + 1):
        for _ in range(6):
            c = ctx.cylinder(cs.random_code(rng, n, m, k))
            excess = max(excess, diameter(c) - a_priori_error(S.phi, D, k) - 2 * c.resolution)
    out.append(_le("codes.diameter_decay", excess, 0.0))

    excess = -math.inf
    root = cs.FiniteCode((), m, check=False)
    frontier = [root]
    for k in range(0, 3):
        if cs.level_cardinality(n, m, k + 1) > 256 or len(frontier) * cs.level_cardinality(n, m, k + 1) > 600:
            break
        nxt = []
        for alpha in frontier:
            kids = list(cs.children(alpha, n))
            parent = ctx.cylinder(alpha)
            clouds = [ctx.cylinder(c) for c in kids]
            gap = hausdorff(parent, union(clouds))
            excess = max(excess, gap - parent.resolution - max(c.resolution for c in clouds))
            nxt.extend(kids)
        frontier = nxt
    out.append(_le("codes.decomposition", excess, 0.0))

    depth = 10 if m <= 2 else 6
    base = cs.diagonal(A.cloud.points[0], m)
    excess = -math.inf
    for _ in range(30):
        i = int(rng.integers(1, n + 1))
        al = [cs.random_codespec(rng, n, m, 3) for _ in range(m)]
        pts, bounds = zip(*(cs.coding_point(S, a, depth, base) for a in al))
        lhs = S.maps[i - 1](np.stack(pts))
        tau = cs.tau_apply(i, al, depth + 1)
        p, b = cs.coding_point(S, tau, depth + 1, base)
        excess = max(excess, float(np.linalg.norm(lhs - p)) - (phi_eval(S.phi, max(bounds)) + b))
    out.append(_le("codes.semiconjugacy", excess, 0.0))

    excess = -math.inf
    for k in range(1, 7):
        alpha = cs.random_code(rng, n, m, k)
        x = cs.CodeSpec(alpha, 1)
        y = cs.CodeSpec(alpha, n)
        p1, _ = cs.coding_point(S, x, k + 4, base)
        p2, _ = cs.coding_point(S, y, k + 4, base)
        excess = max(excess, float(np.linalg.norm(p1 - p2)) - 2 * a_priori_error(S.phi, ctx.ball_diam, k))
    out.append(_le("codes.continuity", excess, 0.0))

    out.append(_check_surjectivity(ctx))
    return out


def _check_surjectivity(ctx: Context) -> CheckResult:
    S, A = ctx.S, ctx.A
    limit = int((3e6 / S.n) ** (1.0 / S.order))
    pts = A.cloud.points
    cell = ctx.cfg.cell
    while len(pts) > limit:
        cell *= 2
        pts, _ = snap_to_grid(A.cloud.points, cell)
    coarse = CompactSetApprox(pts)
    depth = 6 if S.order <= 2 else 4
    D = ctx.ball_diam
    base = cs.diagonal(A.cloud.points[0], S.order)
    excess = -math.inf
    for j in ctx.rng.choice(len(A.cloud), size=min(10, len(A.cloud)), replace=False):
        p = A.cloud.points[j]
        code, miss = cs.recover_code(S, coarse, p, depth)
        # each step of the descent misses by at most `miss`
        err = D
        for _ in range(depth):
            err = miss + phi_eval(S.phi, err)
        q, b = cs.coding_point(S, code, depth, base)
        excess = max(excess, float(np.linalg.norm(q - p)) - err - b)
    return _le("codes.surjectivity", excess, 0.0)


# -- topology --------------------------------------------------------------------

def check_topology(ctx: Context) -> list[CheckResult]:
    S, A, cfg = ctx.S, ctx.A, ctx.cfg
    out = []
    depth = 0
    while depth < 3 and _code_count(S.n, S.order, depth + 1) <= 600:
        depth += 1
    fam = proper_family_build(S, A, depth, ctx.cyl_policy, cfg.node_budget, cache=ctx.cache)
    slack = 2 * max(c.resolution for lvl in fam.levels for c in lvl.values())
    grow = max([b - a for a, b in zip(fam.max_diameter, fam.max_diameter[1:])], default=0.0)
    out.append(_le("topology.family_monotone", grow, slack))
    D = diameter(A.cloud) + 2 * A.error_bound
    env = max(d - a_priori_error(S.phi, D, k) for k, d in enumerate(fam.max_diameter))
    out.append(_le("topology.family_envelope", env, slack))

    pieces = fam.level(1) if depth >= 1 else None
    rep = connectedness_verdict(S, A, cfg.eps_connect, cfg.eps_separate, pieces=pieces)
    sets = [p for _, p in rep.pieces]
    thr = cfg.chain_threshold or default_threshold(A, sets)
    if rep.verdict is Verdict.DISCONNECTED:
        side = [p for lab, p in rep.pieces if lab in rep.partition[0]]
        rest = [p for lab, p in rep.pieces if lab in rep.partition[1]]
        cross = min(closest_pair(a, b)[0] for a in side for b in rest)
        eps_s = cfg.eps_separate if cfg.eps_separate is not None else default_threshold(A, sets)
        out.append(_le("topology.verdict_soundness", -cross, -eps_s))
    else:
        out.append(_le("topology.verdict_soundness", 0.0, 0.0))

    graph = overlap_graph(rep.pieces, thr)
    worst = -math.inf
    for comp in graph.components():
        for a, b in itertools.combinations(comp, 2):
            ch = find_chain(graph, graph.labels[a], graph.labels[b])
            for (u, v), w in zip(zip(ch.nodes, ch.nodes[1:]), ch.witnesses):
                worst = max(worst, closest_pair(graph.sets[u], graph.sets[v])[0] - thr,
                            distance_to_point(graph.sets[u], w) - thr, distance_to_point(graph.sets[v], w) - thr)
    out.append(_le("topology.chain_validity", max(worst, 0.0) if worst > -math.inf else 0.0, 0.0))

    if rep.verdict is Verdict.CONNECTED and graph.connected:
        level = 1
        while level < 3 and cs.level_cardinality(S.n, S.order, level + 1) <= 256:
            level += 1
        x, y = cs.CodeSpec.constant(1, S.order), cs.CodeSpec.constant(S.n, S.order)
        arc = build_arc(S, A, x, y, level, cfg.chain_threshold, policy=ctx.cyl_policy,
                        node_budget=cfg.node_budget, cache=ctx.cache)
        broken = 0
        for lo, hi in zip(arc.history, arc.history[1:]):
            pos = {yv: i for i, yv in enumerate(hi.division)}
            broken += sum(1 for yv, pt in zip(lo.division, lo.points)
                          if yv not in pos or not np.array_equal(hi.points[pos[yv]], pt))
        out.append(_le("topology.arc_restriction", broken, 0))
        out.append(_le("topology.arc_mesh", float(arc.mesh), 0.5**level))
        out.append(_le("topology.arc_spread", arc_spread(arc), arc.quality + 2 * thr))
    return out


SUITES: list[Callable[[Context], list[CheckResult]]] = [check_geometry, check_core, check_codes, check_topology]


def run_suite(cfg: RunConfig) -> list[CheckResult]:
    ctx = Context(cfg)
    results: list[CheckResult] = []
    for suite in SUITES:
        try:
            results.extend(suite(ctx))
        except GifsError as exc:
            log.error("%s aborted: %s", suite.__name__, exc)
            results.append(CheckResult(f"{suite.__name__.removeprefix('check_')}.completed", False, 1.0, 0.0))
    return results


def format_results(results: list[CheckResult]) -> str:
    return "".join(r.line() + "\n" for r in results)
