"""Overlap graphs, chains, connectedness verdicts and arc construction."""
from __future__ import annotations

import enum
import logging
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Sequence

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .codes import (CodeSpec, CylinderCache, FiniteCode, children, coding_point, cylinder_set,
                    diagonal, format_code, level_cardinality)
from .core import AttractorApprox, Gifs, SamplingPolicy
from .errors import ConsistencyError, ConstructionError, DisconnectionError, ResourceError, UsageError
from .geometry import (CompactSetApprox, _sqdist, closest_pair, diameter, directed_hausdorff, distance_to_point,
                       nearest_point)

log = logging.getLogger(__name__)

NODE_BUDGET = 10**5
_TREE_NODES = 16


# -- overlap graphs and chains ---------------------------------------------------

@dataclass(eq=False)
class OverlapGraph:
    """Nodes in the given order; edge iff min_set_distance <= threshold.

    ``edges`` caches (i, j) -> (distance, point in node i, point in node j)
    for i < j; large families fill it on demand through :meth:`edge`.
    """

    labels: list
    sets: list
    threshold: float
    edges: dict
    adjacency: list

    def __len__(self) -> int:
        return len(self.sets)

    def index(self, label: Hashable) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise UsageError(f"node {label!r} is not in the graph") from None

    def edge(self, i: int, j: int) -> tuple:
        key = (min(i, j), max(i, j))
        if key not in self.edges:
            if key[1] not in self.adjacency[key[0]]:
                raise UsageError(f"nodes {i} and {j} are not adjacent")
            self.edges[key] = closest_pair(self.sets[key[0]], self.sets[key[1]])
        return self.edges[key]

    def components(self) -> list[list[int]]:
        seen = [False] * len(self)
        comps = []
        for s in range(len(self)):
            if seen[s]:
                continue
            seen[s] = True
            comp, queue = [], deque([s])
            while queue:
                u = queue.popleft()
                comp.append(u)
                for v in self.adjacency[u]:
                    if not seen[v]:
                        seen[v] = True
                        queue.append(v)
            comps.append(sorted(comp))
        return comps

    @property
    def connected(self) -> bool:
        return len(self.components()) == 1


def _as_family(family) -> tuple[list, list]:
    if isinstance(family, dict):
        items = list(family.items())
    else:
        items = [(lab, s) for lab, s in family] if family and isinstance(family[0], tuple) else \
            list(enumerate(family))
    if not items:
        raise UsageError("overlap graph of an empty family")
    return [lab for lab, _ in items], [s for _, s in items]


def _edges_pairwise(sets, threshold: float) -> dict:
    boxes = [s.bbox() for s in sets]
    edges = {}
    for i in range(len(sets)):
        lo_i, hi_i = boxes[i]
        for j in range(i + 1, len(sets)):
            lo_j, hi_j = boxes[j]
            # boxes farther apart than the threshold cannot produce an edge
            sep = np.maximum(0.0, np.maximum(lo_i - hi_j, lo_j - hi_i))
            if float(np.sqrt((sep**2).sum())) > threshold:
                continue
            dist, pa, pb = closest_pair(sets[i], sets[j])
            if dist <= threshold:
                edges[(i, j)] = (dist, pa, pb)
    return edges


def _adjacency_tree(sets, threshold: float) -> list[list[int]]:
    # Sibling cylinders share most grid points, so work on unique points:
    # nodes i, j are adjacent iff some point of i and some point of j lie
    # within the threshold, i.e. (M W M^T)_ij > 0 for the node/point
    # incidence M and the point proximity pattern W.
    pts = np.concatenate([s.points for s in sets])
    owner = np.repeat(np.arange(len(sets)), [len(s) for s in sets])
    uniq, inv = np.unique(pts, axis=0, return_inverse=True)
    inv = inv.ravel()
    M = sparse.csr_matrix((np.ones(len(inv)), (owner, inv)), shape=(len(sets), len(uniq)))
    pairs = cKDTree(uniq).query_pairs(threshold * (1 + 1e-9) + 1e-300, output_type="ndarray")
    if len(pairs):
        d = np.sqrt(_sqdist(uniq[pairs[:, 0]], uniq[pairs[:, 1]]))
        pairs = pairs[d <= threshold]
    rows = np.concatenate([np.arange(len(uniq)), pairs[:, 0], pairs[:, 1]]) if len(pairs) else np.arange(len(uniq))
    cols = np.concatenate([np.arange(len(uniq)), pairs[:, 1], pairs[:, 0]]) if len(pairs) else np.arange(len(uniq))
    W = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(uniq), len(uniq)))
    link = (M @ W @ M.T).tocoo()
    adjacency: list[list[int]] = [[] for _ in sets]
    for i, j in zip(link.row.tolist(), link.col.tolist()):
        if i != j:
            adjacency[i].append(j)
    return adjacency


def overlap_graph(family, threshold: float) -> OverlapGraph:
    """Exact pairwise min-distance test against ``threshold``.

    ``family`` is a dict label -> cloud, a list of (label, cloud) pairs or a
    plain list of clouds (labelled by position).  Node order, and with it
    every tie-break downstream, follows the order given.
    """
    if not threshold >= 0:
        raise UsageError(f"threshold must be nonnegative, got {threshold}")
    labels, sets = _as_family(family)
    if len({s.dim for s in sets}) != 1:
        raise UsageError("family members live in different dimensions")
    if len(sets) > _TREE_NODES:
        edges = {}
        adjacency = _adjacency_tree(sets, threshold)
    else:
        edges = _edges_pairwise(sets, threshold)
        adjacency = [[] for _ in sets]
        for i, j in edges:
            adjacency[i].append(j)
            adjacency[j].append(i)
    for adj in adjacency:
        adj.sort()
    return OverlapGraph(labels, sets, float(threshold), edges, adjacency)


@dataclass
class Chain:
    """Node indices, their labels and one junction point per consecutive pair."""

    nodes: list
    labels: list
    witnesses: list

    def __len__(self) -> int:
        return len(self.nodes)


def _junction(graph: OverlapGraph, i: int, j: int) -> np.ndarray:
    if i == j:
        raise UsageError("junction of a node with itself")
    _, pa, pb = graph.edge(i, j)
    return 0.5 * (pa + pb)


def _bfs(graph: OverlapGraph, sources: Sequence[int], targets: set) -> list[int] | None:
    prev = {s: None for s in sources}
    queue = deque(sources)
    while queue:
        u = queue.popleft()
        if u in targets:
            path = []
            while u is not None:
                path.append(u)
                u = prev[u]
            return path[::-1]
        for v in graph.adjacency[u]:
            if v not in prev:
                prev[v] = u
                queue.append(v)
    return None


def _make_chain(graph: OverlapGraph, path: list[int]) -> Chain:
    if len(path) == 1:
        path = path * 2
        s = graph.sets[path[0]]
        mid = s.points[len(s) // 2]
        witnesses = [mid.copy()]
    else:
        witnesses = [_junction(graph, a, b) for a, b in zip(path, path[1:])]
    return Chain(list(path), [graph.labels[i] for i in path], witnesses)


def _components_error(graph: OverlapGraph, a: int, msg: str) -> DisconnectionError:
    comps = graph.components()
    mine = next(c for c in comps if a in c)
    rest = [i for c in comps if c is not mine for i in c]
    return DisconnectionError(msg, ([graph.labels[i] for i in mine], [graph.labels[i] for i in sorted(rest)]))


def find_chain(graph: OverlapGraph, source, target) -> Chain:
    """Shortest chain from ``source`` to ``target`` (labels) by breadth-first search.

    Neighbours are visited in node order, which fixes ties.  A chain from a
    node to itself is that node repeated, so every chain has length >= 2.
    """
    a, b = graph.index(source), graph.index(target)
    path = _bfs(graph, [a], {b})
    if path is None:
        raise _components_error(graph, a, f"no chain joins {source!r} and {target!r}")
    return _make_chain(graph, path)


def chain_between(graph: OverlapGraph, sources: Sequence[int], targets: Sequence[int]) -> Chain | None:
    """Shortest chain starting in any of ``sources`` and ending in any of ``targets``."""
    path = _bfs(graph, sorted(sources), set(targets))
    return None if path is None else _make_chain(graph, path)


# -- connectedness verdict --------------------------------------------------------

class Verdict(enum.Enum):
    CONNECTED = "CONNECTED"
    DISCONNECTED = "DISCONNECTED"
    UNKNOWN = "UNKNOWN"


@dataclass
class VerdictReport:
    verdict: Verdict
    gap: float
    partition: tuple = ((), ())
    pieces: list = field(default_factory=list, repr=False)

    def line(self) -> str:
        if self.verdict is Verdict.DISCONNECTED:
            return f"DISCONNECTED gap={self.gap!r}"
        return self.verdict.value


def level_one_pieces(S: Gifs, A: AttractorApprox, policy: SamplingPolicy | None = None,
                     cache: CylinderCache | None = None) -> list[tuple[FiniteCode, CompactSetApprox]]:
    """The pieces f_i(A x ... x A), labelled by their one-level codes."""
    pol = policy or SamplingPolicy()
    cache = CylinderCache() if cache is None else cache
    out = []
    for i in range(1, S.n + 1):
        code = FiniteCode((i,), S.order, check=False)
        out.append((code, cylinder_set(S, A, code, pol.max_evals, pol.seed, cache=cache)))
    return out


def default_threshold(A: AttractorApprox, sets: Sequence[CompactSetApprox] = ()) -> float:
    """2 (error bound + resolution), raised to twice any piece's own resolution."""
    base = 2.0 * (A.error_bound + A.cloud.resolution)
    return max([base] + [2.0 * s.resolution for s in sets]) * (1 + 1e-9)


def _largest_mst_edge(sets: Sequence[CompactSetApprox]) -> tuple[float, list[int]]:
    """Largest edge of a minimum spanning tree on min-distances (Prim).

    That edge is the widest gap over all bipartitions; also returns the
    side of the cut it spans that contains node 0.
    """
    k = len(sets)
    if k == 1:
        return 0.0, [0]
    dist = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            dist[i, j] = dist[j, i] = closest_pair(sets[i], sets[j])[0]
    in_tree = [0]
    best = dist[0].copy()
    parent = [0] * k
    tree_edges = []
    remaining = set(range(1, k))
    while remaining:
        v = min(remaining, key=lambda u: (best[u], u))
        tree_edges.append((best[v], parent[v], v))
        remaining.discard(v)
        in_tree.append(v)
        for u in remaining:
            if dist[v, u] < best[u]:
                best[u] = dist[v, u]
                parent[u] = v
    gap, a, b = max(tree_edges, key=lambda e: e[0])
    # side containing node 0 after cutting (a, b)
    adj: dict[int, list[int]] = {i: [] for i in range(k)}
    for _, u, v in tree_edges:
        if {u, v} != {a, b}:
            adj[u].append(v)
            adj[v].append(u)
    side, stack = {0}, [0]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in side:
                side.add(v)
                stack.append(v)
    return float(gap), sorted(side)


def connectedness_verdict(S: Gifs, A: AttractorApprox, eps_connect: float | None = None,
                          eps_separate: float | None = None, *, policy: SamplingPolicy | None = None,
                          pieces=None) -> VerdictReport:
    """Decide whether the level-one pieces f_i(A^m) form a connected family.

    CONNECTED when the overlap graph at ``eps_connect`` is connected,
    DISCONNECTED when some bipartition of the pieces is separated by more
    than ``eps_separate``, UNKNOWN in between.
    """
    pieces = pieces if pieces is not None else level_one_pieces(S, A, policy)
    sets = [p for _, p in pieces]
    floor = default_threshold(A, sets)
    eps_connect = floor if eps_connect is None else eps_connect
    eps_separate = max(floor, eps_connect) if eps_separate is None else eps_separate
    if not 0 <= eps_connect <= eps_separate:
        raise UsageError(f"need 0 <= eps_connect <= eps_separate, got {eps_connect}, {eps_separate}")
    if eps_separate < 2.0 * (A.error_bound + A.cloud.resolution):
        raise UsageError(f"eps_separate={eps_separate:.3g} is below the resolution floor "
                         f"{2.0 * (A.error_bound + A.cloud.resolution):.3g}; a separation verdict would be unsound")
    gap, side = _largest_mst_edge(sets)
    labels = [lab for lab, _ in pieces]
    if gap <= eps_connect:
        return VerdictReport(Verdict.CONNECTED, gap, pieces=pieces)
    if gap > eps_separate:
        other = [i for i in range(len(sets)) if i not in side]
        return VerdictReport(Verdict.DISCONNECTED, gap, ([labels[i] for i in side], [labels[i] for i in other]),
                             pieces)
    return VerdictReport(Verdict.UNKNOWN, gap, pieces=pieces)


def format_verdict(report: VerdictReport) -> str:
    return report.line() + "\n"


# -- proper family ------------------------------------------------------------------

@dataclass(eq=False)
class ProperFamilyApprox:
    """Cylinder clouds indexed by code, level 0 being the attractor itself."""

    root: CompactSetApprox
    levels: list  # levels[k] = dict FiniteCode -> cloud
    max_diameter: list

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    def level(self, k: int) -> list[tuple[FiniteCode, CompactSetApprox]]:
        if not 0 <= k <= self.depth:
            raise UsageError(f"family has levels 0..{self.depth}, asked for {k}")
        return list(self.levels[k].items())


def proper_family_build(S: Gifs, A: AttractorApprox, depth: int, policy: SamplingPolicy | None = None,
                        node_budget: int = NODE_BUDGET, cache: CylinderCache | None = None) -> ProperFamilyApprox:
    if depth < 0:
        raise UsageError("depth must be nonnegative")
    pol = policy or SamplingPolicy()
    cache = CylinderCache() if cache is None else cache
    root_code = FiniteCode((), S.order, check=False)
    root = A.cloud.with_resolution(A.error_bound)
    levels = [{root_code: root}]
    diams = [diameter(root)]
    total = 1
    for k in range(1, depth + 1):
        fan = level_cardinality(S.n, S.order, k)
        total *= fan
        if fan > node_budget or total > node_budget:
            raise ResourceError(f"level {k} needs {total} cylinders ({fan} children per node), budget {node_budget}")
        layer = {}
        for parent in levels[-1]:
            for child in children(parent, S.n, node_budget):
                layer[child] = cylinder_set(S, A, child, pol.max_evals, pol.seed, cache=cache)
        levels.append(layer)
        diams.append(max(diameter(c) for c in layer.values()))
    return ProperFamilyApprox(root, levels, diams)


# -- epsilon chains ---------------------------------------------------------------

def eps_chainable(family, x, y, eps: float, threshold: float) -> Chain:
    """Chain of sets of diameter <= eps from one holding x to one holding y."""
    graph = overlap_graph(family, threshold)
    for lab, s in zip(graph.labels, graph.sets):
        d = diameter(s)
        if d > eps:
            raise UsageError(f"set {lab!r} has diameter {d:.6g} > eps={eps:.6g}; pick a deeper level")
    src = [i for i, s in enumerate(graph.sets) if distance_to_point(s, x) <= threshold]
    dst = [i for i, s in enumerate(graph.sets) if distance_to_point(s, y) <= threshold]
    if not src or not dst:
        raise UsageError("point lies farther than the threshold from every set of the family")
    chain = chain_between(graph, src, dst)
    if chain is None:
        raise _components_error(graph, src[0], "points lie in different chain components")
    return chain


# -- arcs -------------------------------------------------------------------------

@dataclass(eq=False)
class ArcLevel:
    division: list  # Fractions, 0 .. 1
    points: np.ndarray
    tags: list  # code of the set holding each interval
    a_n: float

    @property
    def mesh(self) -> Fraction:
        return max(b - a for a, b in zip(self.division, self.division[1:]))


@dataclass(eq=False)
class ArcApprox:
    division: list
    points: np.ndarray
    level: int
    quality: float
    history: list
    endpoint_bounds: tuple
    flags: list = field(default_factory=list)

    @property
    def mesh(self) -> Fraction:
        return self.history[-1].mesh


def build_arc(S: Gifs, A: AttractorApprox, x_code: CodeSpec, y_code: CodeSpec, max_level: int,
              threshold: float | None = None, *, policy: SamplingPolicy | None = None, code_depth: int = 20,
              node_budget: int = NODE_BUDGET, cache: CylinderCache | None = None) -> ArcApprox:
    """Refine a polyline from g(x_code) to g(y_code) through nested cylinder chains.

    Level 0 is the division {0, 1} tagged with the whole attractor.  At each
    refinement the set D tagging an interval is replaced by a shortest chain
    D_1, ..., D_L (L >= 2) of its children joining the two endpoint images;
    the interval is cut into L equal parts whose interior nodes get the
    junction points of consecutive chain members.  Old nodes keep their
    points, so each level restricts to the previous one exactly.
    """
    if max_level < 0:
        raise UsageError("max_level must be nonnegative")
    pol = policy or SamplingPolicy()
    cache = CylinderCache() if cache is None else cache
    root_code = FiniteCode((), S.order, check=False)
    base = diagonal(np.zeros(S.dim), S.order)
    px, bx = coding_point(S, x_code, code_depth, base)
    py, by = coding_point(S, y_code, code_depth, base)

    pieces = level_one_pieces(S, A, pol, cache)
    thr = default_threshold(A, [p for _, p in pieces]) if threshold is None else float(threshold)
    top = overlap_graph(pieces, thr)
    if not top.connected:
        raise _components_error(top, 0, "level-one pieces are not connected; no arc can be built")

    def cyl(code: FiniteCode) -> CompactSetApprox:
        if len(code) == 0:
            return A.cloud.with_resolution(A.error_bound)
        return cylinder_set(S, A, code, pol.max_evals, pol.seed, cache=cache)

    current = ArcLevel([Fraction(0), Fraction(1)], np.stack([px, py]), [root_code], diameter(cyl(root_code)))
    history = [current]
    flags: list[str] = []
    family_cache: dict = {}
    for n in range(1, max_level + 1):
        division = [current.division[0]]
        points = [current.points[0]]
        tags = []
        for j, parent in enumerate(current.tags):
            a, b = current.points[j], current.points[j + 1]
            graph = family_cache.get(parent)
            if graph is None:
                kids = [(c, cyl(c)) for c in children(parent, S.n, node_budget)]
                graph = overlap_graph(kids, thr)
                family_cache[parent] = graph
                pset = cyl(parent)
                for c, s in kids:
                    spill = directed_hausdorff(pset, s)
                    if spill > s.resolution + pset.resolution:
                        flags.append(f"level {n}: {format_code(c)} leaves its parent by {spill:.3g}")
            src = [i for i, s in enumerate(graph.sets) if distance_to_point(s, a) <= thr]
            dst = [i for i, s in enumerate(graph.sets) if distance_to_point(s, b) <= thr]
            chain = chain_between(graph, src, dst) if src and dst else None
            if chain is None:
                name = format_code(parent) or "<root>"
                raise ConstructionError(f"children of {name} do not chain {a.tolist()} to {b.tolist()}",
                                        node=parent,
                                        components=tuple(map(tuple, _split(graph, src))))
            if chain.nodes[0] == chain.nodes[-1] and len(chain) == 2:
                s = graph.sets[chain.nodes[0]]
                chain.witnesses = [nearest_point(s, 0.5 * (a + b))]
            L = len(chain)
            y0, y1 = current.division[j], current.division[j + 1]
            for t in range(1, L):
                division.append(y0 + (y1 - y0) * Fraction(t, L))
                points.append(chain.witnesses[t - 1])
            division.append(y1)
            points.append(b)
            tags.extend(chain.labels)
        a_n = max(diameter(cyl(t)) for t in set(tags))
        slack = 2.0 * max(cyl(t).resolution for t in set(tags))
        if a_n > current.a_n + slack:
            raise ConsistencyError(f"piece diameter grew from {current.a_n:.6g} to {a_n:.6g} at level {n}")
        current = ArcLevel(division, np.stack(points), tags, a_n)
        history.append(current)
        log.debug("arc level %d: %d intervals, a_n=%.4g", n, len(tags), a_n)
    return ArcApprox(current.division, current.points, max_level, current.a_n, history, (bx, by), flags)


def _split(graph: OverlapGraph, src: Sequence[int]):
    comps = graph.components()
    mine = [i for c in comps if any(s in c for s in src) for i in c]
    rest = [i for i in range(len(graph)) if i not in mine]
    return [format_code(graph.labels[i]) for i in mine], [format_code(graph.labels[i]) for i in rest]


def format_arc(arc: ArcApprox) -> str:
    lines = [f"# level={arc.level} a_n={arc.quality!r}"]
    for y, p in zip(arc.division, arc.points):
        lines.append(",".join([repr(float(y))] + [repr(float(c)) for c in p]))
    return "\n".join(lines) + "\n"


def arc_spread(arc: ArcApprox) -> float:
    """Largest distance between consecutive polyline nodes."""
    pts = arc.points
    return float(np.sqrt(((pts[1:] - pts[:-1]) ** 2).sum(axis=1)).max()) if len(pts) > 1 else 0.0
