"""Hierarchical code space, shift maps, the map family f_alpha and cylinder sets.

A level-j tree (an element of Omega_j) is a bare int symbol for j = 1 and
an m-tuple of level-(j-1) trees otherwise.  Constant trees are cached so
deep codes padded with one symbol share structure and stay cheap.
"""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Iterator, Sequence, Union

import numpy as np

from .core import (AttractorApprox, Gifs, SamplingPolicy, a_priori_error, absorbing_ball,
                   image_of_product)
from .errors import ResourceError, UsageError
from .geometry import CompactSetApprox, as_tuple, diameter, euclid

Tree = Union[int, tuple]


# -- trees ------------------------------------------------------------------

@lru_cache(maxsize=None)
def constant_tree(symbol: int, m: int, level: int) -> Tree:
    """The level-``level`` tree with every leaf equal to ``symbol``."""
    if level < 1:
        raise UsageError("tree levels start at 1")
    if level == 1:
        return symbol
    sub = constant_tree(symbol, m, level - 1)
    return (sub,) * m


def check_tree(t: Tree, level: int, m: int, n: int | None = None, _seen: dict | None = None) -> None:
    """Raise UsageError unless ``t`` is a complete m-ary tree of the given level."""
    seen = {} if _seen is None else _seen
    key = (id(t), level)
    if key in seen:
        return
    if level == 1:
        if isinstance(t, bool) or not isinstance(t, (int, np.integer)):
            raise UsageError(f"expected a symbol at the leaves, got {t!r}")
        if t < 1 or (n is not None and t > n):
            raise UsageError(f"symbol {t} outside 1..{n if n is not None else 'n'}")
    else:
        if not isinstance(t, tuple) or len(t) != m:
            raise UsageError(f"level-{level} tree must be an {m}-tuple, got {_short(t)}")
        for sub in t:
            check_tree(sub, level - 1, m, n, seen)
    seen[key] = t


def _short(t) -> str:
    s = repr(t)
    return s if len(s) < 60 else s[:57] + "..."


def leaves(t: Tree) -> Iterator[int]:
    if isinstance(t, tuple):
        for sub in t:
            yield from leaves(sub)
    else:
        yield int(t)


def level_cardinality(n: int, m: int, k: int) -> int:
    """|Omega_k| = n ** (m ** (k - 1))."""
    if n < 1 or m < 1:
        raise UsageError("n and m must be positive")
    if k < 1:
        raise UsageError("code levels start at 1")
    return n ** (m ** (k - 1))


def enumerate_level(n: int, m: int, k: int) -> Iterator[Tree]:
    """All elements of Omega_k in lexicographic order."""
    if k < 1:
        raise UsageError("code levels start at 1")
    if k == 1:
        yield from range(1, n + 1)
        return
    subs = list(enumerate_level(n, m, k - 1))
    yield from itertools.product(subs, repeat=m)


def random_tree(rng: np.random.Generator, n: int, m: int, level: int) -> Tree:
    if level == 1:
        return int(rng.integers(1, n + 1))
    syms = rng.integers(1, n + 1, size=m ** (level - 1)).tolist()
    return _build(iter(syms), m, level)


def _build(syms, m: int, level: int) -> Tree:
    if level == 1:
        return next(syms)
    return tuple(_build(syms, m, level - 1) for _ in range(m))


# -- codes ------------------------------------------------------------------------

class FiniteCode:
    """An element (alpha^1, ..., alpha^k) of Omega^k."""

    __slots__ = ("levels", "m", "_key")

    def __init__(self, levels: Sequence[Tree], m: int, n: int | None = None, check: bool = True):
        levels = tuple(levels)
        if m < 1:
            raise UsageError("order m must be positive")
        if check:
            seen: dict = {}
            for j, t in enumerate(levels, start=1):
                check_tree(t, j, m, n, seen)
        self.levels = levels
        self.m = m
        self._key = None

    def __len__(self) -> int:
        return len(self.levels)

    def level(self, j: int) -> Tree:
        if not 1 <= j <= len(self.levels):
            raise UsageError(f"code of length {len(self.levels)} has no level {j}")
        return self.levels[j - 1]

    def truncate(self, k: int) -> "FiniteCode":
        if k < 0 or k > len(self.levels):
            raise UsageError(f"cannot truncate a length-{len(self.levels)} code to {k}")
        return FiniteCode(self.levels[:k], self.m, check=False)

    def extend(self, tree: Tree) -> "FiniteCode":
        check_tree(tree, len(self.levels) + 1, self.m)
        return FiniteCode(self.levels + (tree,), self.m, check=False)

    def sort_key(self) -> tuple:
        if self._key is None:
            self._key = tuple(s for t in self.levels for s in leaves(t))
        return self._key

    def __eq__(self, other):
        return isinstance(other, FiniteCode) and self.m == other.m and self.levels == other.levels

    def __hash__(self):
        return hash((self.m, self.levels))

    def __lt__(self, other):
        return (len(self), self.sort_key()) < (len(other), other.sort_key())

    def __repr__(self):
        return f"FiniteCode({format_code(self)!r}, m={self.m})"


class CodeSpec:
    """Infinite code: a finite prefix followed by constant trees of ``pad``."""

    __slots__ = ("prefix", "pad")

    def __init__(self, prefix: FiniteCode, pad: int):
        if isinstance(pad, bool) or int(pad) != pad or pad < 1:
            raise UsageError(f"padding symbol must be a positive integer, got {pad!r}")
        self.prefix = prefix
        self.pad = int(pad)

    @classmethod
    def constant(cls, symbol: int, m: int) -> "CodeSpec":
        return cls(FiniteCode((), m), symbol)

    @property
    def m(self) -> int:
        return self.prefix.m

    def level(self, j: int) -> Tree:
        if j < 1:
            raise UsageError("code levels start at 1")
        if j <= len(self.prefix):
            return self.prefix.levels[j - 1]
        return constant_tree(self.pad, self.m, j)

    def truncate(self, k: int) -> FiniteCode:
        if k < 0:
            raise UsageError("truncation length must be nonnegative")
        return FiniteCode(tuple(self.level(j) for j in range(1, k + 1)), self.m, check=False)

    def __eq__(self, other):
        if not isinstance(other, CodeSpec) or other.m != self.m:
            return False
        k = max(len(self.prefix), len(other.prefix)) + 1
        return self.pad == other.pad and self.truncate(k) == other.truncate(k)

    def __hash__(self):
        return hash((self.m, self.pad))

    def __repr__(self):
        return f"CodeSpec({format_code(self)!r})"


AnyCode = Union[FiniteCode, CodeSpec]


def _length(code: AnyCode) -> float:
    return len(code) if isinstance(code, FiniteCode) else math.inf


def random_code(rng: np.random.Generator, n: int, m: int, k: int) -> FiniteCode:
    return FiniteCode(tuple(random_tree(rng, n, m, j) for j in range(1, k + 1)), m, check=False)


def random_codespec(rng: np.random.Generator, n: int, m: int, max_prefix: int) -> CodeSpec:
    k = int(rng.integers(0, max_prefix + 1))
    return CodeSpec(random_code(rng, n, m, k), int(rng.integers(1, n + 1)))


# -- shift maps and projections ------------------------------------------------------

def tau_apply(i: int, args: Sequence[AnyCode], out_depth: int) -> FiniteCode:
    """tau_i(alpha_1..alpha_m) truncated to ``out_depth`` levels.

    Level 1 is ``i``; level j+1 is the m-tuple of the arguments' level j.
    """
    if out_depth < 1:
        raise UsageError("out_depth must be at least 1")
    args = list(args)
    if not args:
        raise UsageError("tau needs m arguments")
    m = args[0].m
    if len(args) != m or any(a.m != m for a in args):
        raise UsageError(f"tau of order {m} needs {m} arguments of the same order")
    if isinstance(i, bool) or int(i) != i or i < 1:
        raise UsageError(f"tau index must be a positive symbol, got {i!r}")
    if any(_length(a) < out_depth - 1 for a in args):
        raise UsageError(f"arguments too short for output depth {out_depth}")
    levels = [int(i)] + [tuple(a.level(j) for a in args) for j in range(1, out_depth)]
    return FiniteCode(levels, m, check=False)


def project(alpha: AnyCode, i: int):
    """alpha(i) = (alpha^2_i, ..., alpha^k_i), the i-th branch below level 1."""
    if not 1 <= i <= alpha.m:
        raise UsageError(f"branch index {i} outside 1..{alpha.m}")
    if isinstance(alpha, CodeSpec):
        head = alpha.prefix
        sub = project(head, i) if len(head) >= 2 else FiniteCode((), alpha.m)
        return CodeSpec(sub, alpha.pad)
    if len(alpha) < 2:
        raise UsageError("projection needs a code of length at least 2")
    return FiniteCode(tuple(t[i - 1] for t in alpha.levels[1:]), alpha.m, check=False)


def tau_alpha_apply(alpha: FiniteCode, args, out_depth: int) -> FiniteCode:
    """tau_alpha(beta) = tau_{alpha^1}(tau_{alpha(1)}(beta_1), ..., tau_{alpha(m)}(beta_m)).

    ``args`` is an m-ary nest of depth len(alpha) with codes at the bottom.
    """
    k = len(alpha)
    if k < 1:
        raise UsageError("tau_alpha needs a nonempty code")
    if out_depth < 1:
        raise UsageError("out_depth must be at least 1")
    if not isinstance(args, (tuple, list)) or len(args) != alpha.m:
        raise UsageError(f"argument nest must have {alpha.m} branches at every level")
    if k == 1:
        if not all(isinstance(a, (FiniteCode, CodeSpec)) for a in args):
            raise UsageError("argument nest is deeper than the code")
        return tau_apply(alpha.level(1), args, out_depth)
    if out_depth == 1:
        return FiniteCode((alpha.level(1),), alpha.m, check=False)
    inner = [tau_alpha_apply(project(alpha, j), args[j - 1], out_depth - 1) for j in range(1, alpha.m + 1)]
    return tau_apply(alpha.level(1), inner, out_depth)


@dataclass(frozen=True)
class CodeDistance:
    """The code distance lies in [partial, partial + tail]."""

    partial: Fraction
    tail: Fraction

    @property
    def lower(self) -> Fraction:
        return self.partial

    @property
    def upper(self) -> Fraction:
        return self.partial + self.tail

    def __float__(self):
        return float(self.partial)


def tail_mass(m: int, horizon: int) -> Fraction:
    """sum_{i > K} (m+1)^-i = (m+1)^-K / m."""
    return Fraction(1, m * (m + 1) ** horizon)


def code_distance(alpha: AnyCode, beta: AnyCode, horizon: int) -> CodeDistance:
    """sum_i d_i(alpha^i, beta^i) / (m+1)^i with d_i discrete, to ``horizon`` levels.

    When both codes are padded specs and the horizon passes both prefixes
    the remainder is known exactly and folded into ``partial``.
    """
    if alpha.m != beta.m:
        raise UsageError("codes have different orders")
    if horizon < 0:
        raise UsageError("horizon must be nonnegative")
    m = alpha.m
    K = int(min(horizon, _length(alpha), _length(beta)))
    partial = Fraction(0)
    for j in range(1, K + 1):
        if alpha.level(j) != beta.level(j):
            partial += Fraction(1, (m + 1) ** j)
    if isinstance(alpha, CodeSpec) and isinstance(beta, CodeSpec):
        if K >= max(len(alpha.prefix), len(beta.prefix)):
            if alpha.pad != beta.pad:
                partial += tail_mass(m, K)
            return CodeDistance(partial, Fraction(0))
    return CodeDistance(partial, tail_mass(m, K))


# -- map family ---------------------------------------------------------------------

@dataclass(frozen=True)
class ReplicatedTuple:
    """x^k with x^1 = x and x^{k+1} = (x^k, ..., x^k)."""

    base: np.ndarray
    depth: int

    def __post_init__(self):
        if self.depth < 1:
            raise UsageError("replication depth must be at least 1")


def max_symbol(levels) -> int:
    """Largest leaf symbol, visiting shared subtrees once."""
    seen = set()
    top = 0
    stack = list(levels)
    while stack:
        t = stack.pop()
        if isinstance(t, tuple):
            if id(t) not in seen:
                seen.add(id(t))
                stack.extend(t)
        else:
            top = max(top, int(t))
    return top


def _check_symbols(S: Gifs, alpha: FiniteCode) -> None:
    if alpha.m != S.order:
        raise UsageError(f"code of order {alpha.m} used with a GIFS of order {S.order}")
    top = max_symbol(alpha.levels)
    if top > S.n:
        raise UsageError(f"code uses symbol {top} but the GIFS has {S.n} maps")


def f_alpha_eval(S: Gifs, alpha: FiniteCode, x) -> np.ndarray:
    """f_alpha(x^k) = f_{alpha^1}(f_{alpha(1)}(x^{k-1}), ..., f_{alpha(m)}(x^{k-1})).

    ``x`` is a ReplicatedTuple of depth len(alpha) or a bare m-tuple,
    which is replicated to the code's length.
    """
    if isinstance(x, ReplicatedTuple):
        if x.depth != len(alpha):
            raise UsageError(f"tuple depth {x.depth} does not match code length {len(alpha)}")
        base = x.base
    else:
        base = x
    if len(alpha) < 1:
        raise UsageError("f_alpha needs a code of length at least 1")
    _check_symbols(S, alpha)
    base = as_tuple(base, S.order, S.dim)
    memo: dict = {}

    def ev(levels: tuple) -> np.ndarray:
        key = tuple(map(id, levels))
        hit = memo.get(key)
        if hit is not None:
            return hit
        f = S.maps[levels[0] - 1]
        if len(levels) == 1:
            val = f(base)
        else:
            args = [ev(tuple(t[j] for t in levels[1:])) for j in range(S.order)]
            val = f(np.stack(args))
        memo[key] = val
        return val

    return ev(alpha.levels)


def f_alpha_batch(S: Gifs, alpha: FiniteCode, leaves_pts: np.ndarray) -> np.ndarray:
    """Evaluate f_alpha on a batch of general points of X_k.

    ``leaves_pts`` has shape (N, m**k, d): the m**k base points of each
    element of X_k in depth-first order.
    """
    k, m = len(alpha), S.order
    if leaves_pts.ndim != 3 or leaves_pts.shape[1] != m**k:
        raise UsageError(f"expected leaves of shape (N, {m**k}, d)")

    def ev(levels: tuple, pts: np.ndarray) -> np.ndarray:
        f = S.maps[levels[0] - 1]
        if len(levels) == 1:
            return f.apply_batch(pts)
        w = pts.shape[1] // m
        args = [ev(tuple(t[j] for t in levels[1:]), pts[:, j * w:(j + 1) * w]) for j in range(m)]
        return f.apply_batch(np.stack(args, axis=1))

    return ev(alpha.levels, leaves_pts)


def _ball_diameter(S: Gifs, pts: np.ndarray) -> float:
    center, radius = absorbing_ball(S)
    far = max(float(np.linalg.norm(p - center)) for p in pts) if len(pts) else 0.0
    pair = 0.0
    for a, b in itertools.combinations(pts, 2):
        pair = max(pair, euclid(a, b))
    return max(2.0 * radius, far + radius, pair)


def coding_point(S: Gifs, alpha: AnyCode, k: int, x) -> tuple[np.ndarray, float]:
    """Approximate the coded point x_alpha by f_{alpha|k}(x^k).

    The bound phi^k(diam(K)), with K the absorbing ball together with the
    components of x, caps the distance to the true coded point.
    """
    if k < 1:
        raise UsageError("depth must be at least 1")
    if _length(alpha) < k:
        raise UsageError(f"code of length {len(alpha)} cannot be evaluated at depth {k}")
    x = as_tuple(x, S.order, S.dim)
    code = alpha.truncate(k)
    point = f_alpha_eval(S, code, x)
    bound = a_priori_error(S.phi, _ball_diameter(S, x), k)
    return point, bound


def diagonal(point, m: int) -> np.ndarray:
    """The tuple (p, ..., p)."""
    p = np.atleast_1d(np.asarray(point, dtype=float))
    return np.broadcast_to(p, (m, p.size)).copy()


# -- cylinders ---------------------------------------------------------------------

class CylinderCache(dict):
    """Memo of cylinder clouds keyed by code, valid for one (S, A, policy)."""


def _policy_for(A: AttractorApprox, sample_count: int, rng_seed: int, cell: float | None) -> SamplingPolicy:
    return SamplingPolicy(max_evals=sample_count, cell=cell if cell is not None else A.cell, seed=rng_seed)


def cylinder_set(S: Gifs, A: AttractorApprox, alpha: FiniteCode, sample_count: int = 10**7, rng_seed: int = 0, *,
                 method: str = "recursive", cell: float | None = None,
                 cache: CylinderCache | None = None) -> CompactSetApprox:
    """Approximate A_alpha = f_alpha(A_k).

    The default method uses A_alpha = f_{alpha^1}(A_{alpha(1)} x ... x A_{alpha(m)})
    recursively, decimating every intermediate cloud onto the grid; the
    declared resolution then follows from propagating the attractor's error
    bound through phi once per level.  ``method="leafwise"`` instead draws
    ``sample_count`` independent points of A^(m^k) and evaluates f_alpha on
    them, declaring the worst-case bound phi^k(diam A) as resolution.
    """
    if len(alpha) == 0:
        return A.cloud.with_resolution(A.error_bound)
    _check_symbols(S, alpha)
    if sample_count < 1:
        raise UsageError("sample_count must be at least 1")
    if method == "leafwise":
        return _cylinder_leafwise(S, A, alpha, sample_count, rng_seed)
    if method != "recursive":
        raise UsageError(f"unknown cylinder method {method!r}")
    policy = _policy_for(A, sample_count, rng_seed, cell)
    memo = CylinderCache() if cache is None else cache
    base = A.cloud.with_resolution(A.error_bound)

    def cyl(levels: tuple) -> CompactSetApprox:
        hit = memo.get(levels)
        if hit is not None:
            return hit
        if len(levels) == 1:
            kids = [base] * S.order
        else:
            kids = [cyl(tuple(t[j] for t in levels[1:])) for j in range(S.order)]
        out, _ = image_of_product([S.maps[levels[0] - 1]], S.phi, kids, policy)
        memo[levels] = out
        return out

    return cyl(alpha.levels)


def _cylinder_leafwise(S: Gifs, A: AttractorApprox, alpha: FiniteCode, count: int, seed: int) -> CompactSetApprox:
    k, m = len(alpha), S.order
    width = m**k
    if width * count > 5 * 10**7:
        raise ResourceError(f"leafwise sampling needs {width * count} leaf draws")
    rng = np.random.default_rng(seed)
    pts = A.cloud.points
    idx = rng.integers(0, len(pts), size=(count, width))
    img = f_alpha_batch(S, alpha, pts[idx])
    slack = a_priori_error(S.phi, diameter(A.cloud) + 2 * A.error_bound, k)
    return CompactSetApprox(img, slack)


def children(alpha: FiniteCode, n: int, budget: int = 10**5) -> Iterator[FiniteCode]:
    """All codes alpha^beta with beta in Omega_{k+1}, lowest symbols first."""
    k = len(alpha)
    count = level_cardinality(n, alpha.m, k + 1)
    if count > budget:
        raise ResourceError(f"node {format_code(alpha) or '<root>'} has {count} children (budget {budget})")
    for beta in enumerate_level(n, alpha.m, k + 1):
        yield FiniteCode(alpha.levels + (beta,), alpha.m, check=False)


def recover_code(S: Gifs, cloud: CompactSetApprox, p, depth: int, max_evals: int = 4 * 10**6):
    """Greedy address of ``p``: pick the lowest (i, tuple) with f_i(tuple) nearest p, recurse.

    Mirrors choosing x = f_i(x_1, ..., x_m) with all x_j in A and coding
    each x_j in turn.  Returns the code and the largest single-step miss.
    """
    pts = cloud.points
    m, N = S.order, len(pts)
    total = N**m
    if total * S.n > max_evals:
        raise ResourceError(f"preimage search over {total} tuples exceeds the budget")
    flat = np.arange(total)
    idx = np.stack(np.unravel_index(flat, (N,) * m), axis=1)
    tuples = pts[idx]
    images = np.stack([f.apply_batch(tuples) for f in S.maps])  # (n, total, d)
    miss = 0.0

    def step(q: np.ndarray, k: int) -> list:
        nonlocal miss
        dist = np.sqrt(((images - q) ** 2).sum(axis=2))
        flat_best = int(np.argmin(dist))  # argmin picks the first, i.e. lowest symbol
        i, t = divmod(flat_best, total)
        miss = max(miss, float(dist[i, t]))
        node = [i + 1]
        if k > 1:
            node.append([step(pts[idx[t, j]], k - 1) for j in range(m)])
        return node

    tree = step(np.asarray(p, dtype=float), depth)

    levels: list = []
    for j in range(1, depth + 1):
        levels.append(_nth_level(tree, j))
    return FiniteCode(levels, m, check=False), miss


def _nth_level(node, j):
    if j == 1:
        return node[0]
    subs = [_nth_level(c, j - 1) for c in node[1]]
    return tuple(subs)


# -- literals ----------------------------------------------------------------------

def format_tree(t: Tree) -> str:
    if isinstance(t, tuple):
        return "(" + ",".join(format_tree(s) for s in t) + ")"
    return str(int(t))


def format_code(code: AnyCode) -> str:
    if isinstance(code, CodeSpec):
        return f"{format_code(code.prefix)}|pad={code.pad}"
    return ";".join(format_tree(t) for t in code.levels)


_WS = re.compile(r"\s+")


def _parse_tree(s: str, pos: int) -> tuple[Tree, int]:
    if pos >= len(s):
        raise UsageError("unexpected end of code literal")
    if s[pos] == "(":
        items = []
        pos += 1
        while True:
            item, pos = _parse_tree(s, pos)
            items.append(item)
            if pos < len(s) and s[pos] == ",":
                pos += 1
                continue
            if pos < len(s) and s[pos] == ")":
                return tuple(items), pos + 1
            raise UsageError(f"expected ',' or ')' at position {pos} of code literal")
    j = pos
    while j < len(s) and s[j].isdigit():
        j += 1
    if j == pos:
        raise UsageError(f"expected a symbol at position {pos} of code literal")
    return int(s[pos:j]), j


def parse_tree(text: str) -> Tree:
    s = _WS.sub("", text)
    t, pos = _parse_tree(s, 0)
    if pos != len(s):
        raise UsageError(f"trailing characters at position {pos} of code literal")
    return t


def _infer_order(levels) -> int | None:
    for t in levels:
        if isinstance(t, tuple):
            return len(t)
    return None


def parse_code(text: str, m: int | None = None, n: int | None = None) -> AnyCode:
    """Parse "a1;a2;..." or "a1;...|pad=s" (the prefix may be empty)."""
    s = _WS.sub("", text)
    pad = None
    if "|" in s:
        s, _, rest = s.partition("|")
        if not rest.startswith("pad="):
            raise UsageError("code padding must read '|pad=<symbol>'")
        try:
            pad = int(rest[4:])
        except ValueError:
            raise UsageError(f"bad padding symbol {rest[4:]!r}") from None
        if pad < 1 or (n is not None and pad > n):
            raise UsageError(f"padding symbol {pad} outside 1..{n if n is not None else 'n'}")
    levels = [parse_tree(part) for part in s.split(";")] if s else []
    if pad is None and not levels:
        raise UsageError("empty code literal")
    order = m if m is not None else _infer_order(levels)
    if order is None:
        raise UsageError("cannot infer the order of a code without tuples; pass m")
    code = FiniteCode(levels, order, n)
    return CodeSpec(code, pad) if pad is not None else code
