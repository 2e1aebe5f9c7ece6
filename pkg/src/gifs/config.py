"""JSON run configuration: parsing, validation and serialisation.

Schema (all numbers finite; optional keys may be omitted)::

    {
      "dimension": 1,                      # d
      "order": 2,                          # m
      "maps": [{"matrices": [[[0.25]], [[0.25]]], "offset": [0.0]}, ...],
      "phi": {"kind": "linear", "rate": 0.5}
           | {"kind": "tabulated", "samples": [[t, v], ...]},
      "iteration": {"tol": 1e-4, "max_iter": 200, "cell": 1e-3},
      "seed_cloud": {"lo": [0.0], "hi": [1.0], "spacing": 1e-3},   # optional
      "budgets": {"max_evals": 10000000, "cylinder_evals": 10000000,
                  "node_budget": 100000},
      "seed": 0,
      "thresholds": {"eps_connect": null, "eps_separate": null, "chain": null},
      "render": {"lo": [0, 0], "hi": [1, 1], "width": 256, "height": 256}
    }

Without ``seed_cloud`` the iteration starts from the single point at the
origin.  Null thresholds fall back to the resolution-based defaults.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Any

import numpy as np

from .core import AffineMap, Gifs, LinearPhi, SamplingPolicy, TabulatedPhi
from .errors import UsageError
from .geometry import CompactSetApprox, box_grid, singleton

# fixed stream offsets for the seeded generators of each subsystem
STREAM_ATTRACTOR = 0
STREAM_CYLINDER = 1
STREAM_CONTRACTION = 2
STREAM_VERIFY = 3


@dataclass(frozen=True)
class RenderWindow:
    lo: tuple
    hi: tuple
    width: int = 256
    height: int = 256


@dataclass(frozen=True)
class RunConfig:
    dimension: int
    order: int
    maps: tuple  # ((matrices as nested tuples, offset tuple), ...)
    phi: dict
    tol: float = 1e-4
    max_iter: int = 200
    cell: float = 1e-3
    seed_cloud: dict | None = None
    max_evals: int = 10**7
    cylinder_evals: int = 10**7
    node_budget: int = 10**5
    seed: int = 0
    eps_connect: float | None = None
    eps_separate: float | None = None
    chain_threshold: float | None = None
    render: RenderWindow | None = None

    def gifs(self) -> Gifs:
        maps = tuple(AffineMap(np.array(mats), np.array(off)) for mats, off in self.maps)
        if self.phi["kind"] == "linear":
            phi = LinearPhi(self.phi["rate"])
        else:
            phi = TabulatedPhi(tuple(tuple(s) for s in self.phi["samples"]))
        return Gifs(self.order, maps, phi)

    def stream_seed(self, stream: int) -> int:
        """Seed for one subsystem, split off the run seed by a fixed stream index."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(stream,))
        return int(ss.generate_state(1, dtype=np.uint64)[0])

    def policy(self, stream: int = STREAM_ATTRACTOR, cylinder: bool = False) -> SamplingPolicy:
        budget = self.cylinder_evals if cylinder else self.max_evals
        return SamplingPolicy(max_evals=budget, cell=None, seed=self.stream_seed(stream))

    def seeds(self) -> CompactSetApprox:
        if self.seed_cloud is None:
            return singleton(np.zeros(self.dimension))
        sc = self.seed_cloud
        return box_grid(sc["lo"], sc["hi"], sc["spacing"])

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=seed)


def _reject_constant(name: str):
    raise UsageError(f"non-finite literal {name} is not allowed")


def _err(path: str, msg: str) -> UsageError:
    return UsageError(f"{path}: {msg}")


def _number(v: Any, path: str, *, positive: bool = False, nonneg: bool = False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise _err(path, f"expected a number, got {type(v).__name__}")
    x = float(v)
    if not math.isfinite(x):
        raise _err(path, "number is not finite")
    if positive and not x > 0:
        raise _err(path, f"must be positive, got {x}")
    if nonneg and x < 0:
        raise _err(path, f"must be nonnegative, got {x}")
    return x


def _integer(v: Any, path: str, minimum: int | None = None) -> int:
    if isinstance(v, bool):
        raise _err(path, "expected an integer")
    if isinstance(v, float) and v.is_integer():
        v = int(v)
    if not isinstance(v, int):
        raise _err(path, f"expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise _err(path, f"must be at least {minimum}, got {v}")
    return v


def _vector(v: Any, path: str, d: int) -> tuple:
    if not isinstance(v, list) or len(v) != d:
        raise _err(path, f"expected a list of {d} numbers")
    return tuple(_number(x, f"{path}[{i}]") for i, x in enumerate(v))


def _object(v: Any, path: str) -> dict:
    if not isinstance(v, dict):
        raise _err(path, "expected an object")
    return v


def _known(obj: dict, path: str, keys: set) -> None:
    extra = sorted(set(obj) - keys)
    if extra:
        raise _err(f"{path}.{extra[0]}" if path else extra[0], "unknown field")


def _optional(obj: dict, key: str, path: str, **kw):
    v = obj.get(key)
    return None if v is None else _number(v, f"{path}.{key}", **kw)


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON config; errors name the offending field."""
    try:
        raw = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config syntax error at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return config_from_dict(raw)


def config_from_dict(raw: Any) -> RunConfig:
    root = _object(raw, "<root>")
    _known(root, "", {"dimension", "order", "maps", "phi", "iteration", "seed_cloud", "budgets", "seed",
                      "thresholds", "render", "comment"})
    for key in ("dimension", "order", "maps", "phi"):
        if key not in root:
            raise _err(key, "missing required field")
    d = _integer(root["dimension"], "dimension", 1)
    m = _integer(root["order"], "order", 1)

    maps_raw = root["maps"]
    if not isinstance(maps_raw, list) or not maps_raw:
        raise _err("maps", "expected a nonempty list")
    maps = []
    for i, mp in enumerate(maps_raw):
        p = f"maps[{i}]"
        mp = _object(mp, p)
        _known(mp, p, {"matrices", "offset"})
        mats = mp.get("matrices")
        if not isinstance(mats, list) or len(mats) != m:
            got = len(mats) if isinstance(mats, list) else type(mats).__name__
            raise _err(f"{p}.matrices", f"expected {m} matrices (order m={m}), got {got}")
        mtup = []
        for j, a in enumerate(mats):
            q = f"{p}.matrices[{j}]"
            if not isinstance(a, list) or len(a) != d:
                raise _err(q, f"expected a {d}x{d} matrix")
            mtup.append(tuple(_vector(row, f"{q}[{r}]", d) for r, row in enumerate(a)))
        if "offset" not in mp:
            raise _err(f"{p}.offset", "missing required field")
        maps.append((tuple(mtup), _vector(mp["offset"], f"{p}.offset", d)))

    phi_raw = _object(root["phi"], "phi")
    kind = phi_raw.get("kind")
    if kind == "linear":
        _known(phi_raw, "phi", {"kind", "rate"})
        rate = _number(phi_raw.get("rate"), "phi.rate", nonneg=True)
        if rate >= 1:
            raise _err("phi.rate", f"must be below 1, got {rate}")
        phi = {"kind": "linear", "rate": rate}
    elif kind == "tabulated":
        _known(phi_raw, "phi", {"kind", "samples"})
        samples = phi_raw.get("samples")
        if not isinstance(samples, list) or not samples:
            raise _err("phi.samples", "expected a nonempty list of [t, v] pairs")
        pairs = []
        for i, s in enumerate(samples):
            if not isinstance(s, list) or len(s) != 2:
                raise _err(f"phi.samples[{i}]", "expected a [t, v] pair")
            pairs.append((_number(s[0], f"phi.samples[{i}][0]"), _number(s[1], f"phi.samples[{i}][1]")))
        try:
            TabulatedPhi(tuple(pairs))
        except UsageError as exc:
            raise _err("phi.samples", str(exc)) from None
        phi = {"kind": "tabulated", "samples": tuple(pairs)}
    else:
        raise _err("phi.kind", f"expected 'linear' or 'tabulated', got {kind!r}")

    it = _object(root.get("iteration", {}), "iteration")
    _known(it, "iteration", {"tol", "max_iter", "cell"})
    tol = _number(it.get("tol", 1e-4), "iteration.tol", positive=True)
    max_iter = _integer(it.get("max_iter", 200), "iteration.max_iter", 0)
    cell = _number(it.get("cell", 1e-3), "iteration.cell", positive=True)

    seed_cloud = None
    if root.get("seed_cloud") is not None:
        sc = _object(root["seed_cloud"], "seed_cloud")
        _known(sc, "seed_cloud", {"lo", "hi", "spacing"})
        lo = _vector(sc.get("lo"), "seed_cloud.lo", d)
        hi = _vector(sc.get("hi"), "seed_cloud.hi", d)
        if any(b < a for a, b in zip(lo, hi)):
            raise _err("seed_cloud.hi", "lies below seed_cloud.lo")
        seed_cloud = {"lo": lo, "hi": hi,
                      "spacing": _number(sc.get("spacing"), "seed_cloud.spacing", positive=True)}

    bud = _object(root.get("budgets", {}), "budgets")
    _known(bud, "budgets", {"max_evals", "cylinder_evals", "node_budget"})
    max_evals = _integer(bud.get("max_evals", 10**7), "budgets.max_evals", 1)
    cyl_evals = _integer(bud.get("cylinder_evals", 10**7), "budgets.cylinder_evals", 1)
    node_budget = _integer(bud.get("node_budget", 10**5), "budgets.node_budget", 1)

    seed = _integer(root.get("seed", 0), "seed", 0)
    if seed >= 2**64:
        raise _err("seed", "must fit in 64 bits")

    th = _object(root.get("thresholds", {}), "thresholds")
    _known(th, "thresholds", {"eps_connect", "eps_separate", "chain"})
    eps_c = _optional(th, "eps_connect", "thresholds", nonneg=True)
    eps_s = _optional(th, "eps_separate", "thresholds", nonneg=True)
    chain = _optional(th, "chain", "thresholds", nonneg=True)
    if eps_c is not None and eps_s is not None and eps_c > eps_s:
        raise _err("thresholds.eps_connect", "exceeds eps_separate")

    render = None
    if root.get("render") is not None:
        r = _object(root["render"], "render")
        _known(r, "render", {"lo", "hi", "width", "height"})
        lo = _vector(r.get("lo"), "render.lo", d)
        hi = _vector(r.get("hi"), "render.hi", d)
        if any(b <= a for a, b in zip(lo, hi)):
            raise _err("render.hi", "window must have positive extent on every axis")
        render = RenderWindow(lo, hi, _integer(r.get("width", 256), "render.width", 1),
                              _integer(r.get("height", 256), "render.height", 1))

    cfg = RunConfig(d, m, tuple(maps), phi, tol, max_iter, cell, seed_cloud, max_evals, cyl_evals, node_budget,
                    seed, eps_c, eps_s, chain, render)
    cfg.gifs()  # constructor-level checks (shared arity and dimension)
    return cfg


def config_to_dict(cfg: RunConfig) -> dict:
    out: dict = {
        "dimension": cfg.dimension,
        "order": cfg.order,
        "maps": [{"matrices": [[list(row) for row in a] for a in mats], "offset": list(off)}
                 for mats, off in cfg.maps],
        "phi": ({"kind": "linear", "rate": cfg.phi["rate"]} if cfg.phi["kind"] == "linear"
                else {"kind": "tabulated", "samples": [list(s) for s in cfg.phi["samples"]]}),
        "iteration": {"tol": cfg.tol, "max_iter": cfg.max_iter, "cell": cfg.cell},
        "budgets": {"max_evals": cfg.max_evals, "cylinder_evals": cfg.cylinder_evals,
                    "node_budget": cfg.node_budget},
        "seed": cfg.seed,
        "thresholds": {"eps_connect": cfg.eps_connect, "eps_separate": cfg.eps_separate,
                       "chain": cfg.chain_threshold},
    }
    if cfg.seed_cloud is not None:
        sc = cfg.seed_cloud
        out["seed_cloud"] = {"lo": list(sc["lo"]), "hi": list(sc["hi"]), "spacing": sc["spacing"]}
    if cfg.render is not None:
        r = cfg.render
        out["render"] = {"lo": list(r.lo), "hi": list(r.hi), "width": r.width, "height": r.height}
    return out


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2) + "\n"


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)
