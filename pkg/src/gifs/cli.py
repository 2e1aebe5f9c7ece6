"""Command line entry point: ``gifs <subcommand> --config run.json``.

stdout carries only the paths of written files; diagnostics go to stderr.
Exit status: 0 ok, 1 failed verification or internal inconsistency,
2 usage, 3 resource, 4 divergence, 5 disconnection.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import codes as cs
from .config import STREAM_ATTRACTOR, RunConfig, load_config
from .core import AttractorApprox, attractor_iterate
from .errors import GifsError, UsageError
from .geometry import read_cloud, write_cloud
from .render import write_pgm
from .topology import build_arc, connectedness_verdict, format_arc
from .verify import format_results, run_suite

log = logging.getLogger("gifs")


def _attractor(cfg: RunConfig) -> AttractorApprox:
    S = cfg.gifs()
    return attractor_iterate(S, cfg.seeds(), cfg.tol, cfg.max_iter, cell=cfg.cell,
                             policy=cfg.policy(STREAM_ATTRACTOR))


def format_report(A: AttractorApprox) -> str:
    rows = [
        ("iterations", A.iterations),
        ("converged", "true" if A.converged else "false"),
        ("residual", repr(A.residual)),
        ("error_bound", repr(A.error_bound)),
        ("points", len(A.cloud)),
        ("resolution", repr(A.cloud.resolution)),
    ]
    return "".join(f"{k}={v}\n" for k, v in rows)


def _write(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8", newline="\n")
    return path


def run_attractor(cfg: RunConfig, out: Path) -> list[Path]:
    t0 = time.perf_counter()
    A = _attractor(cfg)
    wall = time.perf_counter() - t0
    return [
        write_cloud(out / "attractor.csv", A.cloud),
        _write(out / "attractor_report.txt", format_report(A)),
        # kept apart so the report itself is reproducible byte for byte
        _write(out / "attractor_timing.txt", f"wall_time_s={wall!r}\n"),
    ]


def run_render(cfg: RunConfig, out: Path, cloud_path: str | None = None) -> list[Path]:
    if cfg.dimension != 2:
        raise UsageError(f"render is 2-D only, config has dimension {cfg.dimension}")
    cloud = read_cloud(cloud_path) if cloud_path else _attractor(cfg).cloud
    if cfg.render is not None:
        lo, hi, w, h = cfg.render.lo, cfg.render.hi, cfg.render.width, cfg.render.height
    else:
        lo, hi = cloud.bbox()
        pad = 0.02 * max(float((hi - lo).max()), 1e-9)
        lo, hi, w, h = tuple(lo - pad), tuple(hi + pad), 256, 256
    return [write_pgm(out / "attractor.pgm", cloud, lo, hi, w, h)]


def run_connect(cfg: RunConfig, out: Path) -> list[Path]:
    S = cfg.gifs()
    A = _attractor(cfg)
    rep = connectedness_verdict(S, A, cfg.eps_connect, cfg.eps_separate, policy=cfg.policy(cylinder=True))
    return [_write(out / "verdict.txt", rep.line() + "\n")]


def run_arc(cfg: RunConfig, out: Path, x_code: str, y_code: str, level: int) -> list[Path]:
    S = cfg.gifs()
    x = cs.parse_code(x_code, S.order, S.n)
    y = cs.parse_code(y_code, S.order, S.n)
    A = _attractor(cfg)
    arc = build_arc(S, A, x, y, level, cfg.chain_threshold, policy=cfg.policy(cylinder=True),
                    node_budget=cfg.node_budget)
    for msg in arc.flags:
        log.warning("containment: %s", msg)
    return [_write(out / "arc.csv", format_arc(arc))]


def run_code(cfg: RunConfig, out: Path, code: str, depth: int) -> list[Path]:
    S = cfg.gifs()
    alpha = cs.parse_code(code, S.order, S.n)
    point, bound = cs.coding_point(S, alpha, depth, cs.diagonal(np.zeros(S.dim), S.order))
    text = (f"code={cs.format_code(alpha)}\ndepth={depth}\n"
            f"point={','.join(repr(float(c)) for c in point)}\nbound={bound!r}\n")
    return [_write(out / "code.txt", text)]


def run_verify(cfg: RunConfig, out: Path) -> tuple[list[Path], bool]:
    results = run_suite(cfg)
    path = _write(out / "verify.txt", format_results(results))
    return [path], all(r.passed for r in results)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gifs", description="Generalized IFS attractors, codes and arcs.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more diagnostics on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        p.add_argument("--seed", type=int, help="override the configured 64-bit seed")
        return p

    common(sub.add_parser("attractor", help="iterate to the attractor, write cloud and report"))
    p = common(sub.add_parser("render", help="rasterize a 2-D attractor to PGM"))
    p.add_argument("--cloud", help="render this cloud file instead of recomputing")
    common(sub.add_parser("connect", help="connectedness verdict of the level-one pieces"))
    p = common(sub.add_parser("arc", help="build an arc between two coded points"))
    p.add_argument("--x-code", required=True)
    p.add_argument("--y-code", required=True)
    p.add_argument("--depth", type=int, default=4, help="refinement level (default 4)")
    p = common(sub.add_parser("code", help="evaluate the coding map at a finite depth"))
    p.add_argument("--code", required=True)
    p.add_argument("--depth", type=int, default=20, help="code depth (default 20)")
    common(sub.add_parser("verify", help="run the invariant suite"))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise UsageError("--seed must be an unsigned 64-bit integer")
            cfg = cfg.with_seed(args.seed)
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise UsageError(f"cannot create output directory {out}: {exc.strerror}") from None
        ok = True
        if args.command == "attractor":
            paths = run_attractor(cfg, out)
        elif args.command == "render":
            paths = run_render(cfg, out, args.cloud)
        elif args.command == "connect":
            paths = run_connect(cfg, out)
        elif args.command == "arc":
            paths = run_arc(cfg, out, args.x_code, args.y_code, args.depth)
        elif args.command == "code":
            paths = run_code(cfg, out, args.code, args.depth)
        else:
            paths, ok = run_verify(cfg, out)
    except GifsError as exc:
        print(f"gifs {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_status
    for p in paths:
        print(p)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
