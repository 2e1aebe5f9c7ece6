"""Small reference systems used by tests, examples and the verify suite."""
from __future__ import annotations

from .core import AffineMap, Gifs, LinearPhi


def averaging_pair(scale: float, shift: float, rate: float | None = None) -> Gifs:
    """d=1, m=2: f_1(x,y) = scale*(x+y), f_2(x,y) = scale*(x+y) + shift."""
    mats = [[[scale]], [[scale]]]
    rate = 2 * abs(scale) if rate is None else rate
    return Gifs(2, (AffineMap(mats, [0.0]), AffineMap(mats, [shift])), LinearPhi(rate))


def s_conn() -> Gifs:
    """Attractor [0, 1]."""
    return averaging_pair(0.25, 0.5)


def s_disc() -> Gifs:
    """Attractor [0, 1/3] u [2/3, 1]."""
    return averaging_pair(1 / 6, 2 / 3)


def sierpinski() -> Gifs:
    """Classical three-map Sierpinski triangle (order 1) in the plane."""
    half = [[[0.5, 0.0], [0.0, 0.5]]]
    offsets = ([0.0, 0.0], [0.5, 0.0], [0.25, 0.5])
    return Gifs(1, tuple(AffineMap(half, b) for b in offsets), LinearPhi(0.5))
