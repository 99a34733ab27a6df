"""Shared test helpers: independent oracles and randomized geometry."""

import math
import random
from fractions import Fraction

import pytest

from gaugecalc import Box, Partition


def midpoint_oracle(f, a: float, b: float, levels: int = 14) -> float:
    """Composite-midpoint quadrature with one Richardson stage.

    Deliberately independent of the adaptive integrator: uniform grids,
    plain summation, no cell tree.  Good to ~1e-10 on smooth integrands.
    """
    estimates = []
    for lv in range(levels - 2, levels + 1):
        n = 2**lv
        h = (b - a) / n
        total = math.fsum(f(a + (i + 0.5) * h) for i in range(n)) * h
        estimates.append(total)
    r1 = [(4 * y - x) / 3 for x, y in zip(estimates, estimates[1:])]
    r2 = [(16 * y - x) / 15 for x, y in zip(r1, r1[1:])]
    return r2[-1]


def random_dyadic_partition(box: Box, rng: random.Random, max_depth: int = 5):
    """Random dyadic partition of a box (any dimension)."""
    cells = []

    def descend(cell: Box, depth: int):
        if depth >= max_depth or rng.random() < 0.35:
            cells.append(cell)
            return
        for child in cell.bisect():
            descend(child, depth + 1)

    descend(box, 0)
    return Partition(box, cells, _trusted=True)


def random_grid(rng: random.Random, pieces: int = 4):
    """Sorted rational breakpoints of [0,1] including both endpoints."""
    cuts = sorted(rng.sample(range(1, 16), pieces - 1))
    return [Fraction(0)] + [Fraction(c, 16) for c in cuts] + [Fraction(1)]


@pytest.fixture
def rng():
    return random.Random(20260809)
