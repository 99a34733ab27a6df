"""Boxes, partitions, tagged partitions and gauges with exact endpoints.

Geometry is exact: box endpoints are `fractions.Fraction`, and every
overlap / cover / fineness decision is made in rational arithmetic (a float
gauge value is converted exactly before comparison).  Only function
evaluation elsewhere in the package uses floating point.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Callable, Iterable, Iterator, Optional, Sequence

Point = tuple  # tuple of Fraction coordinates

DEPTH_BUDGET_DEFAULT = 40


class DimensionMismatchError(ValueError):
    pass


class GaugeBudgetError(RuntimeError):
    """Raised when cousin_partition runs out of bisection depth.

    Signals a pathological gauge (infimum 0 on a fat set), not a bug.
    """

    def __init__(self, cell: "Box", depth: int):
        self.cell = cell
        self.depth = depth
        super().__init__(
            f"no admissible tag found above depth {depth} inside {cell}"
        )


def as_rational(value) -> Fraction:
    """Coerce ints, Fractions, and decimal/rational strings exactly.

    Floats are converted through their exact binary value, which is the
    deterministic choice; prefer strings like "1/3" for non-dyadic input.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"endpoint must be finite, got {value!r}")
        return Fraction(value)
    raise TypeError(f"cannot interpret {value!r} as a rational number")


def as_point(value) -> Point:
    if isinstance(value, tuple) and value and isinstance(value[0], Fraction):
        return value
    if isinstance(value, (int, float, str, Fraction)):
        return (as_rational(value),)
    return tuple(as_rational(c) for c in value)


def point_floats(point: Point) -> tuple:
    return tuple(float(c) for c in point)


@dataclass(frozen=True)
class Box:
    """Nondegenerate closed interval in R^n with rational endpoints."""

    intervals: tuple

    def __post_init__(self):
        if not self.intervals:
            raise ValueError("box needs at least one axis")
        for lo, hi in self.intervals:
            if not (isinstance(lo, Fraction) and isinstance(hi, Fraction)):
                raise TypeError("box endpoints must be Fractions (use Box.of)")
            if not lo < hi:
                raise ValueError(f"degenerate axis [{lo}, {hi}]")

    @classmethod
    def of(cls, *axes) -> "Box":
        """Box.of((0, 1), ("1/3", "2/3")) -> exact 2-D box."""
        pairs = []
        for lo, hi in axes:
            pairs.append((as_rational(lo), as_rational(hi)))
        return cls(tuple(pairs))

    @classmethod
    def unit(cls, dim: int = 1) -> "Box":
        return cls.of(*(((0, 1),) * dim))

    @property
    def dim(self) -> int:
        return len(self.intervals)

    @cached_property
    def volume(self) -> Fraction:
        v = Fraction(1)
        for lo, hi in self.intervals:
            v *= hi - lo
        return v

    @cached_property
    def diameter_sq(self) -> Fraction:
        return sum(((hi - lo) ** 2 for lo, hi in self.intervals), Fraction(0))

    @property
    def diameter(self) -> float:
        return math.sqrt(float(self.diameter_sq))

    @cached_property
    def center(self) -> Point:
        return tuple((lo + hi) / 2 for lo, hi in self.intervals)

    def corners(self) -> list:
        """The 2^n corners in lexicographic (lo-before-hi per axis) order."""
        return [tuple(c) for c in itertools.product(*self.intervals)]

    def contains(self, point: Point, strict: bool = False) -> bool:
        point = as_point(point)
        if len(point) != self.dim:
            raise DimensionMismatchError(
                f"point of dim {len(point)} in box of dim {self.dim}"
            )
        if strict:
            return all(lo < c < hi for c, (lo, hi) in zip(point, self.intervals))
        return all(lo <= c <= hi for c, (lo, hi) in zip(point, self.intervals))

    def contains_box(self, other: "Box") -> bool:
        self._check_dim(other)
        return all(
            slo <= olo and ohi <= shi
            for (slo, shi), (olo, ohi) in zip(self.intervals, other.intervals)
        )

    def overlaps(self, other: "Box") -> bool:
        """True iff the two boxes have intersecting interiors."""
        self._check_dim(other)
        return all(
            max(slo, olo) < min(shi, ohi)
            for (slo, shi), (olo, ohi) in zip(self.intervals, other.intervals)
        )

    def intersect(self, other: "Box") -> Optional["Box"]:
        """Closed intersection, or None when it is empty or degenerate."""
        self._check_dim(other)
        pairs = []
        for (slo, shi), (olo, ohi) in zip(self.intervals, other.intervals):
            lo, hi = max(slo, olo), min(shi, ohi)
            if not lo < hi:
                return None
            pairs.append((lo, hi))
        return Box(tuple(pairs))

    def bisect(self) -> tuple:
        """All-axes bisection into 2^n children, lexicographic order."""
        halves = []
        for lo, hi in self.intervals:
            mid = (lo + hi) / 2
            halves.append(((lo, mid), (mid, hi)))
        return tuple(Box(tuple(choice)) for choice in itertools.product(*halves))

    def translate(self, offsets: Sequence[Fraction]) -> "Box":
        return Box(
            tuple((lo + d, hi + d) for (lo, hi), d in zip(self.intervals, offsets))
        )

    def _check_dim(self, other: "Box"):
        if other.dim != self.dim:
            raise DimensionMismatchError(
                f"boxes of dim {self.dim} and {other.dim}"
            )

    def to_json(self) -> list:
        return [[str(lo), str(hi)] for lo, hi in self.intervals]

    @classmethod
    def from_json(cls, data) -> "Box":
        if isinstance(data, str):
            data = json.loads(data)
        # accept the 1-D shorthand [lo, hi]
        if len(data) == 2 and not isinstance(data[0], (list, tuple)):
            data = [data]
        return cls.of(*data)

    def __str__(self):
        return "x".join(f"[{lo},{hi}]" for lo, hi in self.intervals)


@dataclass(frozen=True)
class PartitionReport:
    """Outcome of an exact partition check; falsy when defective."""

    ok: bool
    reason: Optional[str] = None  # 'dimension' | 'outside' | 'overlap' | 'gap'
    witness: Optional[Point] = None
    detail: str = ""

    def __bool__(self):
        return self.ok


def _grid_witness(parent: Box, cells: Sequence[Box], want: str) -> Optional[Point]:
    """Search the elementary grid induced by all cell endpoints.

    Returns the rational center of an uncovered ('gap') or doubly covered
    ('overlap') elementary cell.  Exponential in dimension; only invoked to
    produce a witness after the cheap checks already failed.
    """
    axes = []
    for i, (lo, hi) in enumerate(parent.intervals):
        cuts = {lo, hi}
        for c in cells:
            clo, chi = c.intervals[i]
            if lo < clo < hi:
                cuts.add(clo)
            if lo < chi < hi:
                cuts.add(chi)
        cuts = sorted(cuts)
        axes.append(list(zip(cuts[:-1], cuts[1:])))
    for combo in itertools.product(*axes):
        elem = Box(tuple(combo))
        count = sum(1 for c in cells if c.overlaps(elem))
        if want == "gap" and count == 0:
            return elem.center
        if want == "overlap" and count >= 2:
            return elem.center
    return None


def is_partition(parent: Box, cells: Sequence[Box]) -> PartitionReport:
    """Exact check that `cells` tile `parent` without interior overlap."""
    for c in cells:
        if c.dim != parent.dim:
            raise DimensionMismatchError(
                f"cell of dim {c.dim} under parent of dim {parent.dim}"
            )
    if not cells:
        return PartitionReport(False, "gap", parent.center, "no cells")
    for c in cells:
        if not parent.contains_box(c):
            return PartitionReport(False, "outside", c.center, f"cell {c} leaves parent")
    for a, b in itertools.combinations(cells, 2):
        if a.overlaps(b):
            mid = a.intersect(b).center
            return PartitionReport(
                False, "overlap", mid, f"cells {a} and {b} share interior"
            )
    covered = sum((c.volume for c in cells), Fraction(0))
    if covered != parent.volume:
        witness = _grid_witness(parent, cells, "gap")
        return PartitionReport(
            False,
            "gap",
            witness,
            f"cells cover volume {covered} of {parent.volume}",
        )
    return PartitionReport(True)


class Partition:
    """Finite nonoverlapping cover of a parent box.  Validated on creation."""

    __slots__ = ("parent", "cells")

    def __init__(self, parent: Box, cells: Iterable[Box], _trusted: bool = False):
        cells = tuple(cells)
        if not _trusted:
            report = is_partition(parent, cells)
            if not report:
                raise ValueError(f"not a partition ({report.reason}): {report.detail}")
        self.parent = parent
        self.cells = cells

    def __iter__(self):
        return iter(self.cells)

    def __len__(self):
        return len(self.cells)

    def __repr__(self):
        return f"Partition({self.parent}, {len(self.cells)} cells)"


class TaggedPartition:
    """Partition cells paired with tags, tag(Q) in Q for every cell."""

    __slots__ = ("parent", "items")

    def __init__(self, parent: Box, items: Iterable, _trusted: bool = False):
        items = tuple((cell, as_point(tag)) for cell, tag in items)
        if not _trusted:
            Partition(parent, (cell for cell, _ in items))
            for cell, tag in items:
                if not cell.contains(tag):
                    raise ValueError(f"tag {point_floats(tag)} outside cell {cell}")
        self.parent = parent
        self.items = items

    @property
    def cells(self):
        return tuple(cell for cell, _ in self.items)

    @property
    def tags(self):
        return tuple(tag for _, tag in self.items)

    def is_fine(self, gauge: "Gauge") -> bool:
        return not self.fineness_violations(gauge)

    def fineness_violations(self, gauge: "Gauge") -> list:
        """Cells failing diam Q < delta(tag); exact comparison."""
        bad = []
        for cell, tag in self.items:
            if not _diam_lt(cell, gauge(tag)):
                bad.append((cell, tag))
        return bad

    def __iter__(self):
        return iter(self.items)

    def __len__(self):
        return len(self.items)

    def to_json(self) -> list:
        return [
            {"cell": cell.to_json(), "tag": [str(c) for c in tag]}
            for cell, tag in self.items
        ]

    @classmethod
    def from_json(cls, parent: Box, data) -> "TaggedPartition":
        if isinstance(data, str):
            data = json.loads(data)
        return cls(
            parent,
            [(Box.from_json(e["cell"]), as_point(e["tag"])) for e in data],
        )


def _diam_lt(cell: Box, delta: float) -> bool:
    """diam(cell) < delta, decided exactly (delta converted to Fraction)."""
    if delta <= 0.0:
        return False
    if math.isinf(delta):
        return True
    return cell.diameter_sq < Fraction(delta) ** 2


class Gauge:
    """Strictly positive point function delta controlling cell diameters."""

    def __init__(self, fn: Callable, label: str = "gauge"):
        self._fn = fn
        self.label = label

    def __call__(self, point) -> float:
        point = as_point(point)
        value = float(self._fn(point))
        if not value > 0.0:
            raise ValueError(f"gauge {self.label} is {value} at {point_floats(point)}")
        return value

    @classmethod
    def constant(cls, value: float) -> "Gauge":
        value = float(value)
        if not value > 0.0:
            raise ValueError("gauge constant must be strictly positive")
        return cls(lambda _p: value, label=f"const {value}")

    @classmethod
    def from_function(cls, fn: Callable, label: str = "gauge") -> "Gauge":
        """Wrap a scalar-or-point callable; scalars are passed through."""

        def call(point):
            if len(point) == 1:
                try:
                    return fn(float(point[0]))
                except TypeError:
                    return fn(point_floats(point))
            return fn(point_floats(point))

        return cls(call, label=label)

    @classmethod
    def piecewise_1d(cls, samples, floor: float, label: str = "piecewise gauge"):
        """Conservative piecewise-constant extension of sampled values.

        Between two sample points the smaller neighboring value is used;
        outside the sampled range, the nearest value.  `floor` bounds the
        result away from zero where no information is available.
        """
        if not floor > 0.0:
            raise ValueError("floor must be strictly positive")
        table = sorted((as_rational(x), float(v)) for x, v in samples)
        xs = [x for x, _ in table]
        vs = [v for _, v in table]

        def call(point):
            if len(point) != 1:
                raise DimensionMismatchError("piecewise_1d gauge is one-dimensional")
            x = point[0]
            if not xs:
                return floor
            import bisect as _bisect

            i = _bisect.bisect_left(xs, x)
            if i < len(xs) and xs[i] == x:
                return max(vs[i], floor)
            left = vs[i - 1] if i > 0 else None
            right = vs[i] if i < len(xs) else None
            if left is None:
                return max(right, floor)
            if right is None:
                return max(left, floor)
            return max(min(left, right), floor)

        g = cls(call, label=label)
        g.samples = table
        g.floor = floor
        return g


def _admissible_tag(cell: Box, gauge: Gauge) -> Optional[Point]:
    """First candidate (center, then corners in fixed order) with diam < delta."""
    for tag in (cell.center, *cell.corners()):
        if _diam_lt(cell, gauge(tag)):
            return tag
    return None


def cousin_partition(
    box: Box, gauge: Gauge, depth_budget: int = DEPTH_BUDGET_DEFAULT
) -> TaggedPartition:
    """Constructive Cousin procedure: bisect until every cell admits a tag.

    Deterministic: tag candidates are tried center-first, then corners in
    lexicographic order; cells are emitted in depth-first bisection order.
    """
    if depth_budget < 1:
        raise ValueError("depth_budget must be >= 1")
    items = []

    def descend(cell: Box, depth: int):
        tag = _admissible_tag(cell, gauge)
        if tag is not None:
            items.append((cell, tag))
            return
        if depth >= depth_budget:
            raise GaugeBudgetError(cell, depth)
        for child in cell.bisect():
            descend(child, depth + 1)

    descend(box, 0)
    return TaggedPartition(box, items, _trusted=True)


def random_fine_partition(
    box: Box,
    gauge: Gauge,
    rng,
    depth_budget: int = DEPTH_BUDGET_DEFAULT,
    split_bias: float = 0.35,
) -> TaggedPartition:
    """Randomized dyadic delta-fine partition (tags drawn from candidates).

    Used to sample many independent delta-fine partitions: cells are split
    while no candidate tag is admissible, and occasionally split anyway;
    the tag is a uniformly chosen admissible candidate.  Deterministic for
    a given `rng` state.
    """
    items = []

    def descend(cell: Box, depth: int):
        candidates = [
            t for t in (cell.center, *cell.corners()) if _diam_lt(cell, gauge(t))
        ]
        may_split = depth < depth_budget
        if candidates and not (may_split and rng.random() < split_bias):
            items.append((cell, candidates[rng.randrange(len(candidates))]))
            return
        if not may_split:
            if not candidates:
                raise GaugeBudgetError(cell, depth)
            items.append((cell, candidates[rng.randrange(len(candidates))]))
            return
        for child in cell.bisect():
            descend(child, depth + 1)

    descend(box, 0)
    return TaggedPartition(box, items, _trusted=True)


def enumerate_partitions(box: Box, grid: Sequence) -> Iterator[Partition]:
    """All 2^k partitions of a 1-D box with breakpoints from `grid`.

    The k interior grid points are switched on/off in binary counting
    order, so the coarsest partition (the box itself) comes first.
    """
    if box.dim != 1:
        raise DimensionMismatchError(
            "enumerate_partitions supports 1-D boxes only (use the dyadic DP in n-D)"
        )
    lo, hi = box.intervals[0]
    points = sorted({as_rational(g) for g in grid})
    if not points or points[0] != lo or points[-1] != hi:
        raise ValueError("grid must contain both endpoints of the box")
    if any(p < lo or p > hi for p in points):
        raise ValueError("grid point outside the box")
    interior = points[1:-1]
    k = len(interior)
    for mask in range(2**k):
        cuts = [lo] + [p for i, p in enumerate(interior) if mask >> i & 1] + [hi]
        cells = [Box(((a, b),)) for a, b in zip(cuts[:-1], cuts[1:])]
        yield Partition(box, cells, _trusted=True)


def dyadic_cells(box: Box, depth: int) -> Iterator[Box]:
    """All dyadic subcells of `box` at exactly `depth` bisection levels."""
    if depth == 0:
        yield box
        return
    for child in box.bisect():
        yield from dyadic_cells(child, depth - 1)


def dyadic_cell_containing(box: Box, point: Point, depth: int) -> Box:
    """The depth-level dyadic subcell of `box` containing `point`.

    Points on an interior cut are resolved to the cell on the high side,
    except at the top edge of the box.
    """
    point = as_point(point)
    if not box.contains(point):
        raise ValueError(f"point {point_floats(point)} outside {box}")
    pairs = []
    for c, (lo, hi) in zip(point, box.intervals):
        width = (hi - lo) / 2**depth
        idx = (c - lo) // width
        idx = min(int(idx), 2**depth - 1)
        pairs.append((lo + idx * width, lo + (idx + 1) * width))
    return Box(tuple(pairs))
