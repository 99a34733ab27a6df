"""Riemann-Stieltjes sums, the adaptive gauge-driven integrator, indefinite
tables, and delta-variation (1-D brute force + dyadic dynamic program).

The integrator maintains a dyadic cell tree.  Every leaf carries tagged
sums at three consecutive scales: s1 = f(tag) G(Q), s2 over its 2^n
children, s3 over its 4^n grandchildren.  The refinement indicator is the
Cauchy defect |s2 - s3| between the cell's composite sum and its
children's, plus a fraction of |s1 - s2| as a guard against oscillatory
aliasing; the leaf's contribution is the extrapolated s3 + (s3 - s2)/3.

Cells containing a declared singular point of f are tagged at that point
(the gauge-integration choice: the singular point must tag its own cell).
Around each such point the tree keeps a shrinking nest; the masses of the
successive "rings" peeled off the nest are extrapolated geometrically to
estimate the remaining mass, and that estimate doubles as the nest's error
indicator.  This converges for monotone endpoint blow-ups (inv_sqrt) and
for oscillating-unbounded derivatives (hk_derivative) alike, where any
fixed interior-tag rule provably stalls.

Internally the tree works on integer dyadic indices with float geometry
for speed; exact rational geometry is restored at the API boundary (the
cells of an indefinite table are exact `Box` objects).
"""

from __future__ import annotations

import heapq
import itertools
import json
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .funcspace import IntervalFunction, PointFunction
from .intervals import Box, _diam_lt, as_rational, point_floats

EVAL_BUDGET_DEFAULT = 10_000_000
MAX_DEPTH_DEFAULT = 50
CHAIN_DEPTH_CAP = 60
DP_DEPTH_CAP = 24


class TagEvalError(RuntimeError):
    def __init__(self, tag, cell: Optional[Box], cause: Exception):
        self.tag = tag
        self.cell = cell
        where = f" on {cell}" if cell is not None else ""
        super().__init__(f"evaluation failed at tag {point_floats(tag)}{where}: {cause}")


def pairwise_sum(values: Sequence[float]) -> float:
    """Deterministic pairwise (tree) summation in the given order."""
    vals = list(values)
    n = len(vals)
    if n == 0:
        return 0.0
    if n == 1:
        return vals[0]
    if n == 2:
        return vals[0] + vals[1]
    if n == 4:
        return (vals[0] + vals[1]) + (vals[2] + vals[3])
    while len(vals) > 1:
        nxt = [vals[i] + vals[i + 1] for i in range(0, len(vals) - 1, 2)]
        if len(vals) % 2:
            nxt.append(vals[-1])
        vals = nxt
    return vals[0]


@dataclass
class IntegralResult:
    value: float
    error_estimate: float
    evaluations: int
    max_depth: int
    converged: bool

    def to_json(self) -> str:
        return json.dumps(
            {
                "value": self.value,
                "error_estimate": self.error_estimate,
                "evaluations": self.evaluations,
                "max_depth": self.max_depth,
                "converged": self.converged,
            },
            sort_keys=True,
        )


@dataclass(frozen=True)
class CellError:
    cell: Box
    cauchy_defect: float


def riemann_sum(f, G: IntervalFunction, tagged) -> float:
    """sum f(tag) G(cell) over a tagged partition, in canonical cell order."""
    f = PointFunction.resolve(f)
    items = sorted(tagged, key=lambda it: it[0].intervals)
    terms = []
    for cell, tag in items:
        try:
            terms.append(f(tag) * G.value(cell))
        except (ValueError, ArithmeticError) as e:
            raise TagEvalError(tag, cell, e) from e
    return pairwise_sum(terms)


# ---------------------------------------------------------------------------
# Adaptive integrator

# Cells are keyed (depth, (j1..jn)): the dyadic cell [j 2^-d, (j+1) 2^-d]
# per axis in box coordinates.  Geometry is float inside the engine.

ALIAS_GUARD = 0.005  # weight of the raw composite-pair defect (alias tripwire)
EDGE_GUARD = 0.005  # weight of the trapezoid-vs-midpoint gap (edge tripwire)


MAX_SORT_DEPTH = 80
_SCALES = [0.5**d for d in range(MAX_SORT_DEPTH + 4)]


class _Geom:
    """Float geometry of the dyadic tree over a box, plus exact anchors."""

    def __init__(self, box: Box):
        self.box = box
        self.dim = box.dim
        self.lo = [float(lo) for lo, _ in box.intervals]
        self.width = [float(hi - lo) for lo, hi in box.intervals]
        self.vol0 = 1.0
        for w in self.width:
            self.vol0 *= w

    def bounds(self, key):
        d, js = key
        scale = _SCALES[d]
        return [
            (self.lo[i] + js[i] * self.width[i] * scale,
             self.lo[i] + (js[i] + 1) * self.width[i] * scale)
            for i in range(self.dim)
        ]

    def center(self, key):
        d, js = key
        scale = _SCALES[d + 1]
        if self.dim == 1:
            return (self.lo[0] + (2 * js[0] + 1) * self.width[0] * scale,)
        return tuple(
            self.lo[i] + (2 * js[i] + 1) * self.width[i] * scale
            for i in range(self.dim)
        )

    def volume(self, key):
        return self.vol0 * _SCALES[key[0] * self.dim]

    def children(self, key):
        d, js = key
        if self.dim == 1:
            j2 = 2 * js[0]
            return ((d + 1, (j2,)), (d + 1, (j2 + 1,)))
        out = []
        for bits in itertools.product((0, 1), repeat=self.dim):
            out.append((d + 1, tuple(2 * j + b for j, b in zip(js, bits))))
        return out

    def corners(self, key):
        return list(itertools.product(*self.bounds(key)))

    def corner_signs(self):
        # sign (-1)^(#lo coords); corners() yields product in (lo,hi) order
        signs = []
        for bits in itertools.product((0, 1), repeat=self.dim):
            lows = bits.count(0)
            signs.append(-1.0 if lows % 2 else 1.0)
        return signs

    def to_box(self, key) -> Box:
        d, js = key
        pairs = []
        for (lo, hi), j in zip(self.box.intervals, js):
            w = (hi - lo) / 2**d
            pairs.append((lo + j * w, lo + (j + 1) * w))
        return Box(tuple(pairs))

    def sort_key(self, key):
        d, js = key
        shift = MAX_SORT_DEPTH - d
        if self.dim == 1:
            return (js[0] << shift, d)
        return tuple(j << shift for j in js) + (d,)


class _SingularAnchor:
    """Exact containment tests for one declared singular point."""

    def __init__(self, point, box: Box):
        self.point = point
        self.floats = tuple(float(c) for c in point)
        # coordinate of the point in box units, exact
        self.rel = tuple(
            (c - lo) / (hi - lo) for c, (lo, hi) in zip(point, box.intervals)
        )

    def contained(self, key) -> bool:
        d, js = key
        for r, j in zip(self.rel, js):
            scaled = r * (1 << d)
            if not (j <= scaled <= j + 1):
                return False
        return True

    def maybe(self, key, geom: _Geom) -> bool:
        # cheap float prefilter with one-cell slack
        d, js = key
        scale = 0.5**d
        for i, (x, j) in enumerate(zip(self.floats, js)):
            lo = geom.lo[i] + (j - 1) * geom.width[i] * scale
            hi = geom.lo[i] + (j + 2) * geom.width[i] * scale
            if not (lo <= x <= hi):
                return False
        return True


class _Leaf:
    __slots__ = ("key", "singular", "s1", "s2", "value", "defect",
                 "l2", "l3", "l4", "ring")

    def __init__(self, key, singular, s1, s2, value, defect, l2, l3, l4, ring):
        self.key = key
        self.singular = singular  # anchor index or None
        self.s1 = s1
        self.s2 = s2
        self.value = value
        self.defect = defect
        # cached probes (key, singular, s1) one/two/three levels down,
        # flat in nested child order; reused by the children on refinement
        self.l2 = l2
        self.l3 = l3
        self.l4 = l4
        self.ring = ring  # (anchor_index, ring_index) or None


class _Chain:
    """Bookkeeping of the shrinking nest around one singular point."""

    __slots__ = ("ring_count", "correction", "defect", "leaf_keys")

    def __init__(self):
        self.ring_count = 0
        self.correction = 0.0
        self.defect = 0.0
        self.leaf_keys = set()


def _make_g_eval(G: IntervalFunction, geom: _Geom):
    if G.kind == "corner":
        if getattr(G, "_volume_fast", False):
            return geom.volume
        gen = G.generator
        fast = getattr(gen, "fast_eval", gen)
        signs = geom.corner_signs()
        if geom.dim == 1:
            def g_eval(key):
                (lo, hi), = geom.bounds(key)
                return fast((hi,)) - fast((lo,))
            return g_eval

        def g_eval(key):
            corners = geom.corners(key)
            return pairwise_sum(
                [s * fast(c) for s, c in zip(signs, corners)]
            )
        return g_eval

    def g_eval(key):
        return G.value(geom.to_box(key))

    return g_eval


class _Tree:
    def __init__(self, f: PointFunction, G: IntervalFunction, box: Box,
                 budget, max_depth):
        self.geom = _Geom(box)
        self.f_eval = getattr(f, "fast_eval", f)
        self.g_eval = _make_g_eval(G, self.geom)
        self.budget = budget
        self.max_depth = max_depth
        self.tol = 0.0  # set by run()
        self.evals = 0
        self.leaves = {}  # key -> _Leaf
        self.heap = []  # (-defect, sort_key, key) for refinable regular leaves
        self.sum_values = 0.0
        self.sum_defects = 0.0  # regular leaves only
        self.anchors = [
            _SingularAnchor(p, box)
            for p in getattr(f, "singular_points", ())
            if box.contains(p)
        ]
        self.chains = [_Chain() for _ in self.anchors]
        self.ring_values = {}  # (anchor_idx, ring) -> float
        self.ring_defects = {}
        self.ring_counts = {}

    # -- evaluation helpers

    def _edge_gap(self, key, s1, s2):
        """|trapezoid - midpoint| estimate; conservative when corners fail.

        A corner where f cannot be evaluated signals an (undeclared)
        boundary singularity; the raw pair gap keeps such cells refining.
        """
        total = 0.0
        corners = self.geom.corners(key)
        for corner in corners:
            self.evals += 1
            try:
                v = self.f_eval(corner)
            except (ValueError, ArithmeticError):
                return abs(s1 - s2)
            if not math.isfinite(v):
                return abs(s1 - s2)
            total += v
        trap = total / len(corners) * self.g_eval(key)
        return abs(trap - s1)

    def _probe(self, key):
        """(singular_index, s1) for a cell, one f evaluation."""
        singular = None
        if self.anchors:
            for i, a in enumerate(self.anchors):
                if a.maybe(key, self.geom) and a.contained(key):
                    singular = i
                    break
        tag = self.anchors[singular].floats if singular is not None \
            else self.geom.center(key)
        self.evals += 1
        try:
            fv = self.f_eval(tag)
        except (ValueError, ArithmeticError) as e:
            raise TagEvalError(tag, self.geom.to_box(key), e) from e
        return singular, fv * self.g_eval(key)

    # -- leaf management

    def make_leaf(self, key, probe=None, l2=None, l3=None, ring=None):
        singular, s1 = probe if probe is not None else self._probe(key)
        children = self.geom.children
        if l2 is None:
            l2 = [(ck,) + self._probe(ck) for ck in children(key)]
        if l3 is None:
            l3 = [
                (gk,) + self._probe(gk) for c in l2 for gk in children(c[0])
            ]
        l4 = [(hk,) + self._probe(hk) for g in l3 for hk in children(g[0])]
        s2 = pairwise_sum([c[2] for c in l2])
        s3 = pairwise_sum([g[2] for g in l3])
        s4 = pairwise_sum([h[2] for h in l4])
        if singular is not None:
            value = s1
            defect = abs(s1 - s2)
        else:
            # one-step Richardson of the composite midpoint sums at three
            # consecutive scales; the gap between the two finest is the
            # refinement indicator, cross-checked against the coarser one
            # (scale-compensated) so an accidental pair agreement cannot
            # mask an unresolved cell.  Richardson is only trusted where
            # the raw sums decay like a smooth second-order rule (about
            # 4x per level); kinks and jumps inside the cell break that
            # signature and fall back to the raw sample-level gap.
            m0 = s2 + (s2 - s1) / 3.0
            m1 = s3 + (s3 - s2) / 3.0
            m2 = s4 + (s4 - s3) / 3.0
            value = m2 + (m2 - m1) / 15.0
            d34 = abs(s3 - s4)
            d23 = abs(s2 - s3)
            defect = max(abs(m2 - m1), abs(m2 - m0) / 16.0)
            smooth = d34 <= 1e-15 * (abs(s4) + 1.0) or (
                2.5 <= d23 / d34 <= 6.5 if d34 > 0.0 else True
            )
            if not smooth:
                defect = max(defect, d34 / 4.0)
            defect += ALIAS_GUARD * d34
            if d34 == 0.0 and d23 == 0.0 and s2 == s1:
                # midpoint probes never see the cell margins: a feature
                # hiding between the deepest samples and an edge (a kink
                # just inside the boundary) leaves every composite equal
                # and the cell looks exactly flat.  The corner average
                # breaks that blindness.
                defect += EDGE_GUARD * self._edge_gap(key, s1, s2)
        leaf = _Leaf(key, singular, s1, s2, value, defect, l2, l3, l4, ring)
        self.leaves[key] = leaf
        self.sum_values += value
        if singular is not None:
            self.chains[singular].leaf_keys.add(key)
        else:
            self.sum_defects += defect
            if ring is not None:
                self.ring_values[ring] = self.ring_values.get(ring, 0.0) + value
                self.ring_defects[ring] = self.ring_defects.get(ring, 0.0) + defect
                self.ring_counts[ring] = self.ring_counts.get(ring, 0) + 1
            if key[0] < self.max_depth and defect > 0.0:
                heapq.heappush(
                    self.heap, (-defect, self.geom.sort_key(key), key)
                )
        return leaf

    def drop_leaf(self, leaf):
        del self.leaves[leaf.key]
        self.sum_values -= leaf.value
        if leaf.singular is not None:
            self.chains[leaf.singular].leaf_keys.discard(leaf.key)
        else:
            self.sum_defects -= leaf.defect
            if leaf.ring is not None:
                self.ring_values[leaf.ring] -= leaf.value
                self.ring_defects[leaf.ring] -= leaf.defect
                self.ring_counts[leaf.ring] -= 1

    def refine(self, leaf):
        self.drop_leaf(leaf)
        m = 2**self.geom.dim
        if leaf.singular is not None:
            chain = self.chains[leaf.singular]
            ring = (leaf.singular, chain.ring_count)
            new_ring = False
            for i, (ck, csing, cs1) in enumerate(leaf.l2):
                crng = None if csing is not None else ring
                new_ring = new_ring or csing is None
                self.make_leaf(ck, probe=(csing, cs1),
                               l2=leaf.l3[i * m:(i + 1) * m],
                               l3=leaf.l4[i * m * m:(i + 1) * m * m],
                               ring=crng)
            if new_ring:
                self.ring_values.setdefault(ring, 0.0)
                self.ring_defects.setdefault(ring, 0.0)
                chain.ring_count += 1
        else:
            for i, (ck, csing, cs1) in enumerate(leaf.l2):
                self.make_leaf(ck, probe=(csing, cs1),
                               l2=leaf.l3[i * m:(i + 1) * m],
                               l3=leaf.l4[i * m * m:(i + 1) * m * m],
                               ring=leaf.ring)

    # -- chain state

    def chain_leaves(self, idx):
        return [self.leaves[k] for k in sorted(self.chains[idx].leaf_keys)]

    def update_chains(self):
        # The remaining mass inside a nest is extrapolated geometrically
        # only when the last three ring masses show a consistent ratio;
        # otherwise (oscillating phases can make a single ring mass tiny
        # by accident) the base defect is the window maximum of the
        # masses.  Masses of rings that are themselves unresolved are
        # meaningless, so the recent rings' own defects are added: the
        # nest cannot claim precision its rings do not have yet.
        for idx, chain in enumerate(self.chains):
            R = chain.ring_count
            raw = sum(abs(lf.s1 - lf.s2) for lf in self.chain_leaves(idx))
            chain.correction = 0.0
            recent = 0.0
            for rr in (R - 1, R - 2):
                if rr >= 0:
                    recent += self.ring_defects.get((idx, rr), 0.0)
            if R == 0:
                chain.defect = raw
                continue
            if R == 1:
                chain.defect = abs(self.ring_values[(idx, 0)]) + raw
                continue
            m1 = self.ring_values[(idx, R - 1)]
            m0 = self.ring_values[(idx, R - 2)]
            if R == 2:
                chain.defect = abs(m1) + abs(m0) + 0.5 * recent
                continue
            m2 = self.ring_values[(idx, R - 3)]
            r1 = m1 / m0 if m0 != 0.0 else math.inf
            r2 = m0 / m2 if m2 != 0.0 else math.inf
            if (
                0.0 < r1 <= 0.95
                and 0.0 < r2 <= 0.95
                and 0.5 <= r1 / r2 <= 2.0
            ):
                chain.correction = m1 * r1 / (1.0 - r1)
                chain.defect = abs(chain.correction) + 0.5 * recent
            else:
                # erratic (phase-cancelling) masses: bound the remaining
                # tail by the mass envelope, its decay fitted over the
                # last several rings (single ratios are phase noise)
                rho = self._envelope_decay(idx, R)
                peak = max(abs(m1), rho * abs(m0), rho * rho * abs(m2))
                chain.defect = peak * rho / (1.0 - rho) + 0.5 * recent

    def _envelope_decay(self, idx, R, window=6):
        """Least-squares decay rate of log ring-mass over recent rings.

        Clamped to [0.05, 0.9]; degenerates to the conservative end when
        masses carry no usable trend.
        """
        ks, logs = [], []
        for rr in range(max(0, R - window), R):
            v = abs(self.ring_values.get((idx, rr), 0.0))
            if v > 0.0:
                ks.append(float(rr))
                logs.append(math.log(v))
        if len(ks) < 3:
            return 0.9
        n = len(ks)
        mean_k = sum(ks) / n
        mean_l = sum(logs) / n
        var = sum((k - mean_k) ** 2 for k in ks)
        if var == 0.0:
            return 0.9
        slope = sum((k - mean_k) * (l - mean_l) for k, l in zip(ks, logs)) / var
        return min(0.9, max(0.05, math.exp(slope)))

    def chain_blocked(self, idx):
        """Do not deepen a nest while its last two rings are unresolved.

        Resolution is judged absolutely, against the chain's tolerance
        share: ring masses feed the remaining-tail estimate, so they must
        be known to that precision before the nest peels another ring.
        An unresolved ring's mass estimate is meaningless, and judging it
        relative to itself would let nests race ahead on noise.
        """
        chain = self.chains[idx]
        R = chain.ring_count
        if R == 0:
            return False
        share = 0.25 * self.tol / max(1, len(self.chains))
        for rr in (R - 1, R - 2):
            if rr < 0:
                continue
            if self.ring_defects.get((idx, rr), 0.0) > 0.5 * share:
                return True
        return False

    # -- totals

    def total(self):
        correction = sum(c.correction for c in self.chains)
        defect = self.sum_defects + sum(c.defect for c in self.chains)
        return self.sum_values + correction, defect

    def max_leaf_depth(self):
        return max((k[0] for k in self.leaves), default=0)

    # -- marking

    def select_marks(self):
        """Worst regular leaves (within 4x of the max defect) + needy chains."""
        marks = []
        while self.heap:
            neg, _sk, key = self.heap[0]
            leaf = self.leaves.get(key)
            if leaf is None or leaf.singular is not None or -neg != leaf.defect:
                heapq.heappop(self.heap)
                continue
            break
        max_defect = -self.heap[0][0] if self.heap else 0.0
        # a nest deepens only while its own uncertainty threatens the
        # tolerance; every extra ring multiplies the resolution bill
        chain_share = 0.25 * self.tol / max(1, len(self.chains))
        chain_marks = []
        for idx, chain in enumerate(self.chains):
            ripe = [lf for lf in self.chain_leaves(idx)
                    if lf.key[0] < CHAIN_DEPTH_CAP]
            if not ripe or self.chain_blocked(idx):
                continue
            if chain.defect >= chain_share:
                chain_marks.extend(ripe)
        threshold = 0.25 * max_defect
        while self.heap:
            neg, _sk, key = heapq.heappop(self.heap)
            leaf = self.leaves.get(key)
            if leaf is None or leaf.singular is not None or -neg != leaf.defect:
                continue
            if -neg < threshold or -neg <= 0.0:
                heapq.heappush(self.heap, (neg, _sk, key))
                break
            marks.append(leaf)
        marks.sort(key=lambda lf: self.geom.sort_key(lf.key))
        return chain_marks + marks

    def finalize_value(self):
        ordered = sorted(self.leaves.values(),
                         key=lambda lf: self.geom.sort_key(lf.key))
        total = pairwise_sum([lf.value for lf in ordered])
        for chain in self.chains:
            total += chain.correction
        return total

    def run(self, tol, min_depth=0):
        self.tol = tol
        # initial uniform refinement (indefinite tables force a grid depth)
        self.make_leaf((0, (0,) * self.geom.dim))
        while True:
            shallow = sorted(
                (lf for lf in self.leaves.values() if lf.key[0] < min_depth),
                key=lambda lf: self.geom.sort_key(lf.key),
            )
            if not shallow:
                break
            for leaf in shallow:
                self.refine(leaf)
        self.update_chains()

        prev = None
        delta = math.inf
        second_look = False
        while True:
            current, defect = self.total()
            if prev is not None:
                delta = abs(current - prev)
                if defect < tol / 2.0 and delta < tol / 2.0:
                    return self._result(defect, delta, True)
            if self.evals >= self.budget:
                return self._result(defect, delta, False)
            marks = self.select_marks()
            if not marks:
                if prev is None and not second_look:
                    second_look = True
                    prev = current
                    continue
                return self._result(defect, delta, False)
            prev = current
            for leaf in marks:
                if self.evals >= self.budget:
                    break
                if leaf.key in self.leaves:
                    self.refine(leaf)
            self.update_chains()

    def _result(self, defect, delta, converged):
        err = defect + (delta if math.isfinite(delta) else 0.0)
        return IntegralResult(
            value=self.finalize_value(),
            error_estimate=err,
            evaluations=self.evals,
            max_depth=self.max_leaf_depth(),
            converged=converged,
        )


def _resolve_G(G, box: Box) -> IntervalFunction:
    if G is None:
        return IntervalFunction.volume(box.dim)
    if isinstance(G, IntervalFunction):
        return G
    return IntervalFunction.from_generator(G)


def hk_integrate(
    f,
    G,
    box: Box,
    tol: float = 1e-6,
    budget: int = EVAL_BUDGET_DEFAULT,
    max_depth: int = MAX_DEPTH_DEFAULT,
) -> IntegralResult:
    """Adaptive gauge-style integral of f against the interval function G.

    Refines the dyadic cell tree until the summed Cauchy defects fall
    below tol/2 and two successive global sums differ by less than tol/2.
    On budget exhaustion the best value is returned with converged=False.
    """
    if not tol > 0.0:
        raise ValueError("tol must be > 0")
    f = PointFunction.resolve(f)
    tree = _Tree(f, _resolve_G(G, box), box, budget, max_depth)
    return tree.run(tol)


def indefinite_hk(
    f,
    G,
    box: Box,
    depth: int,
    tol: float = 1e-6,
    budget: int = EVAL_BUDGET_DEFAULT,
) -> IntervalFunction:
    """Table of integral values over all dyadic subcells down to `depth`.

    Leaf sums are grouped bottom-up, so every parent equals the float sum
    of its children exactly; accuracy is inherited from the adaptive run.
    """
    if depth < 0 or depth > DP_DEPTH_CAP:
        raise ValueError(f"depth must be in 0..{DP_DEPTH_CAP}")
    f = PointFunction.resolve(f)
    G = _resolve_G(G, box)
    tree = _Tree(f, G, box, budget, max(MAX_DEPTH_DEFAULT, depth))
    result = tree.run(tol, min_depth=depth)

    corrections = {}
    for chain in tree.chains:
        if chain.correction and chain.leaf_keys:
            host = min(chain.leaf_keys)
            corrections[host] = corrections.get(host, 0.0) + chain.correction

    def ancestor(key):
        d, js = key
        return tuple(j >> (d - depth) for j in js)

    groups = {}
    for leaf in sorted(tree.leaves.values(),
                       key=lambda lf: tree.geom.sort_key(lf.key)):
        groups.setdefault(ancestor(leaf.key), []).append(
            leaf.value + corrections.get(leaf.key, 0.0)
        )

    entries = {}
    level = {js: pairwise_sum(vals) for js, vals in groups.items()}
    for js, val in level.items():
        entries[tree.geom.to_box((depth, js))] = val
    for d in range(depth - 1, -1, -1):
        parent_level = {}
        for js in sorted({tuple(j >> 1 for j in k) for k in level}):
            children = [
                level[tuple(2 * j + b for j, b in zip(js, bits))]
                for bits in itertools.product((0, 1), repeat=box.dim)
            ]
            parent_level[js] = pairwise_sum(children)
            entries[tree.geom.to_box((d, js))] = parent_level[js]
        level = parent_level

    table = IntervalFunction.table(
        entries, parent=box, depth=depth, tolerance=tol, name=f"indef({f.name})"
    )
    table.result = result
    return table


def cell_errors(f, G, box: Box, depth: int) -> list:
    """One-level Cauchy defects |s(Q) - sum s(children)| on a dyadic grid."""
    f = PointFunction.resolve(f)
    G = _resolve_G(G, box)
    singular = [p for p in getattr(f, "singular_points", ()) if box.contains(p)]

    def tag(b):
        for p in singular:
            if b.contains(p):
                return p
        return b.center

    def s1(b):
        return f(tag(b)) * G.value(b)

    out = []
    from .intervals import dyadic_cells

    for cell in dyadic_cells(box, depth):
        parent = s1(cell)
        kids = pairwise_sum([s1(ch) for ch in cell.bisect()])
        out.append(CellError(cell, abs(parent - kids)))
    return out


def cumulative(table: IntervalFunction, base) -> Callable:
    """Point function F(x) = (table increment from `base` to x), 1-D.

    Defined on the table's depth-level grid; `base` and queries must be
    grid points.
    """
    if table.kind != "table":
        raise ValueError("cumulative needs a table-backed interval function")
    parent = table.parent
    if parent.dim != 1:
        raise ValueError("cumulative is one-dimensional")
    lo, hi = parent.intervals[0]
    n = 2**table.depth
    width = (hi - lo) / n
    cells = [Box(((lo + i * width, lo + (i + 1) * width),)) for i in range(n)]
    prefix = [0.0]
    for c in cells:
        prefix.append(prefix[-1] + table.value(c))

    def grid_index(x) -> int:
        x = as_rational(x if not isinstance(x, tuple) else x[0])
        ratio = (x - lo) / width
        if ratio.denominator != 1 or not 0 <= ratio.numerator <= n:
            raise ValueError(f"{float(x)} is not on the depth-{table.depth} grid")
        return ratio.numerator

    b = grid_index(base)

    def F(x) -> float:
        return prefix[grid_index(x)] - prefix[b]

    return F


# ---------------------------------------------------------------------------
# delta-variation


def delta_variation_bruteforce(psi, box: Box, gauge, grid) -> float:
    """Exact sup of sum |Psi(Q, x)| over grid partitions with grid tags.

    Restricted to the finite class generated by `grid`: partitions from
    enumerate_partitions, tags at grid points inside each cell, keeping
    only delta-fine configurations.  Returns -inf when no configuration
    is delta-fine.
    """
    from .intervals import enumerate_partitions

    points = sorted({as_rational(g) for g in grid})
    tag_points = [(p,) for p in points]
    admissible = {}

    def cell_best(cell: Box) -> Optional[float]:
        try:
            return admissible[cell]
        except KeyError:
            pass
        best = None
        for t in tag_points:
            if cell.contains(t) and _diam_lt(cell, gauge(t)):
                v = abs(psi(cell, t))
                if best is None or v > best:
                    best = v
        admissible[cell] = best
        return best

    overall = -math.inf
    for partition in enumerate_partitions(box, points):
        terms = []
        ok = True
        for cell in partition:
            best = cell_best(cell)
            if best is None:
                ok = False
                break
            terms.append(best)
        if ok:
            overall = max(overall, pairwise_sum(terms))
    return overall


def _dp_candidates(cell: Box):
    return (cell.center, *cell.corners())


def delta_variation_dp_table(psi, box: Box, gauge, depth: int) -> dict:
    """V values for every dyadic cell of `box` down to `depth`.

    Recurrence: V(Q) = max(best admissible tag value, sum V(children));
    realizes the superadditive envelope on the dyadic class.  Cells whose
    subtree admits no delta-fine configuration carry -inf.
    """
    if depth < 0 or depth > DP_DEPTH_CAP:
        raise ValueError(f"depth must be in 0..{DP_DEPTH_CAP}")
    table = {}

    def rec(cell: Box, d: int) -> float:
        best = -math.inf
        for t in _dp_candidates(cell):
            if _diam_lt(cell, gauge(t)):
                v = abs(psi(cell, t))
                if v > best:
                    best = v
        if d < depth:
            subs = [rec(child, d + 1) for child in cell.bisect()]
            total = pairwise_sum(subs)  # -inf propagates
            if total > best:
                best = total
        table[cell] = best
        return best

    rec(box, 0)
    return table


def delta_variation_dp(psi, box: Box, gauge, depth: int) -> float:
    """Exact sup over dyadic partitions with center/corner candidate tags."""
    return delta_variation_dp_table(psi, box, gauge, depth)[box]


def volume_power_cell_fn(coeff: float, p: float) -> Callable:
    """Psi(Q, x) = coeff * |Q|^p (tag-independent)."""

    def psi(box: Box, _tag) -> float:
        return float(coeff) * float(box.volume) ** float(p)

    return psi


def residual_cell_fn(f, G: IntervalFunction, F: IntervalFunction) -> Callable:
    """Psi(Q, x) = f(x) G(Q) - F(Q), the Henstock-lemma residual."""
    f = PointFunction.resolve(f)

    def psi(box: Box, tag) -> float:
        return f(tag) * G.value(box) - F.value(box)

    return psi


# ---------------------------------------------------------------------------
# serialization


def table_to_csv_rows(table: IntervalFunction) -> list:
    """Rows (depth, lo/hi per axis as rational strings, value)."""
    if table.kind != "table":
        raise ValueError("CSV export needs a table-backed interval function")
    dim = table.parent.dim
    header = ["depth"]
    for i in range(1, dim + 1):
        header += [f"lo{i}", f"hi{i}"]
    header.append("value")
    rows = [header]
    parent_width = table.parent.intervals[0][1] - table.parent.intervals[0][0]
    for cell in sorted(table.entries, key=lambda b: (-b.volume, b.intervals)):
        w = cell.intervals[0][1] - cell.intervals[0][0]
        ratio = parent_width / w  # exact power of two for dyadic tables
        d = ratio.numerator.bit_length() - 1
        row = [str(d)]
        for lo, hi in cell.intervals:
            row += [str(lo), str(hi)]
        row.append(repr(table.entries[cell]))
        rows.append(row)
    return rows
