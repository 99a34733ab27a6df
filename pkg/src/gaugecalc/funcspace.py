"""Expression mini-language, point functions, and interval functions.

Grammar (no implicit multiplication, '^' binds tightest):

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := atom ('^' atom)?
    atom   := NUMBER | VAR | FUNC '(' args ')' | '(' expr ')'
            | 'ite' '(' VAR '<' NUMBER ',' expr ',' expr ')'

NUMBER is an unsigned decimal ("0.5") or rational ("p/q"); a digits/digits
run with no spaces lexes as one rational token, so write "x/2" or "1 / 2"
when division is meant next to an exponent.  VAR is x or x1..x9.

Evaluation is IEEE double.  An exact-rational evaluation path exists for
expressions built from rational literals and +,-,*,/,^int,abs,ite; it backs
the exact additivity checks for corner-generated interval functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

from .intervals import Box, Partition, as_point, point_floats

UNARY_FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt", "abs")


class ParseError(ValueError):
    def __init__(self, message: str, column: int):
        self.column = column
        super().__init__(f"{message} (column {column})")


class EvalDomainError(ValueError):
    def __init__(self, message: str, subexpr: "Expr"):
        self.subexpr = subexpr
        super().__init__(f"{message} in '{subexpr}'")


# ---------------------------------------------------------------------------
# AST


class Expr:
    def eval(self, point) -> float:
        return _eval(self, point_floats(as_point(point)))

    def eval_exact(self, point) -> Optional[Fraction]:
        """Exact rational value, or None if a transcendental node blocks it."""
        return _eval_exact(self, as_point(point))

    def max_var(self) -> int:
        return _max_var(self)

    def __str__(self):
        return to_text(self)


@dataclass(frozen=True)
class Num(Expr):
    value: Fraction


@dataclass(frozen=True)
class Var(Expr):
    index: int


@dataclass(frozen=True)
class Bin(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Fun(Expr):
    name: str
    arg: Expr


@dataclass(frozen=True)
class Ite(Expr):
    var: int
    threshold: Fraction
    then: Expr
    other: Expr


def _max_var(e: Expr) -> int:
    if isinstance(e, Var):
        return e.index + 1
    if isinstance(e, Bin):
        return max(_max_var(e.left), _max_var(e.right))
    if isinstance(e, Fun):
        return _max_var(e.arg)
    if isinstance(e, Ite):
        return max(e.var + 1, _max_var(e.then), _max_var(e.other))
    return 0


def _eval(e: Expr, xs: tuple) -> float:
    if isinstance(e, Num):
        return float(e.value)
    if isinstance(e, Var):
        return xs[e.index]
    if isinstance(e, Bin):
        a = _eval(e.left, xs)
        if e.op == "^":
            b = _eval(e.right, xs)
            if a == 0.0 and b < 0.0:
                raise EvalDomainError("zero base with negative exponent", e)
            try:
                # math.pow rejects fractional powers of negative bases
                # (float ** would silently go complex)
                return math.pow(a, b)
            except (ValueError, OverflowError):
                raise EvalDomainError("invalid power", e) from None
        b = _eval(e.right, xs)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if b == 0.0:
            raise EvalDomainError("division by zero", e)
        return a / b
    if isinstance(e, Fun):
        v = _eval(e.arg, xs)
        if e.name == "sin":
            return math.sin(v)
        if e.name == "cos":
            return math.cos(v)
        if e.name == "exp":
            return math.exp(v)
        if e.name == "abs":
            return abs(v)
        if e.name == "log":
            if v <= 0.0:
                raise EvalDomainError(f"log of {v}", e)
            return math.log(v)
        if v < 0.0:
            raise EvalDomainError(f"sqrt of {v}", e)
        return math.sqrt(v)
    # Ite
    if Fraction(xs[e.var]) < e.threshold:
        return _eval(e.then, xs)
    return _eval(e.other, xs)


def _eval_exact(e: Expr, point: tuple) -> Optional[Fraction]:
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return point[e.index]
    if isinstance(e, Bin):
        a = _eval_exact(e.left, point)
        b = _eval_exact(e.right, point)
        if a is None or b is None:
            return None
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "/":
            if b == 0:
                raise EvalDomainError("division by zero", e)
            return a / b
        if b.denominator != 1:
            return None
        n = b.numerator
        if a == 0 and n < 0:
            raise EvalDomainError("zero base with negative exponent", e)
        return a**n
    if isinstance(e, Fun):
        if e.name != "abs":
            return None
        v = _eval_exact(e.arg, point)
        return None if v is None else abs(v)
    if isinstance(e, Ite):
        branch = e.then if point[e.var] < e.threshold else e.other
        return _eval_exact(branch, point)
    return None


# ---------------------------------------------------------------------------
# Tokenizer / parser

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 3}


def _tokenize(text: str):
    tokens = []  # (kind, value, column) with 1-based columns
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        col = i + 1
        if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and text[j].isdigit():
                j += 1
            if j < n and text[j] == ".":
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
            tokens.append(("num", Fraction(text[i:j]), col))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("name", text[i:j], col))
            i = j
            continue
        if ch in "+-*/^(),<":
            tokens.append((ch, ch, col))
            i += 1
            continue
        raise ParseError(f"unexpected character {ch!r}", col)
    tokens.append(("end", "", n + 1))
    return tokens


def _var_index(name: str) -> Optional[int]:
    if name == "x":
        return 0
    if len(name) == 2 and name[0] == "x" and name[1] in "123456789":
        return int(name[1]) - 1
    return None


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def take(self, kind=None):
        tok = self.tokens[self.pos]
        if kind is not None and tok[0] != kind:
            raise ParseError(f"expected {kind!r}, found {tok[1]!r}", tok[2])
        self.pos += 1
        return tok

    def parse(self) -> Expr:
        e = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ParseError(f"unexpected {tok[1]!r}", tok[2])
        return e

    def expr(self) -> Expr:
        e = self.term()
        while self.peek()[0] in ("+", "-"):
            op = self.take()[0]
            e = Bin(op, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.factor()
        while self.peek()[0] in ("*", "/"):
            op, _, col = self.take()
            rhs = self.factor()
            # literal/literal division is the rational notation "p/q";
            # fold it so thresholds and endpoints stay exact
            if op == "/" and isinstance(e, Num) and isinstance(rhs, Num):
                if rhs.value == 0:
                    raise ParseError("rational with zero denominator", col)
                e = Num(e.value / rhs.value)
            else:
                e = Bin(op, e, rhs)
        return e

    def factor(self) -> Expr:
        e = self.atom()
        if self.peek()[0] == "^":
            self.take()
            e = Bin("^", e, self.atom())
        return e

    def atom(self) -> Expr:
        kind, value, col = self.peek()
        if kind == "num":
            self.take()
            return Num(value)
        if kind == "(":
            self.take()
            e = self.expr()
            self.take(")")
            return e
        if kind == "name":
            self.take()
            idx = _var_index(value)
            if idx is not None:
                return Var(idx)
            if value == "ite":
                return self.ite(col)
            if value in UNARY_FUNCTIONS:
                self.take("(")
                arg = self.expr()
                if self.peek()[0] == ",":
                    raise ParseError(f"{value} takes one argument", self.peek()[2])
                self.take(")")
                return Fun(value, arg)
            raise ParseError(f"unknown identifier {value!r}", col)
        raise ParseError(f"unexpected {value!r}" if value else "unexpected end", col)

    def ite(self, col: int) -> Expr:
        self.take("(")
        kind, name, vcol = self.take("name")
        idx = _var_index(name)
        if idx is None:
            raise ParseError(f"ite condition needs a variable, got {name!r}", vcol)
        self.take("<")
        _, threshold, _ = self.take("num")
        if self.peek()[0] == "/":
            _, _, dcol = self.take()
            _, denom, _ = self.take("num")
            if denom == 0:
                raise ParseError("rational with zero denominator", dcol)
            threshold = threshold / denom
        self.take(",")
        then = self.expr()
        self.take(",")
        other = self.expr()
        self.take(")")
        return Ite(idx, threshold, then, other)


def parse(text: str) -> Expr:
    """Parse expression text into an AST; errors carry a 1-based column."""
    return _Parser(text).parse()


def _fmt_num(v: Fraction) -> str:
    return str(v)


def to_text(e: Expr) -> str:
    """Canonical printer; parse(to_text(parse(s))) == parse(s)."""

    def prec(node) -> int:
        if isinstance(node, Bin):
            return _PREC[node.op]
        return 4

    def render(node, parent_prec: int, right_of: str = "") -> str:
        if isinstance(node, Num):
            if node.value < 0:
                # the grammar has no unary minus; canonical form is 0-v
                s = f"0-{_fmt_num(-node.value)}"
                if 1 < parent_prec:
                    s = f"({s})"
                return s
            s = _fmt_num(node.value)
            # a rational literal's slash would fuse with an enclosing
            # '*', '/' or '^' on reparse
            if node.value.denominator != 1 and parent_prec >= 2:
                s = f"({s})"
            return s
        elif isinstance(node, Var):
            s = "x" if node.index == 0 else f"x{node.index + 1}"
        elif isinstance(node, Fun):
            s = f"{node.name}({render(node.arg, 0)})"
        elif isinstance(node, Ite):
            var = "x" if node.var == 0 else f"x{node.var + 1}"
            s = (
                f"ite({var}<{_fmt_num(node.threshold)},"
                f"{render(node.then, 0)},{render(node.other, 0)})"
            )
        else:
            p = _PREC[node.op]
            if node.op == "^":
                left = render(node.left, 4)
                right = render(node.right, 4)
                s = f"{left}^{right}"
            else:
                left = render(node.left, p)
                right = render(node.right, p + 1)
                s = f"{left}{node.op}{right}"
            if p < parent_prec:
                s = f"({s})"
            return s
        return s

    return render(e, 0)


# ---------------------------------------------------------------------------
# Point functions


class PointFunction:
    """Evaluatable real function: expression-backed, builtin, or callable.

    `singular_points` lists points where a builtin's value is declared
    rather than computed; the integrator pins tags there.
    """

    def __init__(
        self,
        fn: Callable,
        name: str,
        dim: int = 1,
        expr: Optional[Expr] = None,
        singular_points: tuple = (),
    ):
        self.fn = fn
        self.name = name
        self.dim = dim
        self.expr = expr
        self.singular_points = tuple(as_point(p) for p in singular_points)
        # hot path for the integrator: a float-tuple-in, float-out callable
        if expr is not None:
            self.fast_eval = lambda xs: _eval(expr, xs)
        else:
            self.fast_eval = fn

    @classmethod
    def from_expr(cls, source, dim: Optional[int] = None) -> "PointFunction":
        expr = parse(source) if isinstance(source, str) else source
        need = expr.max_var()
        if dim is None:
            dim = max(1, need)
        elif need > dim:
            raise ValueError(f"expression uses x{need} but dim={dim}")

        def fn(point):
            return expr.eval(point)

        return cls(fn, to_text(expr), dim=dim, expr=expr)

    @classmethod
    def from_callable(
        cls, fn: Callable, name: str, dim: int = 1, singular_points: tuple = ()
    ) -> "PointFunction":
        def call(point):
            if dim == 1:
                return fn(float(point[0]))
            return fn(point_floats(point))

        return cls(call, name, dim=dim, singular_points=singular_points)

    @classmethod
    def builtin(cls, name: str) -> "PointFunction":
        if name == "hk_primitive":
            return cls(lambda p: _hk_primitive(float(p[0])), name, singular_points=(0,))
        if name == "hk_derivative":
            return cls(lambda p: _hk_derivative(float(p[0])), name, singular_points=(0,))
        if name == "inv_sqrt":
            return cls(lambda p: _inv_sqrt(float(p[0])), name, singular_points=(0,))
        if name.startswith("heaviside_"):
            c = Fraction(name[len("heaviside_") :])
            fn = _heaviside(c)
            pf = cls(fn, name)
            pf.heaviside_threshold = c
            return pf
        raise ValueError(f"unknown builtin {name!r}")

    @classmethod
    def resolve(cls, source, dim: Optional[int] = None) -> "PointFunction":
        """Builtin by name, else parsed expression."""
        if isinstance(source, PointFunction):
            return source
        if isinstance(source, str):
            if source == "hk_primitive" or source == "hk_derivative" \
                    or source == "inv_sqrt" or source.startswith("heaviside_"):
                return cls.builtin(source)
            return cls.from_expr(source, dim=dim)
        if isinstance(source, Expr):
            return cls.from_expr(source, dim=dim)
        if callable(source):
            return cls.from_callable(source, getattr(source, "__name__", "fn"))
        raise TypeError(f"cannot interpret {source!r} as a point function")

    def __call__(self, point) -> float:
        return float(self.fn(as_point(point)))

    def eval_exact(self, point) -> Optional[Fraction]:
        point = as_point(point)
        if self.expr is not None:
            return self.expr.eval_exact(point)
        c = getattr(self, "heaviside_threshold", None)
        if c is not None:
            return Fraction(0) if point[0] < c else Fraction(1)
        return None

    def __repr__(self):
        return f"PointFunction({self.name})"


def _hk_primitive(x: float) -> float:
    # declared value 0 at the singular point; x*x underflow treated alike
    if x == 0.0 or x * x == 0.0:
        return 0.0
    return x * x * math.sin(1.0 / (x * x))


def _hk_derivative(x: float) -> float:
    if x == 0.0 or x * x == 0.0:
        return 0.0
    u = 1.0 / (x * x)
    return 2.0 * x * math.sin(u) - (2.0 / x) * math.cos(u)


def _inv_sqrt(x: float) -> float:
    if x == 0.0:
        return 0.0
    if x < 0.0:
        raise ValueError("inv_sqrt defined on [0, inf) only")
    return x**-0.5


def _heaviside(c: Fraction):
    def fn(point):
        return 0.0 if point[0] < c else 1.0

    return fn


# ---------------------------------------------------------------------------
# Interval functions


def _corner_sign(corner, box: Box) -> int:
    lows = sum(1 for c, (lo, _hi) in zip(corner, box.intervals) if c == lo)
    return -1 if lows % 2 else 1


class IntervalFunction:
    """Box -> real map: corner-generated (exactly additive) or table-backed.

    A corner generator g induces G(Q) = sum over corners of Q of
    (-1)^(#lo-coordinates) * g(corner), the n-dimensional increment;
    in one dimension this is G([a,b]) = g(b) - g(a).
    """

    def __init__(self, kind: str, **data):
        self.kind = kind  # 'corner' | 'table'
        self.__dict__.update(data)

    @classmethod
    def from_generator(cls, g) -> "IntervalFunction":
        g = PointFunction.resolve(g)
        return cls("corner", generator=g, name=f"corner({g.name})")

    @classmethod
    def length(cls) -> "IntervalFunction":
        g = cls.from_generator(PointFunction.from_expr("x"))
        g._volume_fast = True
        return g

    @classmethod
    def volume(cls, dim: int) -> "IntervalFunction":
        if dim == 1:
            return cls.length()
        text = "*".join(f"x{i + 1}" for i in range(dim))
        g = cls.from_generator(PointFunction.from_expr(text, dim=dim))
        g._volume_fast = True
        return g

    @classmethod
    def heaviside(cls, c) -> "IntervalFunction":
        from .intervals import as_rational

        return cls.from_generator(PointFunction.builtin(f"heaviside_{as_rational(c)}"))

    @classmethod
    def table(
        cls,
        entries: dict,
        parent: Box,
        depth: int,
        tolerance: float,
        name: str = "table",
    ) -> "IntervalFunction":
        return cls(
            "table",
            entries=dict(entries),
            parent=parent,
            depth=depth,
            tolerance=tolerance,
            name=name,
        )

    def value(self, box: Box) -> float:
        if self.kind == "corner":
            if getattr(self, "_volume_fast", False):
                return float(box.volume)
            from .hk import pairwise_sum

            terms = [
                _corner_sign(corner, box) * self.generator(corner)
                for corner in box.corners()
            ]
            return pairwise_sum(terms)
        try:
            return self.entries[box]
        except KeyError:
            raise KeyError(f"{box} not in {self.name} (depth {self.depth})") from None

    def value_exact(self, box: Box) -> Optional[Fraction]:
        if self.kind != "corner":
            return None
        total = Fraction(0)
        for corner in box.corners():
            v = self.generator.eval_exact(corner)
            if v is None:
                return None
            total += _corner_sign(corner, box) * v
        return total

    def __call__(self, box: Box) -> float:
        return self.value(box)

    def __repr__(self):
        return f"IntervalFunction({self.name})"


def ifn_eval(G: IntervalFunction, box: Box) -> float:
    """Evaluate an interval function on a box (alternating corner sum)."""
    return G.value(box)


class SuperadditiveFn:
    """Positive box function used as an n-dimensional control.

    Variants: c*|Q|^p, an expression of the side lengths (variables
    x1..xn), or an explicit table on dyadic cells.
    """

    def __init__(self, kind: str, **data):
        self.kind = kind  # 'volume_power' | 'sides' | 'table'
        self.__dict__.update(data)

    @classmethod
    def volume_power(cls, p, coeff=1) -> "SuperadditiveFn":
        from .intervals import as_rational

        return cls(
            "volume_power",
            p=as_rational(p),
            coeff=as_rational(coeff),
            name=f"{coeff}*|Q|^{p}",
        )

    @classmethod
    def from_side_expr(cls, source) -> "SuperadditiveFn":
        expr = parse(source) if isinstance(source, str) else source
        return cls("sides", expr=expr, name=f"sides:{to_text(expr)}")

    @classmethod
    def from_table(cls, entries: dict, parent: Box, depth: int, name="table"):
        return cls("table", entries=dict(entries), parent=parent, depth=depth, name=name)

    def value(self, box: Box) -> float:
        if self.kind == "volume_power":
            v = float(self.coeff) * float(box.volume) ** float(self.p)
        elif self.kind == "sides":
            sides = tuple(hi - lo for lo, hi in box.intervals)
            v = self.expr.eval(sides)
        else:
            try:
                v = self.entries[box]
            except KeyError:
                raise KeyError(f"{box} not in {self.name}") from None
        if not v > 0.0:
            raise ValueError(f"{self.name} is {v} on {box}; controls must be > 0")
        return v

    def value_exact(self, box: Box) -> Optional[Fraction]:
        if self.kind == "volume_power" and self.p.denominator == 1:
            return self.coeff * box.volume ** self.p.numerator
        if self.kind == "sides":
            sides = tuple(hi - lo for lo, hi in box.intervals)
            return self.expr.eval_exact(sides)
        return None

    def __call__(self, box: Box) -> float:
        return self.value(box)

    def __repr__(self):
        return f"SuperadditiveFn({self.name})"


def partition_defect(H, parent: Box, partition) -> float:
    """sum_Q H(Q) - H(parent): 0 for additive H, <= 0 for superadditive.

    Computed exactly (rational) whenever H admits exact evaluation on all
    cells, so additivity of corner-generated rational-polynomial functions
    tests to exactly zero.
    """
    cells = list(partition.cells if isinstance(partition, Partition) else partition)
    exact_parent = H.value_exact(parent) if hasattr(H, "value_exact") else None
    if exact_parent is not None:
        total = Fraction(0)
        ok = True
        for c in cells:
            v = H.value_exact(c)
            if v is None:
                ok = False
                break
            total += v
        if ok:
            return float(total - exact_parent)
    from .hk import pairwise_sum

    cells.sort(key=lambda c: c.intervals)
    return pairwise_sum([H.value(c) for c in cells]) - H.value(parent)


def positivity_report(G: IntervalFunction, boxes: Sequence[Box]) -> list:
    """Boxes where G < 0; Prop-5.4-style uses require an empty report."""
    return [b for b in boxes if G.value(b) < 0.0]
