"""One-variable math expressions for problem coefficients and rewards.

Grammar (precedence low to high):

    expr    := term (('+'|'-') term)*
    term    := factor (('*'|'/') factor)*
    factor  := unary ('^' factor)?          # right-associative
    unary   := '-' unary | atom
    atom    := NUMBER | 'x' | NAME | NAME '(' args ')' | '(' expr ')'

Calls: exp, ln, sqrt, abs, min, max, pow and the piecewise form
if(cond, then, else) where cond compares two sub-expressions with
< <= > >= ==.  Every other identifier must be a declared constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ArityMismatch, EvalDomainError, ExprSyntaxError, UnknownIdentifier

_UNARY_FUNCS = ("exp", "ln", "sqrt", "abs")
_BINARY_FUNCS = ("min", "max", "pow")
_COMPARISONS = ("<=", "<", ">=", ">", "==")

DEFAULT_CONSTANTS = {"pi": math.pi, "e": math.e}


# --- AST --------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    pass


@dataclass(frozen=True)
class Const:
    name: str
    value: float


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class BinOp:
    op: str  # + - * / ^
    left: object
    right: object


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


@dataclass(frozen=True)
class Comparison:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Piecewise:
    cond: Comparison
    then: object
    other: object


class Expr:
    """Parsed expression; immutable, safe for concurrent evaluation."""

    def __init__(self, ast, source=None):
        self.ast = ast
        self.source = source

    def __call__(self, x):
        return evaluate(self, x)

    def __repr__(self):
        return f"Expr({to_source(self.ast)!r})"


# --- tokenizer --------------------------------------------------------

def _tokenize(text):
    tokens = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            try:
                value = float(text[i:j])
            except ValueError:
                raise ExprSyntaxError(f"bad number {text[i:j]!r}", i)
            tokens.append(("num", value, i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("name", text[i:j], i))
            i = j
            continue
        two = text[i:i + 2]
        if two in ("<=", ">=", "=="):
            tokens.append(("op", two, i))
            i += 2
            continue
        if ch in "+-*/^(),<>":
            tokens.append(("op", ch, i))
            i += 1
            continue
        raise ExprSyntaxError(f"unexpected character {ch!r}", i)
    tokens.append(("end", "", n))
    return tokens


# --- parser -----------------------------------------------------------

class _Parser:
    def __init__(self, tokens, constants):
        self.tokens = tokens
        self.pos = 0
        self.constants = constants

    def peek(self):
        return self.tokens[self.pos]

    def take(self, kind=None, value=None):
        tok = self.tokens[self.pos]
        if kind is not None and tok[0] != kind:
            raise ExprSyntaxError(f"expected {value or kind}, got {tok[1]!r}", tok[2])
        if value is not None and tok[1] != value:
            raise ExprSyntaxError(f"expected {value!r}, got {tok[1]!r}", tok[2])
        self.pos += 1
        return tok

    def parse_expr(self):
        node = self.parse_term()
        while self.peek()[:2] in (("op", "+"), ("op", "-")):
            op = self.take()[1]
            node = BinOp(op, node, self.parse_term())
        return node

    def parse_term(self):
        node = self.parse_factor()
        while self.peek()[:2] in (("op", "*"), ("op", "/")):
            op = self.take()[1]
            node = BinOp(op, node, self.parse_factor())
        return node

    def parse_factor(self):
        return self.parse_unary()

    def parse_unary(self):
        # '^' binds tighter than unary minus: -x^2 is -(x^2)
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.parse_unary())
        return self.parse_power()

    def parse_power(self):
        node = self.parse_atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            node = BinOp("^", node, self.parse_unary())  # right-assoc
        return node

    def parse_atom(self):
        tok = self.peek()
        if tok[0] == "num":
            self.take()
            return Num(tok[1])
        if tok[0] == "op" and tok[1] == "(":
            self.take()
            node = self.parse_expr()
            self.take("op", ")")
            return node
        if tok[0] == "name":
            name = self.take()[1]
            if self.peek()[:2] == ("op", "("):
                return self.parse_call(name, tok[2])
            if name == "x":
                return Var()
            if name in self.constants:
                return Const(name, float(self.constants[name]))
            raise UnknownIdentifier(f"unknown identifier {name!r} at position {tok[2]}")
        raise ExprSyntaxError(f"unexpected token {tok[1]!r}", tok[2])

    def parse_call(self, name, at):
        self.take("op", "(")
        if name == "if":
            cond = self.parse_comparison()
            self.take("op", ",")
            then = self.parse_expr()
            self.take("op", ",")
            other = self.parse_expr()
            self.take("op", ")")
            return Piecewise(cond, then, other)
        args = [self.parse_expr()]
        while self.peek()[:2] == ("op", ","):
            self.take()
            args.append(self.parse_expr())
        self.take("op", ")")
        if name in _UNARY_FUNCS:
            if len(args) != 1:
                raise ArityMismatch(f"{name} takes 1 argument, got {len(args)}")
        elif name in _BINARY_FUNCS:
            if len(args) != 2:
                raise ArityMismatch(f"{name} takes 2 arguments, got {len(args)}")
        else:
            raise UnknownIdentifier(f"unknown function {name!r} at position {at}")
        return Call(name, tuple(args))

    def parse_comparison(self):
        left = self.parse_expr()
        tok = self.peek()
        if tok[0] != "op" or tok[1] not in _COMPARISONS:
            raise ExprSyntaxError("expected comparison operator", tok[2])
        op = self.take()[1]
        right = self.parse_expr()
        return Comparison(op, left, right)


def parse(text, constants=None):
    """Parse an expression string into an Expr."""
    if not text or not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    consts = dict(DEFAULT_CONSTANTS)
    if constants:
        consts.update(constants)
    parser = _Parser(_tokenize(text), consts)
    node = parser.parse_expr()
    tok = parser.peek()
    if tok[0] != "end":
        raise ExprSyntaxError(f"trailing input {tok[1]!r}", tok[2])
    return Expr(node, source=text)


# --- printer ----------------------------------------------------------

def _prec(node):
    if isinstance(node, BinOp):
        return {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}[node.op]
    if isinstance(node, Neg):
        return 3
    return 9


def to_source(node):
    if isinstance(node, Expr):
        node = node.ast
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return "x"
    if isinstance(node, Const):
        return node.name
    if isinstance(node, Neg):
        inner = to_source(node.arg)
        if _prec(node.arg) < 3:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, BinOp):
        lp, rp = _prec(node.left), _prec(node.right)
        p = _prec(node)
        left = to_source(node.left)
        right = to_source(node.right)
        # '-' and '/' are left-associative, '^' right-associative
        if lp < p or (node.op == "^" and lp == p):
            left = f"({left})"
        if rp < p or (node.op in ("-", "/") and rp == p):
            right = f"({right})"
        return f"{left} {node.op} {right}"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(to_source(a) for a in node.args)})"
    if isinstance(node, Comparison):
        return f"{to_source(node.left)} {node.op} {to_source(node.right)}"
    if isinstance(node, Piecewise):
        return (f"if({to_source(node.cond)}, {to_source(node.then)}, "
                f"{to_source(node.other)})")
    raise TypeError(f"not an AST node: {node!r}")


# --- evaluation -------------------------------------------------------

def _eval_scalar(node, x):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return x
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Neg):
        return -_eval_scalar(node.arg, x)
    if isinstance(node, BinOp):
        a = _eval_scalar(node.left, x)
        b = _eval_scalar(node.right, x)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            if b == 0.0:
                raise EvalDomainError("division by zero", node)
            return a / b
        # '^'
        try:
            return math.pow(a, b) if a >= 0 or b == int(b) else float("nan")
        except (ValueError, OverflowError):
            raise EvalDomainError(f"pow({a}, {b}) undefined", node)
    if isinstance(node, Call):
        args = [_eval_scalar(a, x) for a in node.args]
        if node.func == "exp":
            try:
                return math.exp(args[0])
            except OverflowError:
                raise EvalDomainError(f"exp({args[0]}) overflows", node)
        if node.func == "ln":
            if args[0] <= 0.0:
                raise EvalDomainError(f"ln of non-positive {args[0]}", node)
            return math.log(args[0])
        if node.func == "sqrt":
            if args[0] < 0.0:
                raise EvalDomainError(f"sqrt of negative {args[0]}", node)
            return math.sqrt(args[0])
        if node.func == "abs":
            return abs(args[0])
        if node.func == "min":
            return min(args)
        if node.func == "max":
            return max(args)
        if node.func == "pow":
            try:
                return math.pow(args[0], args[1])
            except (ValueError, OverflowError):
                raise EvalDomainError(f"pow{tuple(args)} undefined", node)
    if isinstance(node, Piecewise):
        if _eval_cond_scalar(node.cond, x):
            return _eval_scalar(node.then, x)
        return _eval_scalar(node.other, x)
    raise TypeError(f"not an AST node: {node!r}")


def _eval_cond_scalar(cond, x):
    a = _eval_scalar(cond.left, x)
    b = _eval_scalar(cond.right, x)
    if cond.op == "<":
        return a < b
    if cond.op == "<=":
        return a <= b
    if cond.op == ">":
        return a > b
    if cond.op == ">=":
        return a >= b
    return a == b


def _eval_array(node, x):
    if isinstance(node, Num):
        return np.full_like(x, node.value)
    if isinstance(node, Var):
        return x
    if isinstance(node, Const):
        return np.full_like(x, node.value)
    if isinstance(node, Neg):
        return -_eval_array(node.arg, x)
    if isinstance(node, BinOp):
        a = _eval_array(node.left, x)
        b = _eval_array(node.right, x)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if node.op == "+":
                return a + b
            if node.op == "-":
                return a - b
            if node.op == "*":
                return a * b
            if node.op == "/":
                return a / b
            return np.power(a, b)
    if isinstance(node, Call):
        args = [_eval_array(a, x) for a in node.args]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if node.func == "exp":
                return np.exp(args[0])
            if node.func == "ln":
                return np.log(args[0])
            if node.func == "sqrt":
                return np.sqrt(args[0])
            if node.func == "abs":
                return np.abs(args[0])
            if node.func == "min":
                return np.minimum(args[0], args[1])
            if node.func == "max":
                return np.maximum(args[0], args[1])
            return np.power(args[0], args[1])
    if isinstance(node, Piecewise):
        cond = _eval_cond_array(node.cond, x)
        return np.where(cond, _eval_array(node.then, x), _eval_array(node.other, x))
    raise TypeError(f"not an AST node: {node!r}")


def _eval_cond_array(cond, x):
    a = _eval_array(cond.left, x)
    b = _eval_array(cond.right, x)
    if cond.op == "<":
        return a < b
    if cond.op == "<=":
        return a <= b
    if cond.op == ">":
        return a > b
    if cond.op == ">=":
        return a >= b
    return a == b


def evaluate(e, x):
    """Evaluate e at x (scalar or numpy array).

    Scalar evaluation reports domain errors with the offending node;
    array evaluation propagates nan/inf instead (callers on the hot path
    guarantee their domains).
    """
    node = e.ast if isinstance(e, Expr) else e
    if isinstance(x, np.ndarray):
        return _eval_array(node, np.asarray(x, dtype=float))
    return _eval_scalar(node, float(x))


# --- one-sided limits -------------------------------------------------
#
# A first-order jet (value, slope) of every sub-expression at x0 lets a
# comparison whose two sides agree AT x0 be decided by how they separate
# infinitesimally to the chosen side.  This selects the active piecewise
# branch symbolically; no numeric sampling near the breakpoint.

class _Jet:
    __slots__ = ("val", "dot")

    def __init__(self, val, dot):
        self.val = val
        self.dot = dot


def _jet_eval(node, x0, side):
    if isinstance(node, Num):
        return _Jet(node.value, 0.0)
    if isinstance(node, Const):
        return _Jet(node.value, 0.0)
    if isinstance(node, Var):
        return _Jet(x0, 1.0)
    if isinstance(node, Neg):
        j = _jet_eval(node.arg, x0, side)
        return _Jet(-j.val, -j.dot)
    if isinstance(node, BinOp):
        a = _jet_eval(node.left, x0, side)
        b = _jet_eval(node.right, x0, side)
        if node.op == "+":
            return _Jet(a.val + b.val, a.dot + b.dot)
        if node.op == "-":
            return _Jet(a.val - b.val, a.dot - b.dot)
        if node.op == "*":
            return _Jet(a.val * b.val, a.dot * b.val + a.val * b.dot)
        if node.op == "/":
            if b.val == 0.0:
                raise EvalDomainError("division by zero", node)
            return _Jet(a.val / b.val, (a.dot * b.val - a.val * b.dot) / b.val ** 2)
        return _jet_pow(a, b, node)
    if isinstance(node, Call):
        args = [_jet_eval(arg, x0, side) for arg in node.args]
        return _jet_call(node, args, side)
    if isinstance(node, Piecewise):
        if _jet_cond(node.cond, x0, side):
            return _jet_eval(node.then, x0, side)
        return _jet_eval(node.other, x0, side)
    raise TypeError(f"not an AST node: {node!r}")


def _jet_pow(a, b, node):
    try:
        v = math.pow(a.val, b.val)
    except (ValueError, OverflowError):
        raise EvalDomainError(f"pow({a.val}, {b.val}) undefined", node)
    if a.val > 0:
        dot = v * (b.dot * math.log(a.val) + b.val * a.dot / a.val)
    elif b.dot == 0.0 and b.val == int(b.val):
        dot = b.val * math.pow(a.val, b.val - 1) * a.dot if a.val != 0 or b.val >= 1 else 0.0
    else:
        dot = 0.0
    return _Jet(v, dot)


def _jet_call(node, args, side):
    f = node.func
    a = args[0]
    if f == "exp":
        v = math.exp(a.val)
        return _Jet(v, v * a.dot)
    if f == "ln":
        if a.val <= 0:
            raise EvalDomainError(f"ln of non-positive {a.val}", node)
        return _Jet(math.log(a.val), a.dot / a.val)
    if f == "sqrt":
        if a.val < 0:
            raise EvalDomainError(f"sqrt of negative {a.val}", node)
        dot = a.dot / (2 * math.sqrt(a.val)) if a.val > 0 else 0.0
        return _Jet(math.sqrt(a.val), dot)
    if f == "abs":
        if a.val > 0 or (a.val == 0 and side * a.dot > 0):
            return _Jet(abs(a.val), a.dot)
        return _Jet(abs(a.val), -a.dot)
    b = args[1]
    if f in ("min", "max"):
        lt = a.val < b.val or (a.val == b.val and side * (a.dot - b.dot) < 0)
        if f == "min":
            return a if lt else b
        return b if lt else a
    return _jet_pow(a, b, node)


def _jet_cond(cond, x0, side):
    a = _jet_eval(cond.left, x0, side)
    b = _jet_eval(cond.right, x0, side)
    # sign of (left - right) just to the chosen side of x0
    diff = a.val - b.val
    if diff == 0.0:
        diff = side * (a.dot - b.dot)
    if cond.op == "<":
        return diff < 0
    if cond.op == "<=":
        return diff <= 0
    if cond.op == ">":
        return diff > 0
    if cond.op == ">=":
        return diff >= 0
    return diff == 0


@dataclass(frozen=True)
class Breakpoints:
    """Sorted x-values where an expression may jump or kink."""

    points: tuple

    def __init__(self, points=()):
        pts = tuple(sorted(float(p) for p in points))
        for a, b in zip(pts, pts[1:]):
            if a >= b:
                raise ValueError("breakpoints must be strictly increasing")
        object.__setattr__(self, "points", pts)

    def __iter__(self):
        return iter(self.points)


def one_sided_limits(e, bp, x0):
    """Left limit, right limit and value of e at x0.

    Branch selection is symbolic: each side evaluates the piecewise
    branch that is active infinitesimally to that side of x0, so the
    limits are exact for the admitted expression class.  At points where
    nothing switches all three returns coincide.
    """
    node = e.ast if isinstance(e, Expr) else e
    value = _eval_scalar(node, float(x0))
    left = _jet_eval(node, float(x0), -1.0).val
    right = _jet_eval(node, float(x0), +1.0).val
    return left, right, value


def one_sided_derivative(e, x0, side, h=1e-6):
    """One-sided derivative of e at x0 by a second-order difference
    taken strictly within the branch active on that side."""
    node = e.ast if isinstance(e, Expr) else e
    s = 1.0 if side > 0 else -1.0
    f0 = _jet_eval(node, float(x0), s).val
    step = h * max(1.0, abs(float(x0)))
    f1 = _eval_scalar(node, float(x0) + s * step)
    f2 = _eval_scalar(node, float(x0) + 2 * s * step)
    return s * (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * step)
