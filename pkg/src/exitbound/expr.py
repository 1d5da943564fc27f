"""Scalar arithmetic expressions in the state variables y1..yn.

Drift and diffusion coefficients are declared as strings in scenario files
and compiled here into small immutable ASTs.  Evaluation is vectorized over
numpy arrays of points; a slow checked path pinpoints the offending
subexpression when a domain error (sqrt of a negative, division by zero,
overflow) occurs.

Grammar, loosest to tightest binding:

    expr   := term (('+'|'-') term)*
    term   := unary (('*'|'/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right-associative
    atom   := NUMBER | yK | func '(' expr ')' | '(' expr ')'

so ``-y1^2`` is ``-(y1^2)`` and ``2^3^2`` is ``2^(3^2)``.  Available
functions: sin, cos, exp, tanh, sqrt, abs.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Expr",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "ExprError",
    "ExprSyntaxError",
    "UnknownIdentifierError",
    "VariableRangeError",
    "ExprDomainError",
    "parse",
    "evaluate",
    "eval_many",
    "pretty",
    "is_constant",
    "constant_value",
]

FUNCTIONS = ("sin", "cos", "exp", "tanh", "sqrt", "abs")

_NUMPY_FUNCS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "tanh": np.tanh,
    "sqrt": np.sqrt,
    "abs": np.abs,
}


class ExprError(ValueError):
    """Base class for expression parsing and evaluation errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"syntax error at offset {offset}: {message}")
        self.offset = offset


class UnknownIdentifierError(ExprError):
    def __init__(self, name: str, offset: int):
        super().__init__(f"unknown identifier {name!r} at offset {offset}")
        self.name = name
        self.offset = offset


class VariableRangeError(ExprError):
    def __init__(self, name: str, offset: int, n: int):
        super().__init__(
            f"variable {name!r} at offset {offset} out of range for dimension {n}"
        )
        self.name = name
        self.offset = offset


class ExprDomainError(ExprError):
    """Evaluation failed; carries the offending subexpression text."""

    def __init__(self, message: str, subexpr: str):
        super().__init__(f"{message} in subexpression '{subexpr}'")
        self.subexpr = subexpr


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based, as written: y1..yn


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expr"


Expr = Num | Var | Neg | BinOp | Call


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)

_VAR_RE = re.compile(r"^y(\d+)$")


class _Tokenizer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.kind = None  # 'num' | 'ident' | 'op' | 'end'
        self.value = ""
        self.offset = 0
        self.advance()

    def advance(self):
        m = _TOKEN_RE.match(self.text, self.pos)
        if m is None:
            # Either end of input or an unexpected character after whitespace.
            rest = self.text[self.pos :]
            stripped = rest.lstrip()
            if not stripped:
                self.kind, self.value = "end", ""
                self.offset = len(self.text)
                return
            off = self.pos + (len(rest) - len(stripped))
            raise ExprSyntaxError(f"unexpected character {stripped[0]!r}", off)
        for kind in ("num", "ident", "op"):
            tok = m.group(kind)
            if tok is not None:
                self.kind, self.value = kind, tok
                self.offset = m.end() - len(tok)
                break
        self.pos = m.end()


class _Parser:
    def __init__(self, text: str, n: int):
        self.tk = _Tokenizer(text)
        self.n = n

    def parse(self) -> Expr:
        node = self.expr()
        if self.tk.kind != "end":
            raise ExprSyntaxError(
                f"unexpected {self.tk.value!r}, expected operator or end of input",
                self.tk.offset,
            )
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.tk.kind == "op" and self.tk.value in "+-":
            op = self.tk.value
            self.tk.advance()
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.tk.kind == "op" and self.tk.value in "*/":
            op = self.tk.value
            self.tk.advance()
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.tk.kind == "op" and self.tk.value == "-":
            self.tk.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.tk.kind == "op" and self.tk.value == "^":
            self.tk.advance()
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        tk = self.tk
        if tk.kind == "num":
            node = Num(float(tk.value))
            tk.advance()
            return node
        if tk.kind == "ident":
            name, offset = tk.value, tk.offset
            tk.advance()
            var = _VAR_RE.match(name)
            if var:
                index = int(var.group(1))
                if not 1 <= index <= self.n:
                    raise VariableRangeError(name, offset, self.n)
                return Var(index)
            if name in FUNCTIONS:
                if not (tk.kind == "op" and tk.value == "("):
                    raise ExprSyntaxError(
                        f"expected '(' after function {name!r}", tk.offset
                    )
                tk.advance()
                arg = self.expr()
                if not (tk.kind == "op" and tk.value == ")"):
                    raise ExprSyntaxError("expected ')'", tk.offset)
                tk.advance()
                return Call(name, arg)
            raise UnknownIdentifierError(name, offset)
        if tk.kind == "op" and tk.value == "(":
            tk.advance()
            node = self.expr()
            if not (tk.kind == "op" and tk.value == ")"):
                raise ExprSyntaxError("expected ')'", tk.offset)
            tk.advance()
            return node
        shown = tk.value if tk.kind != "end" else "end of input"
        raise ExprSyntaxError(
            f"unexpected {shown!r}, expected number, variable, function or '('",
            tk.offset,
        )


def parse(text: str, n: int) -> Expr:
    """Parse an expression over y1..yn (n may be 0 for pure constants)."""
    if not isinstance(text, str) or not text.strip():
        raise ExprSyntaxError("empty expression", 0)
    if n < 0:
        raise ValueError("dimension must be nonnegative")
    return _Parser(text, n).parse()


def _eval_array(node: Expr, pts: np.ndarray):
    """Unchecked vectorized evaluation; constants stay scalar for broadcasting."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return pts[:, node.index - 1]
    if isinstance(node, Neg):
        return -_eval_array(node.operand, pts)
    if isinstance(node, Call):
        return _NUMPY_FUNCS[node.func](_eval_array(node.arg, pts))
    a = _eval_array(node.left, pts)
    b = _eval_array(node.right, pts)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        return a / b
    return np.power(a, b)


def _eval_checked(node: Expr, y: np.ndarray) -> float:
    """Scalar evaluation that raises ExprDomainError at the first bad node."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return float(y[node.index - 1])
    if isinstance(node, Neg):
        return -_eval_checked(node.operand, y)
    if isinstance(node, Call):
        arg = _eval_checked(node.arg, y)
        if node.func == "sqrt" and arg < 0:
            raise ExprDomainError(f"sqrt of negative value {arg!r}", pretty(node))
        out = float(_NUMPY_FUNCS[node.func](arg))
        if not math.isfinite(out):
            raise ExprDomainError("overflow", pretty(node))
        return out
    a = _eval_checked(node.left, y)
    b = _eval_checked(node.right, y)
    if node.op == "/":
        if b == 0:
            raise ExprDomainError("division by zero", pretty(node))
        out = a / b
    elif node.op == "^":
        if a < 0 and b != math.floor(b):
            raise ExprDomainError(
                f"fractional power of negative base {a!r}", pretty(node)
            )
        if a == 0 and b < 0:
            raise ExprDomainError("zero raised to a negative power", pretty(node))
        out = float(np.power(a, b))
    elif node.op == "+":
        out = a + b
    elif node.op == "-":
        out = a - b
    else:
        out = a * b
    if not math.isfinite(out):
        raise ExprDomainError("non-finite result", pretty(node))
    return out


def eval_many(node: Expr, points) -> np.ndarray:
    """Evaluate at an (m, n) array of points, returning an (m,) float array.

    On any non-finite intermediate the first offending point is re-evaluated
    scalar-wise so the error names the exact subexpression.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    with np.errstate(all="ignore"):
        out = _eval_array(node, pts)
    out = np.broadcast_to(np.asarray(out, dtype=float), (pts.shape[0],))
    bad = ~np.isfinite(out)
    if bad.any():
        with np.errstate(all="ignore"):
            _eval_checked(node, pts[int(np.argmax(bad))])
        # The checked pass can succeed when the array pass saw a spurious
        # non-finite (it cannot for this function set); fail loudly anyway.
        raise ExprDomainError("non-finite result", pretty(node))
    return np.array(out, dtype=float)


def evaluate(node: Expr, point=()) -> float:
    """Scalar evaluation at one point (same code path as eval_many)."""
    y = np.asarray(point, dtype=float).reshape(1, -1)
    return float(eval_many(node, y)[0])


def is_constant(node: Expr) -> bool:
    """True when the expression references no variables."""
    if isinstance(node, Num):
        return True
    if isinstance(node, Var):
        return False
    if isinstance(node, Neg):
        return is_constant(node.operand)
    if isinstance(node, Call):
        return is_constant(node.arg)
    return is_constant(node.left) and is_constant(node.right)


def constant_value(node: Expr) -> float:
    if not is_constant(node):
        raise ValueError("expression is not constant")
    return evaluate(node, np.zeros((0,)))


# Precedence levels used by the printer; must mirror the grammar.
_PREC_ADD, _PREC_MUL, _PREC_NEG, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _prec(node: Expr) -> int:
    if isinstance(node, BinOp):
        if node.op in "+-":
            return _PREC_ADD
        if node.op in "*/":
            return _PREC_MUL
        return _PREC_POW
    if isinstance(node, Neg):
        return _PREC_NEG
    return _PREC_ATOM


def pretty(node: Expr) -> str:
    """Render with minimal parentheses; reparsing yields an identical tree."""
    return _pretty(node, 0)


def _pretty(node: Expr, context: int) -> str:
    if isinstance(node, Num):
        text = repr(node.value)
        return text[:-2] if text.endswith(".0") else text
    if isinstance(node, Var):
        return f"y{node.index}"
    if isinstance(node, Neg):
        body = f"-{_pretty(node.operand, _PREC_NEG)}"
        return body if _PREC_NEG >= context else f"({body})"
    if isinstance(node, Call):
        return f"{node.func}({_pretty(node.arg, 0)})"
    prec = _prec(node)
    if node.op == "^":
        # Left operand must be an atom; right operand lives at unary level.
        body = f"{_pretty(node.left, _PREC_ATOM)}^{_pretty(node.right, _PREC_NEG)}"
    else:
        body = (
            f"{_pretty(node.left, prec)} {node.op} {_pretty(node.right, prec + 1)}"
        )
    return body if prec >= context else f"({body})"
