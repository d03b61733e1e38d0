"""Piecewise-affine rate expressions.

A rate is a small expression tree over constants, coordinates ``x1..xd``,
the scale ``n`` and regime-indexed parameters, combined with ``+``, ``-``,
``*``, ``min``, ``max`` and ``pos`` (positive part). Trees evaluate
vectorized on numpy arrays and compile to a flat stack bytecode for the
numba kernels in :mod:`regime_lab._kernels`.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

# bytecode opcodes; must match _kernels
OP_CONST = 0
OP_X = 1
OP_ADD = 2
OP_SUB = 3
OP_MUL = 4
OP_MIN = 5
OP_MAX = 6
OP_POS = 7
OP_NEG = 8


class Expr:
    def __add__(self, other):
        return Bin("add", self, wrap(other))

    def __radd__(self, other):
        return Bin("add", wrap(other), self)

    def __sub__(self, other):
        return Bin("sub", self, wrap(other))

    def __rsub__(self, other):
        return Bin("sub", wrap(other), self)

    def __mul__(self, other):
        return Bin("mul", self, wrap(other))

    def __rmul__(self, other):
        return Bin("mul", wrap(other), self)

    def __neg__(self):
        return Neg(self)


@dataclass(frozen=True, eq=False)
class Const(Expr):
    value: float


@dataclass(frozen=True, eq=False)
class Coord(Expr):
    index: int  # 0-based


@dataclass(frozen=True, eq=False)
class Scale(Expr):
    """The scale parameter ``n``."""


@dataclass(frozen=True, eq=False)
class Param(Expr):
    """Regime-indexed parameter: ``values[k]`` in regime ``k``."""

    name: str
    values: tuple


@dataclass(frozen=True, eq=False)
class Bin(Expr):
    op: str
    a: Expr
    b: Expr


@dataclass(frozen=True, eq=False)
class Neg(Expr):
    a: Expr


@dataclass(frozen=True, eq=False)
class Pos(Expr):
    a: Expr


def wrap(v) -> Expr:
    if isinstance(v, Expr):
        return v
    return Const(float(v))


def x(i: int) -> Coord:
    return Coord(i)


N = Scale()


def emin(*args) -> Expr:
    out = wrap(args[0])
    for a in args[1:]:
        out = Bin("min", out, wrap(a))
    return out


def emax(*args) -> Expr:
    out = wrap(args[0])
    for a in args[1:]:
        out = Bin("max", out, wrap(a))
    return out


def pos(a) -> Expr:
    return Pos(wrap(a))


def esum(terms) -> Expr:
    terms = list(terms)
    if not terms:
        return Const(0.0)
    out = wrap(terms[0])
    for t in terms[1:]:
        out = out + t
    return out


def evaluate(e: Expr, X: np.ndarray, k: int, n: float):
    """Evaluate ``e`` at points ``X`` (shape ``(..., d)``) in regime ``k``."""
    if isinstance(e, Const):
        return np.full(X.shape[:-1], e.value)
    if isinstance(e, Coord):
        return X[..., e.index].astype(float, copy=False)
    if isinstance(e, Scale):
        return np.full(X.shape[:-1], float(n))
    if isinstance(e, Param):
        return np.full(X.shape[:-1], float(e.values[k]))
    if isinstance(e, Neg):
        return -evaluate(e.a, X, k, n)
    if isinstance(e, Pos):
        return np.maximum(evaluate(e.a, X, k, n), 0.0)
    a = evaluate(e.a, X, k, n)
    b = evaluate(e.b, X, k, n)
    if e.op == "add":
        return a + b
    if e.op == "sub":
        return a - b
    if e.op == "mul":
        return a * b
    if e.op == "min":
        return np.minimum(a, b)
    if e.op == "max":
        return np.maximum(a, b)
    raise ValueError(e.op)


def compile_expr(e: Expr, k: int, n: float):
    """Flatten ``e`` to postfix ``(ops, args, consts)`` with ``n`` and ``k`` bound."""
    ops, args, consts = [], [], []

    def push_const(v):
        consts.append(float(v))
        ops.append(OP_CONST)
        args.append(len(consts) - 1)

    def rec(node):
        if isinstance(node, Const):
            push_const(node.value)
        elif isinstance(node, Scale):
            push_const(n)
        elif isinstance(node, Param):
            push_const(node.values[k])
        elif isinstance(node, Coord):
            ops.append(OP_X)
            args.append(node.index)
        elif isinstance(node, Neg):
            rec(node.a)
            ops.append(OP_NEG)
            args.append(0)
        elif isinstance(node, Pos):
            rec(node.a)
            ops.append(OP_POS)
            args.append(0)
        else:
            rec(node.a)
            rec(node.b)
            ops.append({"add": OP_ADD, "sub": OP_SUB, "mul": OP_MUL,
                        "min": OP_MIN, "max": OP_MAX}[node.op])
            args.append(0)

    rec(e)
    return ops, args, consts


def stack_depth(e: Expr) -> int:
    if isinstance(e, (Const, Coord, Scale, Param)):
        return 1
    if isinstance(e, (Neg, Pos)):
        return stack_depth(e.a)
    return max(stack_depth(e.a), 1 + stack_depth(e.b))


def is_linear_free(e: Expr) -> bool:
    """True if no product of two coordinate-dependent factors occurs."""
    def dep(node):
        if isinstance(node, Coord):
            return True
        if isinstance(node, (Const, Scale, Param)):
            return False
        if isinstance(node, (Neg, Pos)):
            return dep(node.a)
        return dep(node.a) or dep(node.b)

    def ok(node):
        if isinstance(node, (Const, Coord, Scale, Param)):
            return True
        if isinstance(node, (Neg, Pos)):
            return ok(node.a)
        if node.op == "mul" and dep(node.a) and dep(node.b):
            return False
        return ok(node.a) and ok(node.b)

    return ok(e)


_FUNCS = {"min": emin, "max": emax, "pos": pos}


def parse(text: str, d: int, params: dict | None = None) -> Expr:
    """Parse a rate expression.

    Names: ``n``, ``x1`` .. ``xd``, and keys of ``params`` (each a scalar or
    a length-K sequence indexed by regime). Functions: ``min``, ``max``,
    ``pos``. Operators: ``+ - *`` and unary minus.
    """
    params = params or {}
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ValidationError(f"cannot parse rate expression {text!r}: {exc.msg}") from None

    def conv(node):
        if isinstance(node, ast.Expression):
            return conv(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return Const(float(node.value))
        if isinstance(node, ast.Name):
            name = node.id
            if name == "n":
                return N
            if name.startswith("x") and name[1:].isdigit():
                i = int(name[1:])
                if not 1 <= i <= d:
                    raise ValidationError(f"coordinate {name} out of range 1..{d}")
                return Coord(i - 1)
            if name in params:
                v = params[name]
                if np.ndim(v) == 0:
                    return Const(float(v))
                return Param(name, tuple(float(u) for u in v))
            raise ValidationError(f"unknown name {name!r} in rate expression")
        if isinstance(node, ast.BinOp):
            a, b = conv(node.left), conv(node.right)
            if isinstance(node.op, ast.Add):
                return a + b
            if isinstance(node.op, ast.Sub):
                return a - b
            if isinstance(node.op, ast.Mult):
                return a * b
            raise ValidationError(f"operator {type(node.op).__name__} not allowed")
        if isinstance(node, ast.UnaryOp):
            if isinstance(node.op, ast.USub):
                return -conv(node.operand)
            if isinstance(node.op, ast.UAdd):
                return conv(node.operand)
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
            fn = _FUNCS.get(node.func.id)
            if fn is None or node.keywords:
                raise ValidationError(f"function {node.func.id!r} not allowed")
            args = [conv(a) for a in node.args]
            if fn is pos and len(args) != 1:
                raise ValidationError("pos() takes one argument")
            if fn is not pos and len(args) < 2:
                raise ValidationError(f"{node.func.id}() takes at least two arguments")
            return fn(*args)
        raise ValidationError(f"unsupported syntax in rate expression {text!r}")

    return conv(tree)
