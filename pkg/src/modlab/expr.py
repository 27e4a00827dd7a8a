"""A small whitelisted expression language for weights, profiles and metrics.

Grammar: numbers, ``+ - * / ** ^``, parentheses, the functions ``pow``,
``log``, ``exp``, ``sqrt``, ``abs``, ``norm``, the constants ``e`` and
``pi``, and ``|...|`` bars (``|x|`` is the Euclidean norm of the point).

Radial expressions use the variable ``t`` (alias ``r``).  Point expressions
use ``x`` (the point), ``x1``, ``x2``, ``x3`` (its coordinates) and ``r``
(its norm).
"""
from __future__ import annotations

import ast
import re
from typing import Callable

import numpy as np

_FUNCS = {
    "pow": np.power,
    "log": np.log,
    "exp": np.exp,
    "sqrt": np.sqrt,
    "abs": np.abs,
}
_CONSTS = {"e": np.e, "pi": np.pi}
_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}

_BARS = re.compile(r"\|([^|]+)\|")


class ExpressionError(ValueError):
    pass


def _preprocess(text: str) -> str:
    text = text.replace("^", "**")
    text = _BARS.sub(lambda m: f"norm({m.group(1)})" if m.group(1).strip() == "x"
                     else f"abs({m.group(1)})", text)
    return text


def _compile(node, names):
    if isinstance(node, ast.Expression):
        return _compile(node.body, names)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool):
        val = float(node.value)
        return lambda env: val
    if isinstance(node, ast.Name):
        if node.id in _CONSTS:
            val = _CONSTS[node.id]
            return lambda env: val
        if node.id not in names:
            raise ExpressionError(f"unknown name {node.id!r}")
        key = node.id
        return lambda env: env[key]
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        op = _BINOPS[type(node.op)]
        lhs, rhs = _compile(node.left, names), _compile(node.right, names)
        return lambda env: op(lhs(env), rhs(env))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        arg = _compile(node.operand, names)
        if isinstance(node.op, ast.USub):
            return lambda env: np.negative(arg(env))
        return arg
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
        fname = node.func.id
        args = [_compile(a, names) for a in node.args]
        if fname == "norm":
            if len(node.args) != 1 or not (isinstance(node.args[0], ast.Name) and node.args[0].id == "x"):
                raise ExpressionError("norm() takes exactly the point x")
            return lambda env: env["r"]
        if fname not in _FUNCS:
            raise ExpressionError(f"function {fname!r} is not allowed")
        want = 2 if fname == "pow" else 1
        if len(args) != want:
            raise ExpressionError(f"{fname}() takes {want} argument(s)")
        fn = _FUNCS[fname]
        return lambda env: fn(*(a(env) for a in args))
    raise ExpressionError(f"unsupported syntax: {ast.dump(node)[:60]}")


def _parse(text: str, names) -> Callable:
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError("expression must be a non-empty string")
    try:
        tree = ast.parse(_preprocess(text), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {text!r}: {exc.msg}") from None
    return _compile(tree, names)


def radial_function(text: str) -> Callable:
    """Compile an expression in ``t`` into a vectorised function of the radius."""
    fn = _parse(text, {"t", "r"})

    def f(t):
        t = np.asarray(t, dtype=float)
        with np.errstate(all="ignore"):
            return np.broadcast_to(np.asarray(fn({"t": t, "r": t}), dtype=float), t.shape)
    f.expression = text
    return f


def point_function(text: str) -> Callable:
    """Compile an expression in ``x`` into a field on ``(m, n)`` point arrays."""
    fn = _parse(text, {"x", "r", "x1", "x2", "x3"})

    def f(pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        env = {"x": pts, "r": np.linalg.norm(pts, axis=1)}
        for i in range(pts.shape[1]):
            env[f"x{i + 1}"] = pts[:, i]
        with np.errstate(all="ignore"):
            val = np.asarray(fn(env), dtype=float)
        if val.ndim > 1:
            raise ExpressionError("point expression must be scalar-valued; use |x| for the norm")
        return np.broadcast_to(val, (len(pts),))
    f.expression = text
    return f
