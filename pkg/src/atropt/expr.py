"""Immutable scalar expression DAGs with exact first derivatives.

Expressions are built from variables and constants with the usual operators
plus ``log``, ``exp``, ``tanh`` and ``sigmoid``. Every expression compiles
lazily to a flat tape (children before parents), which makes evaluation and
reverse-mode differentiation cheap enough to sit in a solver's inner loop.

Domain failures (log of a non-positive value, fractional power of a negative
base, division by zero, overflow) raise :class:`EvalError` instead of
producing NaN or Inf, so callers can classify them as solver statuses.
"""

from __future__ import annotations

import math
from typing import Iterable, Mapping

__all__ = [
    "Expression",
    "EvalError",
    "const",
    "var",
    "log",
    "exp",
    "tanh",
    "sigmoid",
    "expr_sum",
    "evaluate",
    "gradient",
    "jacobian",
    "incidence_vars",
]

# Node kinds, kept as small ints for fast dispatch in the tape loops.
CONST = 0
VAR = 1
SUM = 2
PROD = 3
DIV = 4
POW = 5
LOG = 6
EXP = 7
TANH = 8
SIGMOID = 9

_KIND_NAMES = {
    CONST: "const",
    VAR: "var",
    SUM: "sum",
    PROD: "prod",
    DIV: "div",
    POW: "pow",
    LOG: "log",
    EXP: "exp",
    TANH: "tanh",
    SIGMOID: "sigmoid",
}

# exp(x) overflows double precision just above this.
_EXP_MAX_ARG = 709.0

DOMAIN_VIOLATION = "domain_violation"
MISSING_VARIABLE = "missing_variable"


class EvalError(Exception):
    """Raised when an expression cannot be evaluated at a point.

    ``kind`` is one of ``domain_violation`` or ``missing_variable``.
    ``origin`` accumulates context (offending operation, variable, equation)
    as the error propagates outward, newest first.
    """

    def __init__(self, kind, message, origin=None):
        super().__init__(message)
        self.kind = kind
        self.message = message
        self.origin = list(origin) if origin else []
        # Attached by solvers that translate a failed inner solve into an
        # evaluation error for the outer problem.
        self.report = None

    def add_context(self, note: str) -> "EvalError":
        self.origin.insert(0, note)
        return self

    def trace(self) -> str:
        return " <- ".join([self.message] + self.origin)


class Expression:
    """One node of an immutable expression DAG.

    Construct through :func:`const`, :func:`var` and the overloaded
    operators; sharing a sub-expression between parents shares the node.
    """

    __slots__ = ("kind", "children", "payload", "_tape", "_incidence")

    def __init__(self, kind, children=(), payload=None):
        self.kind = kind
        self.children = children
        self.payload = payload
        self._tape = None
        self._incidence = None

    # -- construction ------------------------------------------------

    def __add__(self, other):
        return Expression(SUM, (self, as_expr(other)))

    def __radd__(self, other):
        return Expression(SUM, (as_expr(other), self))

    def __sub__(self, other):
        return Expression(SUM, (self, Expression(PROD, (_NEG_ONE, as_expr(other)))))

    def __rsub__(self, other):
        return Expression(SUM, (as_expr(other), Expression(PROD, (_NEG_ONE, self))))

    def __mul__(self, other):
        return Expression(PROD, (self, as_expr(other)))

    def __rmul__(self, other):
        return Expression(PROD, (as_expr(other), self))

    def __truediv__(self, other):
        return Expression(DIV, (self, as_expr(other)))

    def __rtruediv__(self, other):
        return Expression(DIV, (as_expr(other), self))

    def __pow__(self, other):
        return Expression(POW, (self, as_expr(other)))

    def __neg__(self):
        return Expression(PROD, (_NEG_ONE, self))

    # -- introspection -----------------------------------------------

    def __repr__(self):
        if self.kind == CONST:
            return f"const({self.payload!r})"
        if self.kind == VAR:
            return f"var({self.payload!r})"
        return f"<{_KIND_NAMES[self.kind]} expr at {id(self):#x}>"


_NEG_ONE = Expression(CONST, (), -1.0)


def as_expr(x) -> Expression:
    if isinstance(x, Expression):
        return x
    if isinstance(x, (int, float)):
        return Expression(CONST, (), float(x))
    raise TypeError(f"cannot treat {type(x).__name__} as an expression")


def const(value: float) -> Expression:
    return Expression(CONST, (), float(value))


def var(name: str) -> Expression:
    if not name:
        raise ValueError("variable name must be non-empty")
    return Expression(VAR, (), name)


def log(x) -> Expression:
    return Expression(LOG, (as_expr(x),))


def exp(x) -> Expression:
    return Expression(EXP, (as_expr(x),))


def tanh(x) -> Expression:
    return Expression(TANH, (as_expr(x),))


def sigmoid(x) -> Expression:
    return Expression(SIGMOID, (as_expr(x),))


def expr_sum(terms: Iterable) -> Expression:
    """N-ary sum; avoids deep chains when adding many balance terms."""
    terms = tuple(as_expr(t) for t in terms)
    if not terms:
        return Expression(CONST, (), 0.0)
    if len(terms) == 1:
        return terms[0]
    return Expression(SUM, terms)


# -- tape compilation ----------------------------------------------------


def _compile(root: Expression):
    """Flatten the DAG into (nodes, child index tuples), children first."""
    tape = root._tape
    if tape is not None:
        return tape
    index = {}
    nodes = []
    child_idx = []
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if key in index:
            continue
        if expanded or not node.children:
            index[key] = len(nodes)
            nodes.append(node)
            child_idx.append(tuple(index[id(c)] for c in node.children))
        else:
            stack.append((node, True))
            for c in reversed(node.children):
                if id(c) not in index:
                    stack.append((c, False))
    tape = (nodes, child_idx)
    root._tape = tape
    return tape


def _domain(message, origin=None):
    return EvalError(DOMAIN_VIOLATION, message, origin)


def _forward(nodes, child_idx, point):
    """Evaluate the tape, returning the value array. Raises EvalError."""
    vals = [0.0] * len(nodes)
    for i, node in enumerate(nodes):
        kind = node.kind
        if kind == CONST:
            vals[i] = node.payload
        elif kind == VAR:
            try:
                vals[i] = point[node.payload]
            except KeyError:
                raise EvalError(
                    MISSING_VARIABLE, f"no value supplied for variable {node.payload!r}"
                ) from None
        elif kind == SUM:
            vals[i] = math.fsum(vals[j] for j in child_idx[i]) if len(child_idx[i]) > 4 else sum(
                vals[j] for j in child_idx[i]
            )
        elif kind == PROD:
            p = 1.0
            for j in child_idx[i]:
                p *= vals[j]
            vals[i] = p
        elif kind == DIV:
            a, b = child_idx[i]
            if vals[b] == 0.0:
                raise _domain(_describe_operand("division by zero", nodes[b], vals[b]))
            vals[i] = vals[a] / vals[b]
        elif kind == POW:
            a, b = child_idx[i]
            base, expo = vals[a], vals[b]
            if base < 0.0 and expo != round(expo):
                raise _domain(
                    _describe_operand(
                        f"negative base {base!r} raised to non-integer power {expo!r}",
                        nodes[a],
                        base,
                    )
                )
            if base == 0.0 and expo < 0.0:
                raise _domain(f"zero raised to negative power {expo!r}")
            try:
                vals[i] = base ** expo
            except OverflowError:
                raise _domain(f"overflow in {base!r} ** {expo!r}") from None
        elif kind == LOG:
            (a,) = child_idx[i]
            v = vals[a]
            if v <= 0.0:
                raise _domain(_describe_operand(f"log of non-positive value {v!r}", nodes[a], v))
            vals[i] = math.log(v)
        elif kind == EXP:
            (a,) = child_idx[i]
            v = vals[a]
            if v > _EXP_MAX_ARG:
                raise _domain(f"overflow in exp({v!r})")
            vals[i] = math.exp(v)
        elif kind == TANH:
            (a,) = child_idx[i]
            vals[i] = math.tanh(vals[a])
        elif kind == SIGMOID:
            (a,) = child_idx[i]
            v = vals[a]
            if v >= 0.0:
                vals[i] = 1.0 / (1.0 + math.exp(-v))
            else:
                e = math.exp(v)
                vals[i] = e / (1.0 + e)
        else:  # pragma: no cover - construction guards against this
            raise AssertionError(f"unknown node kind {kind}")
    return vals


def _describe_operand(message, node, value):
    if node.kind == VAR:
        return f"{message} (operand is variable {node.payload!r})"
    return message


def evaluate(expr: Expression, point: Mapping[str, float]) -> float:
    """Exact value of ``expr`` at ``point``; raises EvalError, never NaN/Inf."""
    nodes, child_idx = _compile(expr)
    vals = _forward(nodes, child_idx, point)
    result = vals[-1]
    if math.isnan(result) or math.isinf(result):
        raise _domain(f"non-finite result {result!r}")
    return result


def gradient(expr: Expression, point: Mapping[str, float]) -> dict:
    """Sparse exact gradient via one reverse sweep over the tape.

    Returns {variable name: partial}; variables without structural incidence
    are absent.
    """
    nodes, child_idx = _compile(expr)
    vals = _forward(nodes, child_idx, point)
    n = len(nodes)
    adj = [0.0] * n
    adj[n - 1] = 1.0
    out = {}
    for i in range(n - 1, -1, -1):
        a_i = adj[i]
        node = nodes[i]
        kind = node.kind
        if kind == VAR:
            name = node.payload
            out[name] = out.get(name, 0.0) + a_i
            continue
        if kind == CONST or a_i == 0.0:
            continue
        idx = child_idx[i]
        if kind == SUM:
            for j in idx:
                adj[j] += a_i
        elif kind == PROD:
            if len(idx) == 2:
                j0, j1 = idx
                adj[j0] += a_i * vals[j1]
                adj[j1] += a_i * vals[j0]
            else:
                # prefix/suffix products; robust when some factors are zero
                k = len(idx)
                pre = [1.0] * (k + 1)
                for t in range(k):
                    pre[t + 1] = pre[t] * vals[idx[t]]
                suf = 1.0
                for t in range(k - 1, -1, -1):
                    adj[idx[t]] += a_i * pre[t] * suf
                    suf *= vals[idx[t]]
        elif kind == DIV:
            j0, j1 = idx
            adj[j0] += a_i / vals[j1]
            adj[j1] -= a_i * vals[j0] / (vals[j1] * vals[j1])
        elif kind == POW:
            j0, j1 = idx
            base, expo = vals[j0], vals[j1]
            if expo != 0.0:
                if base == 0.0:
                    # d(base^expo)/dbase at 0 is 0 for expo > 1, expo for expo == 1
                    adj[j0] += a_i * (expo if expo == 1.0 else 0.0)
                else:
                    adj[j0] += a_i * expo * vals[i] / base
            if nodes[j1].kind != CONST:
                if base <= 0.0:
                    raise _domain(
                        f"derivative of {base!r} ** e with symbolic exponent needs base > 0"
                    )
                adj[j1] += a_i * vals[i] * math.log(base)
        elif kind == LOG:
            (j0,) = idx
            adj[j0] += a_i / vals[j0]
        elif kind == EXP:
            (j0,) = idx
            adj[j0] += a_i * vals[i]
        elif kind == TANH:
            (j0,) = idx
            adj[j0] += a_i * (1.0 - vals[i] * vals[i])
        elif kind == SIGMOID:
            (j0,) = idx
            adj[j0] += a_i * vals[i] * (1.0 - vals[i])
    return out


def jacobian(constraints, point: Mapping[str, float]):
    """Row-wise sparse Jacobian: list of {var: partial} in constraint order.

    An EvalError raised by row i is annotated with the row index before it
    propagates.
    """
    rows = []
    for i, expr in enumerate(constraints):
        try:
            rows.append(gradient(expr, point))
        except EvalError as err:
            raise err.add_context(f"jacobian row {i}")
    return rows


def incidence_vars(expr: Expression) -> frozenset:
    """All variable names reachable in the DAG (structural incidence)."""
    cached = expr._incidence
    if cached is not None:
        return cached
    nodes, _ = _compile(expr)
    names = frozenset(n.payload for n in nodes if n.kind == VAR)
    expr._incidence = names
    return names
