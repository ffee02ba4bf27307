"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tape` records every operation applied to a :class:`Var` in
evaluation order, so the node list is already topologically sorted and
``backward`` is a single reverse sweep.  The primitives below accept plain
arrays as well; when none of their arguments is a ``Var`` they simply return
the numpy result, which lets flows and models run untraced for sampling and
finite-difference checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, gammaln

__all__ = [
    "Tape",
    "Var",
    "ParamVector",
    "EvaluationError",
    "add", "sub", "mul", "div", "neg", "exp", "log", "log1p", "square",
    "pow_int", "sqrt", "sigmoid", "softplus", "log_sigmoid", "tanh",
    "sum", "mean", "dot", "matmul", "cumsum", "clip", "concat",
    "broadcast_to", "reshape", "getitem", "bernstein",
    "value_of", "grad", "value_and_grad", "fd_gradient", "check_gradient",
]


class EvaluationError(ArithmeticError):
    """Raised when a traced primitive is evaluated outside its domain."""


@dataclass(frozen=True)
class Node:
    op: str
    parents: tuple[int, ...]
    vjps: tuple[Callable[[np.ndarray], np.ndarray], ...]
    value: np.ndarray


class Tape:
    """Append-only record of traced operations."""

    def __init__(self) -> None:
        self.nodes: list[Node] = []

    def variable(self, value) -> "Var":
        return self._push("leaf", np.asarray(value, dtype=float), ())

    def _push(self, op, value, parents) -> "Var":
        idx = [p[0] for p in parents]
        vjps = [p[1] for p in parents]
        self.nodes.append(Node(op, tuple(idx), tuple(vjps), value))
        return Var(self, len(self.nodes) - 1, value)

    def backward(self, output: "Var") -> list:
        """Return the list of adjoints d(sum output)/d(node) for every node."""
        if output.tape is not self:
            raise ValueError("output was not recorded on this tape")
        grads: list = [None] * len(self.nodes)
        grads[output.index] = np.ones_like(output.value)
        for i in range(output.index, -1, -1):
            g = grads[i]
            if g is None:
                continue
            node = self.nodes[i]
            for j, vjp in zip(node.parents, node.vjps):
                contrib = vjp(g)
                grads[j] = contrib if grads[j] is None else grads[j] + contrib
        return grads


class Var:
    __slots__ = ("tape", "index", "value")
    __array_ufunc__ = None

    def __init__(self, tape: Tape, index: int, value: np.ndarray) -> None:
        self.tape = tape
        self.index = index
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(index={self.index}, value={self.value!r})"

    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __rmatmul__(self, other): return matmul(other, self)
    def __getitem__(self, idx): return getitem(self, idx)

    def __pow__(self, n):
        if not isinstance(n, (int, np.integer)):
            raise TypeError("only integer powers are traced")
        return pow_int(self, int(n))

    def sum(self, axis=None): return sum(self, axis)

    @property
    def T(self):
        return transpose(self)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def _record(op, value, args, vjps):
    tape = None
    for a in args:
        if isinstance(a, Var):
            tape = a.tape
            break
    if tape is None:
        return value
    parents = tuple((a.index, f) for a, f in zip(args, vjps) if isinstance(a, Var))
    return tape._push(op, value, parents)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    av, bv = value_of(a), value_of(b)
    return _record("add", av + bv, (a, b), (
        lambda g: _unbroadcast(g, av.shape),
        lambda g: _unbroadcast(g, bv.shape),
    ))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    return _record("sub", av - bv, (a, b), (
        lambda g: _unbroadcast(g, av.shape),
        lambda g: _unbroadcast(-g, bv.shape),
    ))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    return _record("mul", av * bv, (a, b), (
        lambda g: _unbroadcast(g * bv, av.shape),
        lambda g: _unbroadcast(g * av, bv.shape),
    ))


def div(a, b):
    av, bv = value_of(a), value_of(b)
    out = av / bv
    return _record("div", out, (a, b), (
        lambda g: _unbroadcast(g / bv, av.shape),
        lambda g: _unbroadcast(-g * out / bv, bv.shape),
    ))


def neg(a):
    return _record("neg", -value_of(a), (a,), (lambda g: -g,))


def exp(a):
    out = np.exp(value_of(a))
    return _record("exp", out, (a,), (lambda g: g * out,))


def log(a):
    av = value_of(a)
    if isinstance(a, Var) and np.any(av <= 0):
        raise EvaluationError("log of a non-positive traced value")
    return _record("log", np.log(av), (a,), (lambda g: g / av,))


def log1p(a):
    av = value_of(a)
    if isinstance(a, Var) and np.any(av <= -1):
        raise EvaluationError("log1p of a value <= -1")
    return _record("log1p", np.log1p(av), (a,), (lambda g: g / (1.0 + av),))


def square(a):
    av = value_of(a)
    return _record("square", av * av, (a,), (lambda g: 2.0 * g * av,))


def pow_int(a, n: int):
    av = value_of(a)
    if n == 0:
        return np.ones_like(av)
    return _record("pow_int", av ** n, (a,), (lambda g: g * n * av ** (n - 1),))


def sqrt(a):
    out = np.sqrt(value_of(a))
    return _record("sqrt", out, (a,), (lambda g: 0.5 * g / out,))


def sigmoid(a):
    out = expit(value_of(a))
    return _record("sigmoid", out, (a,), (lambda g: g * out * (1.0 - out),))


def softplus(a):
    av = value_of(a)
    return _record("softplus", np.logaddexp(0.0, av), (a,), (lambda g: g * expit(av),))


def log_sigmoid(a):
    """log(sigmoid(a)) computed as -softplus(-a)."""
    av = value_of(a)
    return _record("log_sigmoid", -np.logaddexp(0.0, -av), (a,), (lambda g: g * expit(-av),))


def tanh(a):
    out = np.tanh(value_of(a))
    return _record("tanh", out, (a,), (lambda g: g * (1.0 - out * out),))


def clip(a, lo: float, hi: float):
    av = value_of(a)
    inside = (av >= lo) & (av <= hi)
    return _record("clip", np.clip(av, lo, hi), (a,), (lambda g: g * inside,))


# ---------------------------------------------------------------------------
# reductions and structure

def sum(a, axis=None):
    av = value_of(a)
    out = av.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, av.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), av.shape).copy()

    return _record("sum", out, (a,), (vjp,))


def mean(a, axis=None):
    av = value_of(a)
    n = av.size if axis is None else av.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


def dot(a, b):
    """Inner product of two 1-d arrays."""
    av, bv = value_of(a), value_of(b)
    return _record("dot", np.asarray(av @ bv), (a, b), (
        lambda g: g * bv,
        lambda g: g * av,
    ))


def matmul(a, b):
    av, bv = value_of(a), value_of(b)

    def vjp_a(g):
        if bv.ndim == 1:
            return _unbroadcast(np.multiply.outer(g, bv), av.shape)
        return _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)

    def vjp_b(g):
        if bv.ndim == 1:
            return _unbroadcast((np.swapaxes(av, -1, -2) @ g[..., None])[..., 0], bv.shape)
        if av.ndim == 1:
            return _unbroadcast(np.multiply.outer(av, g), bv.shape)
        return _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)

    return _record("matmul", av @ bv, (a, b), (vjp_a, vjp_b))


def transpose(a):
    return _record("transpose", value_of(a).T, (a,), (lambda g: g.T,))


def cumsum(a, axis: int = -1):
    av = value_of(a)

    def vjp(g):
        return np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis)

    return _record("cumsum", np.cumsum(av, axis=axis), (a,), (vjp,))


def getitem(a, idx):
    av = value_of(a)

    def vjp(g):
        out = np.zeros_like(av)
        np.add.at(out, idx, g)
        return out

    return _record("getitem", av[idx], (a,), (vjp,))


def reshape(a, shape):
    av = value_of(a)
    return _record("reshape", av.reshape(shape), (a,), (lambda g: g.reshape(av.shape),))


def broadcast_to(a, shape):
    av = value_of(a)
    return _record("broadcast_to", np.broadcast_to(av, shape), (a,),
                   (lambda g: _unbroadcast(g, av.shape),))


def concat(parts: Sequence, axis: int = 0):
    vals = [value_of(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])

    def make(k):
        sl = [slice(None)] * out.ndim
        sl[axis] = slice(bounds[k], bounds[k + 1])
        sl = tuple(sl)
        return lambda g: g[sl]

    return _record("concat", out, tuple(parts), tuple(make(k) for k in range(len(parts))))


# ---------------------------------------------------------------------------
# Bernstein polynomials

@lru_cache(maxsize=None)
def _log_binom(n: int) -> np.ndarray:
    i = np.arange(n + 1)
    return gammaln(n + 1) - gammaln(i + 1) - gammaln(n - i + 1)


@lru_cache(maxsize=None)
def _diff_matrix(m: int, k: int) -> np.ndarray:
    """Matrix D with (D @ c) = k-th forward difference of a length m+1 vector."""
    d = np.eye(m + 1)
    for _ in range(k):
        d = d[1:] - d[:-1]
    return d


def _powers(x: np.ndarray, n: int) -> np.ndarray:
    """Rows x**0 .. x**n of the flattened x, shape (n + 1, x.size)."""
    flat = x.reshape(-1)
    out = np.empty((n + 1, flat.size))
    out[0] = 1.0
    for k in range(1, n + 1):
        np.multiply(out[k - 1], flat, out=out[k])
    return out


_POWER_CACHE: dict = {}


def _power_pair(v: np.ndarray, n: int):
    """Powers of v and 1 - v up to degree n, memoized by array identity.

    A forward/backward pass asks for bases of degree M, M-1 and M-2 of the
    same v; all of them are slices of one pair of power tables.
    """
    key = id(v)
    hit = _POWER_CACHE.get(key)
    if hit is not None and hit[0] is v and hit[1] >= n:
        return hit[2], hit[3]
    pv, qv = _powers(v, n), _powers(1.0 - v, n)
    if len(_POWER_CACHE) >= 16:
        _POWER_CACHE.clear()
    _POWER_CACHE[key] = (v, n, pv, qv)
    return pv, qv


def bernstein_basis(n: int, v) -> np.ndarray:
    """Bernstein basis of degree n, shape v.shape + (n + 1,).

    Binomial coefficients come from log-gamma, the powers from running
    products shared across degrees.
    """
    v = np.asarray(v, dtype=float)
    pv, qv = _power_pair(v, n)
    rows = np.exp(_log_binom(n))[:, None] * pv[: n + 1] * qv[n::-1]
    return rows.T.reshape(v.shape + (n + 1,))


def _bernstein_value(coef: np.ndarray, v: np.ndarray, k: int) -> np.ndarray:
    m = coef.shape[-1] - 1
    if k > m:
        return np.zeros(np.broadcast_shapes(coef.shape[:-1], v.shape))
    scale = np.exp(gammaln(m + 1) - gammaln(m - k + 1))
    diffs = coef @ _diff_matrix(m, k).T if k else coef
    basis = bernstein_basis(m - k, v)
    if diffs.ndim == 1:
        return scale * (basis @ diffs)
    return scale * np.sum(diffs * basis, axis=-1)


def bernstein(coef, v, deriv: int = 0):
    """k-th v-derivative of sum_i coef_i * b_{i,M}(v).

    ``coef`` has shape (..., M+1) and broadcasts against ``v``.  Both
    arguments may be traced; the adjoint for ``v`` uses the (deriv+1)-th
    derivative, which is evaluated but not itself traced.
    """
    cv, vv = value_of(coef), value_of(v)
    m = cv.shape[-1] - 1
    out = _bernstein_value(cv, vv, deriv)

    def vjp_coef(g):
        if deriv > m:
            return np.zeros_like(cv)
        scale = np.exp(gammaln(m + 1) - gammaln(m - deriv + 1))
        basis = scale * bernstein_basis(m - deriv, vv)
        if deriv:
            basis = basis @ _diff_matrix(m, deriv)
        if cv.ndim == 1:
            return basis.reshape(-1, m + 1).T @ np.broadcast_to(g, basis.shape[:-1]).reshape(-1)
        return _unbroadcast(g[..., None] * basis, cv.shape)

    def vjp_v(g):
        return _unbroadcast(g * _bernstein_value(cv, vv, deriv + 1), vv.shape)

    return _record(f"bernstein{deriv}", out, (coef, v), (vjp_coef, vjp_v))


# ---------------------------------------------------------------------------
# parameters and gradients

@dataclass
class ParamVector:
    """Flat parameter vector with a name -> (slice, shape) index."""

    layout: dict[str, tuple[int, ...]]
    values: np.ndarray = field(default=None)

    def __post_init__(self):
        self.slices = {}
        start = 0
        for name, shape in self.layout.items():
            n = int(np.prod(shape, dtype=int))
            self.slices[name] = slice(start, start + n)
            start += n
        self.size = start
        if self.values is None:
            self.values = np.zeros(start)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (start,):
            raise ValueError(f"expected {start} values, got {self.values.shape}")

    def unflatten(self, flat=None) -> dict:
        """Split ``flat`` (array or traced Var) into named, shaped pieces."""
        flat = self.values if flat is None else flat
        return {name: reshape(getitem(flat, sl), self.layout[name])
                for name, sl in self.slices.items()}

    def flatten(self, parts: dict) -> np.ndarray:
        out = np.empty(self.size)
        for name, sl in self.slices.items():
            out[sl] = np.asarray(parts[name], dtype=float).ravel()
        return out

    def copy(self, values=None) -> "ParamVector":
        v = self.values if values is None else values
        return ParamVector(dict(self.layout), np.array(v, dtype=float))


def value_and_grad(fn: Callable, x: np.ndarray):
    """Evaluate scalar ``fn(x)`` and its gradient with respect to flat ``x``."""
    tape = Tape()
    leaf = tape.variable(np.asarray(x, dtype=float))
    out = fn(leaf)
    if not isinstance(out, Var):
        return float(out), np.zeros_like(leaf.value)
    if out.value.size != 1:
        raise ValueError("objective must be scalar")
    g = tape.backward(out)[leaf.index]
    if g is None:
        g = np.zeros_like(leaf.value)
    return float(out.value), g


def grad(fn: Callable, params) -> np.ndarray:
    x = params.values if isinstance(params, ParamVector) else params
    return value_and_grad(fn, x)[1]


def fd_gradient(fn: Callable, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (float(fn(xp)) - float(fn(xm))) / (2 * h)
    return g


def check_gradient(fn: Callable, x, h: float = 1e-5, rtol: float = 1e-4,
                   atol: float = 1e-7, small: float = 1e-3) -> tuple[bool, float]:
    """Compare tape and central-difference gradients.

    Components with |g| < ``small`` are judged on absolute error ``atol``,
    the rest on relative error ``rtol``.  Returns (ok, worst relative error).
    """
    _, g = value_and_grad(fn, x)
    fd = fd_gradient(lambda y: value_of(fn(y)), x, h)
    err = np.abs(g - fd)
    big = np.abs(fd) >= small
    rel = np.where(big, err / np.maximum(np.abs(fd), 1e-300), 0.0)
    ok = bool(np.all(rel[big] <= rtol) and np.all(err[~big] <= atol))
    return ok, float(rel.max(initial=0.0))
