"""Dense float64 matrices with tape-based reverse-mode differentiation.

Every quantity in the pipeline is a 2-D ``numpy.ndarray`` of dtype float64
(vectors are ``1 x n`` rows or ``n x 1`` columns, scalars are ``1 x 1``).
A :class:`Value` wraps such a matrix. Operations on Values whose inputs
require gradients are appended to the active :class:`Tape`; :func:`backward`
walks that tape in exact reverse recording order.

Typical use::

    w = Value(np.zeros((3, 2)), requires_grad=True)
    with Tape():
        loss = sum_all(tanh(matmul(x, w)))
        backward(loss)
    w.grad
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import (
    ConfigError,
    ContractError,
    DegenerateRowError,
    DimensionError,
    DomainError,
    EmptySetError,
    NumericalError,
)

_ids = itertools.count()

GradFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


def as_matrix(x, copy: bool = True) -> np.ndarray:
    """Coerce ``x`` to a 2-D float64 array (scalars become 1x1, 1-D become rows)."""
    arr = np.array(x, dtype=np.float64, copy=copy) if copy else np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return arr


class Value:
    """A matrix payload plus optional gradient slot."""

    __slots__ = ("payload", "requires_grad", "grad", "tape_id", "name", "_tape")

    def __init__(self, payload, requires_grad: bool = False, name: str | None = None):
        self.payload = as_matrix(payload)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.tape_id = next(_ids)
        self.name = name
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.payload.shape

    def item(self) -> float:
        if self.payload.size != 1:
            raise ContractError(f"item() needs a 1x1 value, got {self.shape}")
        return float(self.payload[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Value":
        return Value(self.payload, requires_grad=False, name=self.name)

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Value{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Value":
        return transpose(self)


@dataclass
class TapeNode:
    output: Value
    inputs: tuple[Value, ...]
    grad_fn: GradFn


class Tape:
    """Ordered record of differentiable operations.

    Used as a context manager, a tape becomes the recording target for all
    operations executed inside the ``with`` block. Outside any block a
    module-level default tape is used; call :meth:`clear` on it (or use a
    block) to release recorded intermediates.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def record(self, output: Value, inputs: tuple[Value, ...], grad_fn: GradFn) -> None:
        output._tape = self
        self.nodes.append(TapeNode(output, inputs, grad_fn))

    def clear(self) -> None:
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack.pop()

    def backward(self, loss: Value) -> None:
        backward(loss)


_default_tape = Tape()
_stack: list[Tape] = []


def current_tape() -> Tape:
    return _stack[-1] if _stack else _default_tape


def _lift(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def _result(data: np.ndarray, inputs: tuple[Value, ...], grad_fn: GradFn, op: str) -> Value:
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"{op} produced non-finite entries")
    out = Value.__new__(Value)
    out.payload = data
    out.grad = None
    out.tape_id = next(_ids)
    out.name = None
    out._tape = None
    out.requires_grad = any(v.requires_grad for v in inputs)
    if out.requires_grad:
        current_tape().record(out, inputs, grad_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True).reshape(shape)


def _check_broadcast(a: Value, b: Value, op: str) -> None:
    for x, y in zip(a.shape, b.shape):
        if x != y and x != 1 and y != 1:
            raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}")


# ---------------------------------------------------------------- arithmetic


def matmul(a, b) -> Value:
    a, b = _lift(a), _lift(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    A, B = a.payload, b.payload

    def grad_fn(g):
        return (g @ B.T if a.requires_grad else None, A.T @ g if b.requires_grad else None)

    return _result(A @ B, (a, b), grad_fn, "matmul")


def add(a, b) -> Value:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _result(a.payload + b.payload, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Value:
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _result(a.payload - b.payload, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Value:
    """Elementwise product with broadcasting."""
    a, b = _lift(a), _lift(b)
    _check_broadcast(a, b, "mul")
    A, B = a.payload, b.payload

    def grad_fn(g):
        return (
            _unbroadcast(g * B, A.shape) if a.requires_grad else None,
            _unbroadcast(g * A, B.shape) if b.requires_grad else None,
        )

    return _result(A * B, (a, b), grad_fn, "mul")


def scale(x, c: float) -> Value:
    x = _lift(x)
    c = float(c)
    return _result(x.payload * c, (x,), lambda g: (g * c,), "scale")


def transpose(x) -> Value:
    x = _lift(x)
    return _result(x.payload.T.copy(), (x,), lambda g: (g.T,), "transpose")


def sum_all(x) -> Value:
    x = _lift(x)
    shape = x.shape
    return _result(np.array([[x.payload.sum()]]), (x,), lambda g: (np.full(shape, g[0, 0]),), "sum_all")


def mean_rows(x) -> Value:
    """Column means as a ``1 x cols`` row."""
    x = _lift(x)
    n = x.shape[0]
    if x.payload.size == 0:
        raise EmptySetError("mean_rows of an empty matrix")
    return _result(x.payload.mean(axis=0, keepdims=True), (x,), lambda g: (np.repeat(g / n, n, axis=0),), "mean_rows")


def column(x, j: int) -> Value:
    """Column ``j`` as an ``n x 1`` value."""
    x = _lift(x)
    if not 0 <= j < x.shape[1]:
        raise DimensionError(f"column {j} out of range for {x.shape}")
    shape = x.shape

    def grad_fn(g):
        out = np.zeros(shape)
        out[:, j : j + 1] = g
        return (out,)

    return _result(x.payload[:, j : j + 1].copy(), (x,), grad_fn, "column")


def take_rows(x, idx) -> Value:
    """Rows ``idx`` of ``x`` in the given order (repeats allowed)."""
    x = _lift(x)
    idx = np.asarray(idx, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise DimensionError(f"row index out of range for {x.shape}")
    shape = x.shape

    def grad_fn(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _result(x.payload[idx].copy(), (x,), grad_fn, "take_rows")


def hstack(values: Sequence) -> Value:
    vals = tuple(_lift(v) for v in values)
    if not vals:
        raise EmptySetError("hstack of nothing")
    rows = {v.shape[0] for v in vals}
    if len(rows) != 1:
        raise DimensionError(f"hstack row counts differ: {sorted(rows)}")
    bounds = np.cumsum([0] + [v.shape[1] for v in vals])

    def grad_fn(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(vals)))

    return _result(np.hstack([v.payload for v in vals]), vals, grad_fn, "hstack")


def weighted_sum(values: Sequence, weights) -> Value:
    """``sum_i weights[0, i] * values[i]`` for a ``1 x k`` weight row."""
    weights = _lift(weights)
    if weights.shape != (1, len(values)):
        raise DimensionError(f"weights shape {weights.shape} does not match {len(values)} values")
    total = None
    for i, v in enumerate(values):
        term = mul(column(weights, i), v)
        total = term if total is None else add(total, term)
    return total


# ---------------------------------------------------------------- nonlinearities


def _softmax_rows(data: np.ndarray) -> np.ndarray:
    z = data - data.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def rowwise_softmax(x) -> Value:
    x = _lift(x)
    if x.payload.size == 0:
        raise EmptySetError("softmax of an empty matrix")
    y = _softmax_rows(x.payload)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _result(y, (x,), grad_fn, "rowwise_softmax")


def masked_rowwise_softmax(x, mask: np.ndarray) -> Value:
    """Row softmax restricted to entries where ``mask`` is nonzero; others get 0."""
    x = _lift(x)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise DimensionError(f"mask {mask.shape} vs input {x.shape}")
    if not mask.any(axis=1).all():
        raise ContractError("masked softmax: a row has no admissible entries")
    z = np.where(mask, x.payload, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    y = e / e.sum(axis=1, keepdims=True)

    def grad_fn(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _result(y, (x,), grad_fn, "masked_rowwise_softmax")


def elementwise(x, kind: str, slope: float = 0.2) -> Value:
    """Apply ``kind`` in {tanh, sigmoid, exp, log, leaky_relu, elu} entrywise."""
    x = _lift(x)
    X = x.payload
    if kind == "tanh":
        y = np.tanh(X)
        d = 1.0 - y * y
    elif kind == "sigmoid":
        y = expit(X)
        d = y * (1.0 - y)
    elif kind == "exp":
        y = np.exp(X)
        d = y
    elif kind == "log":
        if np.any(X <= 0):
            raise DomainError("log of a non-positive entry")
        y = np.log(X)
        d = 1.0 / X
    elif kind == "leaky_relu":
        pos = X > 0
        y = np.where(pos, X, slope * X)
        d = np.where(pos, 1.0, slope)
    elif kind == "elu":
        pos = X > 0
        y = np.where(pos, X, np.expm1(np.minimum(X, 0.0)))
        d = np.where(pos, 1.0, np.exp(np.minimum(X, 0.0)))
    else:
        raise ConfigError(f"unknown elementwise kind {kind!r}")
    return _result(y, (x,), lambda g: (g * d,), kind)


def tanh(x) -> Value:
    return elementwise(x, "tanh")


def sigmoid(x) -> Value:
    return elementwise(x, "sigmoid")


def exp(x) -> Value:
    return elementwise(x, "exp")


def log(x) -> Value:
    return elementwise(x, "log")


def leaky_relu(x, slope: float = 0.2) -> Value:
    return elementwise(x, "leaky_relu", slope=slope)


def elu(x) -> Value:
    return elementwise(x, "elu")


# ---------------------------------------------------------------- losses


def _index_set(rows, n: int) -> np.ndarray:
    idx = np.unique(np.asarray(rows, dtype=np.int64).ravel())
    if idx.size == 0:
        raise EmptySetError("row set is empty")
    if idx[0] < 0 or idx[-1] >= n:
        raise ContractError(f"row index out of range [0, {n})")
    return idx


def scaled_cosine_error(pred, target, rows, gamma: float) -> Value:
    """Mean over ``rows`` of ``(1 - cos(pred_v, target_v)) ** gamma``.

    The target is treated as a constant. A zero-norm prediction row counts as
    cosine 0 and passes no gradient; a zero-norm target row is an error.
    """
    pred = _lift(pred)
    T_full = target.payload if isinstance(target, Value) else as_matrix(target, copy=False)
    if T_full.shape != pred.shape:
        raise DimensionError(f"scaled_cosine_error: pred {pred.shape} vs target {T_full.shape}")
    if gamma < 1:
        raise ConfigError(f"gamma must be >= 1, got {gamma}")
    idx = _index_set(rows, pred.shape[0])
    P = pred.payload[idx]
    T = T_full[idx]
    tn = np.linalg.norm(T, axis=1)
    if np.any(tn == 0):
        bad = idx[np.flatnonzero(tn == 0)[0]]
        raise DegenerateRowError(f"target row {bad} has zero norm")
    pn = np.linalg.norm(P, axis=1)
    live = pn > 0
    safe_pn = np.where(live, pn, 1.0)
    cos = np.where(live, (P * T).sum(axis=1) / (safe_pn * tn), 0.0)
    gap = np.clip(1.0 - cos, 0.0, None)
    n = idx.size
    loss = np.array([[np.sum(gap**gamma) / n]])
    shape = pred.shape

    def grad_fn(g):
        dcos = T / (safe_pn * tn)[:, None] - cos[:, None] * P / (safe_pn**2)[:, None]
        coef = np.where(live, -gamma * gap ** (gamma - 1.0), 0.0) / n
        out = np.zeros(shape)
        out[idx] = g[0, 0] * coef[:, None] * dcos
        return (out,)

    return _result(loss, (pred,), grad_fn, "scaled_cosine_error")


def cross_entropy(logits, labels, rows) -> Value:
    """Mean negative log-softmax probability of the true class over ``rows``."""
    logits = _lift(logits)
    labels = np.asarray(labels, dtype=np.int64).ravel()
    rows = np.asarray(rows, dtype=np.int64).ravel()
    if rows.size == 0:
        raise EmptySetError("cross_entropy over an empty row set")
    n_rows, n_cls = logits.shape
    if labels.shape[0] != n_rows:
        raise DimensionError(f"{labels.shape[0]} labels for {n_rows} logit rows")
    y = labels[rows]
    if np.any(y < 0) or np.any(y >= n_cls):
        raise ContractError("label outside [0, C)")
    Z = logits.payload[rows]
    zmax = Z.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(Z - zmax).sum(axis=1))
    m = rows.size
    loss = np.array([[np.sum(lse - Z[np.arange(m), y]) / m]])
    shape = logits.shape

    def grad_fn(g):
        p = _softmax_rows(Z)
        p[np.arange(m), y] -= 1.0
        out = np.zeros(shape)
        np.add.at(out, rows, g[0, 0] * p / m)
        return (out,)

    return _result(loss, (logits,), grad_fn, "cross_entropy")


# ---------------------------------------------------------------- backward


def backward(loss: Value) -> None:
    """Accumulate d(loss)/d(v) into ``v.grad`` for every reachable ``v`` requiring grad.

    Calling twice without :func:`zero_grad` adds the gradients twice.
    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
    if not loss.requires_grad:
        return
    adjoint: dict[int, np.ndarray] = {loss.tape_id: np.ones((1, 1))}
    touched: dict[int, Value] = {loss.tape_id: loss}
    tape = loss._tape
    if tape is not None:
        nodes = tape.nodes
        end = len(nodes)
        while end > 0 and nodes[end - 1].output is not loss:
            end -= 1
        for node in reversed(nodes[:end]):
            g = adjoint.get(node.output.tape_id)
            if g is None:
                continue
            grads = node.grad_fn(g)
            for inp, gi in zip(node.inputs, grads):
                if gi is None or not inp.requires_grad:
                    continue
                key = inp.tape_id
                if key in adjoint:
                    adjoint[key] = adjoint[key] + gi
                else:
                    adjoint[key] = gi
                    touched[key] = inp
    for key, v in touched.items():
        g = adjoint[key]
        v.grad = g.copy() if v.grad is None else v.grad + g


def zero_grad(params: Iterable[Value]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Sequence[Value],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    state: AdamState | None = None,
) -> AdamState:
    """One bias-corrected Adam update; moments are keyed by position in ``params``.

    Parameters without a gradient are treated as having a zero gradient.
    Payloads are replaced, never modified in place, so earlier copies stay intact.
    """
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if state is None:
        state = AdamState()
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for i, p in enumerate(params):
        g = p.grad if p.grad is not None else np.zeros_like(p.payload)
        m = state.m.get(i, np.zeros_like(p.payload))
        v = state.v.get(i, np.zeros_like(p.payload))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[i] = m
        state.v[i] = v
        p.payload = p.payload - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# ---------------------------------------------------------------- checking


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central finite differences of scalar ``f`` at ``x``."""
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + step
        hi = f(x)
        x[i] = orig - step
        lo = f(x)
        x[i] = orig
        out[i] = (hi - lo) / (2 * step)
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``max|a-b| / max(max|a|, max|b|, 1e-8)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / denom)
