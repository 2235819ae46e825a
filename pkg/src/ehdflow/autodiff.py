"""Exact derivatives for the network engine.

Two mechanisms live here:

* second-order jets (:class:`Jet2`): (value, d/dtau, d2/dtau2) triples
  propagated through network arithmetic, so one evaluation yields v, v'
  and v'' simultaneously with no discretization error;
* a small reverse-mode tape over numpy arrays (:class:`Value`), used to
  obtain the exact gradient of a scalar loss with respect to every
  network parameter.

Jet arithmetic and the activation formulas are written against plain
operators and the generic helpers below, so the same code runs unchanged
on floats, numpy arrays and tape values.  Running a computation on jets
with d1 = d2 = 0 therefore reproduces the plain evaluation bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np


class NonFiniteLossError(ArithmeticError):
    """The loss (or its gradient) evaluated to a non-finite number."""


# --------------------------------------------------------------------------
# reverse-mode tape
# --------------------------------------------------------------------------

def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if np.shape(grad) == shape:
        return grad
    extra = np.ndim(grad) - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and np.shape(grad)[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return np.reshape(grad, shape)


class Value:
    """Node of the reverse-mode tape, wrapping a float64 numpy array."""

    __slots__ = ("data", "grad", "_parents", "_vjp")

    # opt out of numpy ufunc handling so ndarray <op> Value uses our
    # reflected operators instead of building object arrays
    __array_ufunc__ = None

    def __init__(self, data, parents=(), vjp=None):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self._parents = parents
        self._vjp = vjp

    def __repr__(self):
        return f"Value({self.data!r})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = _to_value(other)
        out = Value(self.data + other.data, (self, other))
        sa, sb = self.data.shape, other.data.shape
        out._vjp = lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
        return out

    __radd__ = __add__

    def __sub__(self, other):
        other = _to_value(other)
        out = Value(self.data - other.data, (self, other))
        sa, sb = self.data.shape, other.data.shape
        out._vjp = lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))
        return out

    def __rsub__(self, other):
        return _to_value(other) - self

    def __mul__(self, other):
        other = _to_value(other)
        out = Value(self.data * other.data, (self, other))
        sa, sb = self.data.shape, other.data.shape
        a, b = self.data, other.data
        out._vjp = lambda g: (_unbroadcast(g * b, sa), _unbroadcast(g * a, sb))
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _to_value(other)
        out = Value(self.data / other.data, (self, other))
        sa, sb = self.data.shape, other.data.shape
        a, b = self.data, other.data
        out._vjp = lambda g: (
            _unbroadcast(g / b, sa),
            _unbroadcast(-g * a / (b * b), sb),
        )
        return out

    def __rtruediv__(self, other):
        return _to_value(other) / self

    def __neg__(self):
        out = Value(-self.data, (self,))
        out._vjp = lambda g: (-g,)
        return out

    def __getitem__(self, index):
        out = Value(self.data[index], (self,))
        shape = self.data.shape

        def vjp(g):
            full = np.zeros(shape)
            full[index] = g
            return (full,)

        out._vjp = vjp
        return out

    # -- backward pass ------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into ``grad`` over the whole tape."""
        order: list[Value] = []
        seen: set[int] = set()
        stack: list[tuple[Value, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                parent.grad = g if parent.grad is None else parent.grad + g


def _to_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def is_tape(*xs) -> bool:
    return any(isinstance(x, Value) for x in xs)


# --------------------------------------------------------------------------
# generic numeric helpers (float / ndarray / Value)
# --------------------------------------------------------------------------

def raw(x):
    """Underlying numeric payload of ``x``."""
    return x.data if isinstance(x, Value) else x


def tanh(x):
    if isinstance(x, Value):
        t = np.tanh(x.data)
        out = Value(t, (x,))
        out._vjp = lambda g: (g * (1.0 - t * t),)
        return out
    return np.tanh(x)


def exp(x):
    if isinstance(x, Value):
        e = np.exp(x.data)
        out = Value(e, (x,))
        out._vjp = lambda g: (g * e,)
        return out
    return np.exp(x)


def where(mask, a, b):
    """Select by a boolean mask that is constant w.r.t. differentiation."""
    if is_tape(a, b):
        a, b = _to_value(a), _to_value(b)
        out = Value(np.where(mask, a.data, b.data), (a, b))
        sa, sb = a.data.shape, b.data.shape
        out._vjp = lambda g: (
            _unbroadcast(np.where(mask, g, 0.0), sa),
            _unbroadcast(np.where(mask, 0.0, g), sb),
        )
        return out
    return np.where(mask, a, b)


def asum(x, axis=None, keepdims=False):
    if isinstance(x, Value):
        if x.data.ndim == 0:
            return x
        out = Value(np.sum(x.data, axis=axis, keepdims=keepdims), (x,))
        shape = x.data.shape

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        out._vjp = vjp
        return out
    if np.ndim(x) == 0:
        return x
    return np.sum(x, axis=axis, keepdims=keepdims)


def amax_const(x, axis=None, keepdims=False):
    """Maximum of the underlying data, detached from the tape."""
    return np.max(raw(x), axis=axis, keepdims=keepdims)


def matmul(a, b):
    if is_tape(a, b):
        a, b = _to_value(a), _to_value(b)
        out = Value(a.data @ b.data, (a, b))
        ad, bd = a.data, b.data
        out._vjp = lambda g: (g @ bd.T, ad.T @ g)
        return out
    return a @ b


def transpose(x):
    if isinstance(x, Value):
        out = Value(x.data.T, (x,))
        out._vjp = lambda g: (g.T,)
        return out
    return x.T


def sigmoid(x):
    # 0.5*(tanh(x/2) + 1): overflow-safe on every backend.
    return 0.5 * tanh(0.5 * x) + 0.5


# --------------------------------------------------------------------------
# second-order jets
# --------------------------------------------------------------------------

@dataclass
class Jet2:
    """Second-order Taylor triple (value, d/dtau, d2/dtau2)."""

    val: Any
    d1: Any
    d2: Any

    def __add__(self, other):
        if isinstance(other, Jet2):
            return jet_add(self, other)
        return Jet2(self.val + other, self.d1, self.d2)

    __radd__ = __add__

    def __mul__(self, other):
        if isinstance(other, Jet2):
            return jet_mul(self, other)
        return jet_scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet2):
            return jet_div(self, other)
        return jet_scale(self, 1.0 / other)


def jet_constant(c) -> Jet2:
    """Lift a constant: derivatives vanish."""
    zero = np.zeros_like(c) if isinstance(c, np.ndarray) else 0.0
    return Jet2(c, zero, zero)


def jet_variable(tau) -> Jet2:
    """Lift the input variable: unit first derivative."""
    if isinstance(tau, np.ndarray):
        return Jet2(tau, np.ones_like(tau), np.zeros_like(tau))
    return Jet2(tau, 1.0, 0.0)


def jet_add(a: Jet2, b: Jet2) -> Jet2:
    return Jet2(a.val + b.val, a.d1 + b.d1, a.d2 + b.d2)


def jet_mul(a: Jet2, b: Jet2) -> Jet2:
    return Jet2(
        a.val * b.val,
        a.d1 * b.val + a.val * b.d1,
        a.d2 * b.val + 2.0 * (a.d1 * b.d1) + a.val * b.d2,
    )


def jet_div(a: Jet2, b: Jet2) -> Jet2:
    """Quotient a/b via multiplication with the reciprocal jet of b."""
    if np.min(np.abs(raw(b.val))) == 0.0:
        raise ZeroDivisionError("jet division by a jet with zero value")
    inv = 1.0 / b.val
    inv2 = inv * inv
    reciprocal = Jet2(
        inv,
        -b.d1 * inv2,
        (2.0 * (b.d1 * b.d1) - b.val * b.d2) * (inv2 * inv),
    )
    return jet_mul(a, reciprocal)


def jet_scale(a: Jet2, s) -> Jet2:
    return Jet2(s * a.val, s * a.d1, s * a.d2)


# --------------------------------------------------------------------------
# activations
# --------------------------------------------------------------------------
#
# Each elementwise entry maps the pre-activation v to (f, f', f'').  relu
# uses subgradient 0 at the kink and f'' = 0 everywhere (the distributional
# spike is dropped); hard_sigmoid is max(0, min(1, 0.2v + 0.5)) with the
# same kink convention.

SELU_ALPHA = 1.6732632423543772
SELU_LAMBDA = 1.0507009873554805


def _sigmoid_triple(v):
    s = sigmoid(v)
    fp = s * (1.0 - s)
    return s, fp, fp * (1.0 - 2.0 * s)


def _tanh_triple(v):
    t = tanh(v)
    fp = 1.0 - t * t
    return t, fp, -2.0 * (t * fp)


def _relu_triple(v):
    pos = raw(v) > 0.0
    zero = np.zeros(np.shape(raw(v)))
    return where(pos, v, 0.0), np.where(pos, 1.0, 0.0), zero


def _elu_branches(v):
    pos = raw(v) > 0.0
    # exp only sees the non-positive branch, so it cannot overflow
    e = exp(where(pos, 0.0, v))
    return pos, e


def _elu_triple(v):
    pos, e = _elu_branches(v)
    return where(pos, v, e - 1.0), where(pos, 1.0, e), where(pos, 0.0, e)


def _selu_triple(v):
    pos, e = _elu_branches(v)
    f = SELU_LAMBDA * where(pos, v, SELU_ALPHA * (e - 1.0))
    fp = SELU_LAMBDA * where(pos, 1.0, SELU_ALPHA * e)
    fpp = SELU_LAMBDA * where(pos, 0.0, SELU_ALPHA * e)
    return f, fp, fpp


def _hard_sigmoid_triple(v):
    x = raw(v)
    inside = (x > -2.5) & (x < 2.5)
    saturated = np.where(x >= 2.5, 1.0, 0.0)
    f = where(inside, 0.2 * v + 0.5, saturated)
    zero = np.zeros(np.shape(x))
    return f, np.where(inside, 0.2, 0.0), zero


def _linear_triple(v):
    shape = np.shape(raw(v))
    return v, np.ones(shape), np.zeros(shape)


ELEMENTWISE_ACTIVATIONS: dict[str, Callable] = {
    "sigmoid": _sigmoid_triple,
    "tanh": _tanh_triple,
    "relu": _relu_triple,
    "elu": _elu_triple,
    "selu": _selu_triple,
    "hard_sigmoid": _hard_sigmoid_triple,
    "linear": _linear_triple,
}

ACTIVATION_KINDS = tuple(sorted(ELEMENTWISE_ACTIVATIONS)) + ("softmax",)


def _jet_softmax(a: Jet2) -> Jet2:
    """Softmax across the last (neuron) axis of a layer jet.

    A single output neuron would make softmax the constant 1, so by
    convention it acts across the neurons of each hidden layer, as the
    vector-valued activation y_j = exp(v_j) / sum_k exp(v_k) with the full
    Jacobian/Hessian chain rule.  On a 0-d jet it degenerates to (1, 0, 0).
    """
    v, u, w = a.val, a.d1, a.d2
    if np.ndim(raw(v)) == 0:
        return Jet2(np.ones(()), np.zeros(()), np.zeros(()))
    shift = amax_const(v, axis=-1, keepdims=True)
    e = exp(v - shift)
    y = e / asum(e, axis=-1, keepdims=True)
    s1 = asum(y * u, axis=-1, keepdims=True)
    s2 = asum(y * (u * u), axis=-1, keepdims=True)
    t1 = asum(y * w, axis=-1, keepdims=True)
    centered = u - s1
    d1 = y * centered
    d2 = y * ((w - t1) + centered * centered - (s2 - s1 * s1))
    return Jet2(y, d1, d2)


def jet_activate(kind: str, a: Jet2) -> Jet2:
    """Apply an activation to a jet with the second-order chain rule."""
    if kind == "softmax":
        return _jet_softmax(a)
    try:
        triple = ELEMENTWISE_ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(
            f"unknown activation {kind!r}; supported: {', '.join(ACTIVATION_KINDS)}"
        ) from None
    f, fp, fpp = triple(a.val)
    return Jet2(f, fp * a.d1, fpp * (a.d1 * a.d1) + fp * a.d2)


def activation_value(kind: str, v):
    """Plain activation value, sharing the expressions used by jets."""
    if kind == "softmax":
        e = exp(v - amax_const(v, axis=-1, keepdims=True))
        return e / asum(e, axis=-1, keepdims=True)
    return ELEMENTWISE_ACTIVATIONS[kind](v)[0]


# --------------------------------------------------------------------------
# loss gradients
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GradientRecord:
    """Scalar loss value plus its exact gradient over all parameters.

    Layout: one entry per parameter, parameter arrays in the order they
    were passed to :func:`loss_gradient`, each raveled row-major.
    """

    loss_value: float
    gradient: np.ndarray


def loss_gradient(
    loss_fn: Callable[[list[Value]], Value],
    params: Sequence[np.ndarray],
) -> GradientRecord:
    """Exact gradient of a scalar loss with respect to parameter arrays.

    ``loss_fn`` receives one tape leaf per entry of ``params`` (same
    shapes, same order) and must return a scalar built from supported
    operations; reverse accumulation then yields the gradient in one pass.
    """
    leaves = [Value(np.asarray(p, dtype=float)) for p in params]
    loss = loss_fn(leaves)
    loss_value = float(raw(loss))
    if not np.isfinite(loss_value):
        raise NonFiniteLossError(f"loss evaluated to {loss_value}")
    if isinstance(loss, Value):
        loss.backward()
    pieces = []
    for leaf in leaves:
        if leaf.grad is None:
            pieces.append(np.zeros(leaf.data.size))
        else:
            pieces.append(np.asarray(leaf.grad, dtype=float).ravel())
    gradient = np.concatenate(pieces) if pieces else np.zeros(0)
    if not np.all(np.isfinite(gradient)):
        raise NonFiniteLossError("loss gradient contains non-finite entries")
    return GradientRecord(loss_value, gradient)
