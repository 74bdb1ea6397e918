"""Reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps a float64 ndarray and remembers how it was produced. Calling
backward() on a scalar loss walks the graph in reverse topological order and
accumulates gradients into every tensor that requires them. Only the
operations the model actually needs are implemented.
"""
from __future__ import annotations

import contextlib
import math

import numpy as np
from scipy.special import erf, expit

from .errors import GraphCycle, ShapeMismatch

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (evaluation paths)."""
    global _GRAD_ENABLED
    saved = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = saved


def _as_f64(value):
    return np.asarray(value, dtype=np.float64)


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, name=""):
        self.value = _as_f64(value)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad}, name={self.name!r})"

    # operator sugar; every op lives as a module function below
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def backward(self):
        backward(self)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, backward_fn):
    """Build a result tensor, recording provenance only when gradients flow."""
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out = Tensor(value, requires_grad=True)
        out._parents = tuple(parents)
        out._backward = backward_fn
        return out
    return Tensor(value)


def _sum_to_shape(grad, shape):
    """Undo numpy broadcasting: reduce grad back down to the given shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- arithmetic ---------------------------------------------------------------

def add(a, b):
    a, b = _lift(a), _lift(b)

    def back(g):
        return (_sum_to_shape(g, a.value.shape) if a.requires_grad else None,
                _sum_to_shape(g, b.value.shape) if b.requires_grad else None)

    return _node(a.value + b.value, (a, b), back)


def sub(a, b):
    a, b = _lift(a), _lift(b)

    def back(g):
        return (_sum_to_shape(g, a.value.shape) if a.requires_grad else None,
                _sum_to_shape(-g, b.value.shape) if b.requires_grad else None)

    return _node(a.value - b.value, (a, b), back)


def mul(a, b):
    a, b = _lift(a), _lift(b)

    def back(g):
        return (_sum_to_shape(g * b.value, a.value.shape) if a.requires_grad else None,
                _sum_to_shape(g * a.value, b.value.shape) if b.requires_grad else None)

    return _node(a.value * b.value, (a, b), back)


def div(a, b):
    a, b = _lift(a), _lift(b)

    def back(g):
        return (_sum_to_shape(g / b.value, a.value.shape) if a.requires_grad else None,
                _sum_to_shape(-g * a.value / (b.value * b.value), b.value.shape)
                if b.requires_grad else None)

    return _node(a.value / b.value, (a, b), back)


def neg(a):
    a = _lift(a)

    def back(g):
        return (-g,)

    return _node(-a.value, (a,), back)


def pow_const(a, exponent):
    a = _lift(a)
    p = float(exponent)

    def back(g):
        return (g * p * np.power(a.value, p - 1.0),)

    return _node(np.power(a.value, p), (a,), back)


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    av, bv = a.value, b.value

    def back(g):
        # keep the common "batched activations x 2-D weight" case as one
        # dgemm instead of materializing batched weight gradients
        if bv.ndim == 2 and av.ndim > 2:
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ bv.T).reshape(av.shape) if a.requires_grad else None
            gb = av.reshape(-1, av.shape[-1]).T @ g2 if b.requires_grad else None
            return ga, gb
        # mirror the forward's 1-D promotion rules: a 1-D operand gains a
        # singleton axis for the product and loses it again in the result
        av2 = av[None, :] if av.ndim == 1 else av
        bv2 = bv[:, None] if bv.ndim == 1 else bv
        g2 = np.expand_dims(g, -1) if bv.ndim == 1 else g
        g2 = np.expand_dims(g2, -2) if av.ndim == 1 else g2
        ga = gb = None
        if a.requires_grad:
            full = g2 @ np.swapaxes(bv2, -1, -2)
            if av.ndim == 1:
                full = np.squeeze(full, axis=-2)
            ga = _sum_to_shape(full, av.shape)
        if b.requires_grad:
            full = np.swapaxes(av2, -1, -2) @ g2
            if bv.ndim == 1:
                full = np.squeeze(full, axis=-1)
            gb = _sum_to_shape(full, bv.shape)
        return ga, gb

    return _node(av @ bv, (a, b), back)


# -- shape manipulation -------------------------------------------------------

def reshape(a, shape):
    a = _lift(a)

    def back(g):
        return (g.reshape(a.value.shape),)

    return _node(a.value.reshape(shape), (a,), back)


def transpose(a, axes):
    a = _lift(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def back(g):
        return (g.transpose(inverse),)

    return _node(a.value.transpose(axes), (a,), back)


def swapaxes(a, axis1, axis2):
    a = _lift(a)

    def back(g):
        return (g.swapaxes(axis1, axis2),)

    return _node(a.value.swapaxes(axis1, axis2), (a,), back)


def broadcast_to(a, shape):
    a = _lift(a)

    def back(g):
        return (_sum_to_shape(g, a.value.shape),)

    return _node(np.broadcast_to(a.value, shape).copy(), (a,), back)


def concat(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    sizes = [t.value.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _node(np.concatenate([t.value for t in tensors], axis=axis), tuple(tensors), back)


def getitem(a, key):
    a = _lift(a)

    def back(g):
        full = np.zeros_like(a.value)
        np.add.at(full, key, g)
        return (full,)

    return _node(a.value[key], (a,), back)


# -- reductions ---------------------------------------------------------------

def _expand_like(g, original_shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, original_shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(ax % len(original_shape) for ax in axes)
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, original_shape)


def tsum(a, axis=None, keepdims=False):
    a = _lift(a)

    def back(g):
        return (_expand_like(g, a.value.shape, axis, keepdims).copy(),)

    return _node(a.value.sum(axis=axis, keepdims=keepdims), (a,), back)


def tmean(a, axis=None, keepdims=False):
    a = _lift(a)
    count = a.value.size if axis is None else np.prod(
        [a.value.shape[ax % a.value.ndim] for ax in ((axis,) if isinstance(axis, int) else axis)])

    def back(g):
        return (_expand_like(g, a.value.shape, axis, keepdims) / count,)

    return _node(a.value.mean(axis=axis, keepdims=keepdims), (a,), back)


# -- elementwise nonlinearities ------------------------------------------------

def texp(a):
    a = _lift(a)
    out_value = np.exp(a.value)

    def back(g):
        return (g * out_value,)

    return _node(out_value, (a,), back)


def tlog(a):
    a = _lift(a)

    def back(g):
        return (g / a.value,)

    return _node(np.log(a.value), (a,), back)


def tsqrt(a):
    a = _lift(a)
    out_value = np.sqrt(a.value)

    def back(g):
        return (g * 0.5 / out_value,)

    return _node(out_value, (a,), back)


def relu(a):
    a = _lift(a)

    def back(g):
        return (g * (a.value > 0.0),)

    return _node(np.maximum(a.value, 0.0), (a,), back)


def sigmoid(a):
    a = _lift(a)
    out_value = expit(a.value)

    def back(g):
        return (g * out_value * (1.0 - out_value),)

    return _node(out_value, (a,), back)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a):
    """Exact error-function form: x * Phi(x)."""
    a = _lift(a)
    x = a.value
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def back(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (g * (cdf + x * pdf),)

    return _node(x * cdf, (a,), back)


def softmax(a, axis=-1):
    a = _lift(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_value = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        inner = (g * out_value).sum(axis=axis, keepdims=True)
        return (out_value * (g - inner),)

    return _node(out_value, (a,), back)


def log_softmax(a, axis=-1):
    a = _lift(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_value = shifted - log_z
    soft = np.exp(out_value)

    def back(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return _node(out_value, (a,), back)


# -- backward pass --------------------------------------------------------------

def _topo_order(root):
    """Iterative DFS; raises GraphCycle if the tape loops back on itself."""
    order = []
    state = {}  # id -> 1 while on the stack, 2 when finished
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            state[id(node)] = 2
            order.append(node)
            continue
        mark = state.get(id(node))
        if mark == 2:
            continue
        if mark == 1:
            raise GraphCycle("computation graph contains a cycle")
        state[id(node)] = 1
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and state.get(id(parent)) != 2:
                if state.get(id(parent)) == 1:
                    raise GraphCycle("computation graph contains a cycle")
                stack.append((parent, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(tensor) into .grad over the whole graph."""
    if loss.value.size != 1:
        raise ShapeMismatch(f"backward needs a scalar loss, got shape {loss.value.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.grad is not None or node._backward is None:
            # leaves (parameters) accumulate; intermediates normally don't hold grads
            node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            if node.grad.shape != node.value.shape:
                raise ShapeMismatch(
                    f"gradient shape {node.grad.shape} != value shape {node.value.shape}"
                    + (f" for {node.name!r}" if node.name else ""))
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
