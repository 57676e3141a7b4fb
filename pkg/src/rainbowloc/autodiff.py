"""Reverse-mode automatic differentiation over real and complex numpy arrays.

Design: a Tape records every operation in creation order (append-only), so
reversing the record is already a topological order for backpropagation.
Each step of a training loop builds a fresh Tape; leaves wrap parameter
arrays, constants enter ops as plain numpy arrays and receive no gradient.

Complex convention: for a real-valued loss L and a complex node z, the
stored gradient is 2 * dL/dz (Wirtinger derivative), so the gradient of
L = |z|^2 is 2*conj(z) and a real leaf r feeding a complex subgraph
receives dL/dr = Re[grad(z) * dz/dr].  Holomorphic ops therefore chain by
plain multiplication with their complex derivative, and conj() conjugates
the incoming gradient.

The forward value of every op is computed with the same numpy expression an
untaped evaluation would use, so taped and untaped forwards agree exactly.
"""

from __future__ import annotations

import numpy as np


class Value:
    """A node in the computation graph: array data plus gradient buffer."""

    __slots__ = ("data", "grad", "tape")

    def __init__(self, data, tape):
        self.data = np.asarray(data)
        self.grad = np.zeros_like(self.data)
        self.tape = tape

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Value(shape={self.data.shape}, dtype={self.data.dtype})"

    # operator sugar; constants may appear on either side
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale_shift(self, -1.0, 0.0)


class Tape:
    """Append-only operation record; one tape per forward/backward pass."""

    def __init__(self):
        self._nodes = []
        self._done = False

    def __len__(self):
        return len(self._nodes)

    def leaf(self, data) -> Value:
        """Wrap an array as a differentiable leaf (no producing op)."""
        return Value(np.asarray(data), self)

    def record(self, inputs, out_data, backward) -> Value:
        """Register an op.  ``backward(out_grad)`` must return one gradient
        array (or None) per input, aligned with ``inputs``."""
        out = Value(out_data, self)
        self._nodes.append((inputs, out, backward))
        return out

    def backward(self, loss: Value) -> None:
        """Seed d(loss)/d(loss) = 1 and fill every node's grad exactly once."""
        if self._done:
            raise RuntimeError("tape already backpropagated")
        if loss.tape is not self:
            raise ValueError("loss does not belong to this tape")
        if loss.data.size != 1 or np.iscomplexobj(loss.data):
            raise ValueError("loss must be a real scalar")
        self._done = True
        loss.grad = loss.grad + 1.0
        for inputs, out, backward in reversed(self._nodes):
            grads = backward(out.grad)
            for inp, g in zip(inputs, grads):
                if g is None:
                    continue
                inp.grad += _unbroadcast(g, inp.data.shape, inp.data.dtype)


def _unbroadcast(g, shape, dtype):
    """Sum a broadcast gradient back down to the input's shape."""
    g = np.asarray(g)
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    if not np.iscomplexobj(np.empty(0, dtype)) and np.iscomplexobj(g):
        g = g.real
    return g.reshape(shape)


def _split(x):
    """Return (data, value_or_none) for an op input that may be a constant."""
    if isinstance(x, Value):
        return x.data, x
    return np.asarray(x), None


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Value):
            return x.tape
    raise TypeError("at least one operand must be a Value")


def _record2(a, b, out_data, grad_a, grad_b) -> Value:
    """Record a binary op where either operand may be a constant."""
    tape = _tape_of(a, b)
    da, va = _split(a)
    db, vb = _split(b)
    inputs, backs = [], []
    if va is not None:
        inputs.append(va)
        backs.append(grad_a)
    if vb is not None:
        inputs.append(vb)
        backs.append(grad_b)

    def backward(g):
        return tuple(fn(g) for fn in backs)

    return tape.record(tuple(inputs), out_data, backward)


# --- arithmetic -------------------------------------------------------------

def add(a, b) -> Value:
    da, db = _split(a)[0], _split(b)[0]
    return _record2(a, b, da + db, lambda g: g, lambda g: g)


def sub(a, b) -> Value:
    da, db = _split(a)[0], _split(b)[0]
    return _record2(a, b, da - db, lambda g: g, lambda g: -g)


def mul(a, b) -> Value:
    da, db = _split(a)[0], _split(b)[0]
    return _record2(a, b, da * db, lambda g: g * db, lambda g: g * da)


def div(a, b) -> Value:
    da, db = _split(a)[0], _split(b)[0]
    return _record2(a, b, da / db, lambda g: g / db,
                    lambda g: -g * da / (db * db))


def scale_shift(x: Value, scale, shift) -> Value:
    """Affine map with constant coefficients: scale * x + shift."""
    return x.tape.record((x,), scale * x.data + shift, lambda g: (g * scale,))


def matmul(a, b) -> Value:
    da, db = _split(a)[0], _split(b)[0]
    if da.ndim != 2 or db.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    return _record2(a, b, da @ db,
                    lambda g: g @ db.T, lambda g: da.T @ g)


def bias_add(x: Value, b) -> Value:
    db, vb = _split(b)
    out = x.data + db[None, :]

    if vb is None:
        return x.tape.record((x,), out, lambda g: (g,))
    return x.tape.record((x, vb), out, lambda g: (g, g.sum(axis=0)))


def inner_product(a, b) -> Value:
    """Full contraction sum(a * b) of equal-shaped operands (no conjugation)."""
    da, db = _split(a)[0], _split(b)[0]
    if da.shape != db.shape:
        raise ValueError("inner_product expects equal shapes")
    return _record2(a, b, (da * db).sum(), lambda g: g * db, lambda g: g * da)


# --- reductions -------------------------------------------------------------

def reduce_sum(x: Value, axis=None, keepdims=False) -> Value:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape),)

    return x.tape.record((x,), out, backward)


def reduce_mean(x: Value, axis=None, keepdims=False) -> Value:
    count = x.data.size if axis is None else x.data.shape[axis]
    out = x.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape) / count,)

    return x.tape.record((x,), out, backward)


def reduce_max(x: Value, axis: int, keepdims=False) -> Value:
    """Max along one axis; gradient routes to the first argmax entry."""
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, g, axis=axis)
        return (gx,)

    return x.tape.record((x,), out, backward)


# --- elementwise nonlinearities ---------------------------------------------

def sqrt(x: Value) -> Value:
    out = np.sqrt(x.data)
    return x.tape.record((x,), out, lambda g: (g / (2.0 * out),))


def log(x: Value) -> Value:
    return x.tape.record((x,), np.log(x.data), lambda g: (g / x.data,))


def sin(x: Value) -> Value:
    return x.tape.record((x,), np.sin(x.data), lambda g: (g * np.cos(x.data),))


def cos(x: Value) -> Value:
    return x.tape.record((x,), np.cos(x.data), lambda g: (-g * np.sin(x.data),))


def tanh(x: Value) -> Value:
    out = np.tanh(x.data)
    return x.tape.record((x,), out, lambda g: (g * (1.0 - out * out),))


def relu(x: Value) -> Value:
    out = np.maximum(x.data, 0.0)
    return x.tape.record((x,), out, lambda g: (g * (x.data > 0),))


def softplus(x: Value) -> Value:
    out = np.logaddexp(0.0, x.data)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x.data))  # overflow-safe sigmoid
    return x.tape.record((x,), out, lambda g: (g * sig,))


def softmax_scaled(x: Value, alpha: float, axis: int = -1) -> Value:
    """Temperature-scaled softmax exp(alpha x)/sum, max-subtracted for stability."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    z = alpha * x.data
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    w = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * w).sum(axis=axis, keepdims=True)
        return (alpha * w * (g - dot),)

    return x.tape.record((x,), w, backward)


# --- complex ops ------------------------------------------------------------

def complex_exp(x: Value) -> Value:
    """exp(j * x) for real x."""
    if np.iscomplexobj(x.data):
        raise TypeError("complex_exp expects a real input")
    out = np.exp(1j * x.data)
    return x.tape.record((x,), out, lambda g: (-(g * out).imag,))


def conj(z: Value) -> Value:
    return z.tape.record((z,), np.conj(z.data), lambda g: (np.conj(g),))


def abs_squared(z: Value) -> Value:
    """|z|^2 as a real array; gradient w.r.t. z is 2*conj(z)*g."""
    out = (z.data * np.conj(z.data)).real
    return z.tape.record((z,), out, lambda g: (2.0 * g * np.conj(z.data),))


# --- non-smooth projections -------------------------------------------------

def mod_const(x: Value, modulus: float) -> Value:
    """Wrap into [0, modulus); straight-through gradient (exact a.e.)."""
    return x.tape.record((x,), np.mod(x.data, modulus), lambda g: (g,))


# --- shape plumbing ----------------------------------------------------------

def stack_cols(a: Value, b: Value) -> Value:
    out = np.stack([a.data, b.data], axis=1)
    return a.tape.record((a, b), out, lambda g: (g[:, 0], g[:, 1]))


def take_col(x: Value, col: int) -> Value:
    out = x.data[:, col]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, col] = g
        return (gx,)

    return x.tape.record((x,), out, backward)
