"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` is an append-only arena of :class:`TapeNode` objects. Every
operation appends its result, so append order is a valid topological order
and :func:`backward` is a single reverse sweep.

All operations are polymorphic: when none of the operands is a ``TapeNode``
they simply return the numpy result, so the same model code runs both under
differentiation (training) and as plain numpy (inference, simulation).

Arrays are either vectors ``(d,)`` or row batches ``(B, d)``. Elementwise
operations accept equal shapes or a scalar on either side; :func:`affine` and
:func:`layer_norm` additionally broadcast their vector parameters over rows.
"""

from numbers import Real

import numpy as np

from .exceptions import (
    NonFiniteInputError,
    NonScalarLossError,
    ShapeError,
    TapeConsumedError,
)

__all__ = [
    "Tape",
    "TapeNode",
    "add",
    "affine",
    "backward",
    "concat",
    "finite_difference_check",
    "gradient_errors",
    "layer_norm",
    "mse_loss",
    "mul",
    "scale",
    "silu",
    "sub",
    "sum_all",
    "tanh",
    "value_of",
]

LAYER_NORM_EPS = 1e-5


class TapeNode:
    """A value in the computation graph.

    ``grad`` stays ``None`` until :func:`backward` reaches the node;
    parameters are given zero gradients at the start of every backward pass.
    """

    __slots__ = ("value", "grad", "requires_grad", "tape", "name", "_edges")

    # keep numpy from swallowing TapeNode operands into object arrays
    __array_ufunc__ = None

    def __init__(self, value, tape, requires_grad=False, name=None, edges=()):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.tape = tape
        self.name = name
        self._edges = edges

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"TapeNode{label}(shape={self.value.shape}, requires_grad={self.requires_grad})"

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

    def __getitem__(self, index):
        return _getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return _reshape(self, shape)


class Tape:
    """Append-only node arena; single use per forward/backward pass."""

    def __init__(self):
        self.nodes = []
        self.parameters = []
        self.consumed = False

    def __len__(self):
        return len(self.nodes)

    def parameter(self, values, name=None):
        """Register a trainable leaf. Values are copied to float64."""
        arr = np.array(values, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteInputError(
                f"parameter {name or len(self.parameters)} has non-finite entries"
            )
        node = TapeNode(arr, self, requires_grad=True, name=name or f"p{len(self.parameters)}")
        self.nodes.append(node)
        self.parameters.append(node)
        return node

    def constant(self, values, name=None):
        node = TapeNode(np.asarray(values, dtype=np.float64), self, name=name)
        self.nodes.append(node)
        return node

    def clear(self):
        self.nodes = []
        self.parameters = []
        self.consumed = False


def value_of(x):
    """Underlying numpy value of a node, array or number."""
    if isinstance(x, TapeNode):
        return x.value
    return np.asarray(x, dtype=np.float64)


def _tape_of(*xs):
    tape = None
    for x in xs:
        if isinstance(x, TapeNode):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise ValueError("operands belong to different tapes")
    return tape


def _record(value, inputs, vjps):
    """Append the result of an op. ``vjps[i]`` maps grad_out to grad of ``inputs[i]``."""
    tape = _tape_of(*inputs)
    if tape is None:
        return value
    edges = tuple(
        (x, vjp)
        for x, vjp in zip(inputs, vjps)
        if isinstance(x, TapeNode) and x.requires_grad
    )
    node = TapeNode(value, tape, requires_grad=bool(edges), edges=edges)
    tape.nodes.append(node)
    return node


def _is_scalar(x):
    return isinstance(x, Real) or value_of(x).ndim == 0


def _check_elementwise(a, b, op):
    sa, sb = value_of(a).shape, value_of(b).shape
    if sa != sb and sa != () and sb != ():
        raise ShapeError(f"{op}: shapes {sa} and {sb} do not conform")


def _reduce_to(g, shape):
    if g.shape == shape:
        return g
    if shape == ():
        return np.sum(g)
    # row broadcast of a (d,) vector over (B, d)
    return np.sum(g, axis=0)


# ---------------------------------------------------------------- elementwise


def add(a, b):
    _check_elementwise(a, b, "add")
    va, vb = value_of(a), value_of(b)
    sa, sb = va.shape, vb.shape
    return _record(va + vb, (a, b), (lambda g: _reduce_to(g, sa), lambda g: _reduce_to(g, sb)))


def sub(a, b):
    _check_elementwise(a, b, "sub")
    va, vb = value_of(a), value_of(b)
    sa, sb = va.shape, vb.shape
    return _record(va - vb, (a, b), (lambda g: _reduce_to(g, sa), lambda g: -_reduce_to(g, sb)))


def mul(a, b):
    _check_elementwise(a, b, "mul")
    va, vb = value_of(a), value_of(b)
    return _record(
        va * vb,
        (a, b),
        (lambda g: _reduce_to(g * vb, va.shape), lambda g: _reduce_to(g * va, vb.shape)),
    )


def scale(x, c):
    """Multiply by a constant (non-differentiated) real."""
    c = float(c)
    return _record(value_of(x) * c, (x,), (lambda g: g * c,))


def silu(x):
    vx = value_of(x)
    sig = 0.5 * (1.0 + np.tanh(0.5 * vx))
    return _record(vx * sig, (x,), (lambda g: g * sig * (1.0 + vx * (1.0 - sig)),))


def tanh(x):
    y = np.tanh(value_of(x))
    return _record(y, (x,), (lambda g: g * (1.0 - y * y),))


# ---------------------------------------------------------------- structure


def _getitem(x, index):
    vx = x.value
    shape = vx.shape

    def vjp(g):
        out = np.zeros(shape)
        out[index] = g
        return out

    return _record(vx[index], (x,), (vjp,))


def _reshape(x, shape):
    vx = x.value
    return _record(vx.reshape(shape), (x,), (lambda g: g.reshape(vx.shape),))


def concat(xs, axis=-1):
    """Concatenate along ``axis``; numpy result when no operand is a node."""
    values = [value_of(x) for x in xs]
    try:
        out = np.concatenate(values, axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def make_vjp(i):
        return lambda g: np.split(g, bounds, axis=axis)[i]

    return _record(out, tuple(xs), tuple(make_vjp(i) for i in range(len(xs))))


def sum_all(x):
    vx = value_of(x)
    return _record(np.sum(vx), (x,), (lambda g: np.full(vx.shape, g),))


# ---------------------------------------------------------------- layers


def affine(W, b, x):
    """``W @ x + b`` for a vector ``x``, or row-wise ``x @ W.T + b`` for a batch."""
    vW, vb, vx = value_of(W), value_of(b), value_of(x)
    if vW.ndim != 2 or vb.shape != (vW.shape[0],) or vx.ndim not in (1, 2) or vx.shape[-1] != vW.shape[1]:
        raise ShapeError(
            f"affine: W {vW.shape}, b {vb.shape}, x {vx.shape} do not conform"
        )
    if vx.ndim == 1:
        out = vW @ vx + vb
        dW = lambda g: np.outer(g, vx)
        db = lambda g: g
    else:
        out = vx @ vW.T + vb
        dW = lambda g: g.T @ vx
        db = lambda g: np.sum(g, axis=0)
    return _record(out, (W, b, x), (dW, db, lambda g: g @ vW))


def layer_norm(x, gain, bias, eps=LAYER_NORM_EPS):
    """Normalise over the last axis (population variance), then ``gain * xhat + bias``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    vx, vg, vb = value_of(x), value_of(gain), value_of(bias)
    d = vx.shape[-1]
    if d < 1 or vg.shape != (d,) or vb.shape != (d,):
        raise ShapeError(f"layer_norm: x {vx.shape}, gain {vg.shape}, bias {vb.shape}")
    centred = vx - np.mean(vx, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(np.mean(centred * centred, axis=-1, keepdims=True) + eps)
    xhat = centred * inv_std

    def dx(g):
        gx = g * vg
        return inv_std * (
            gx
            - np.mean(gx, axis=-1, keepdims=True)
            - xhat * np.mean(gx * xhat, axis=-1, keepdims=True)
        )

    return _record(
        vg * xhat + vb,
        (x, gain, bias),
        (dx, lambda g: _reduce_to(g * xhat, (d,)), lambda g: _reduce_to(g, (d,))),
    )


def mse_loss(pred, target):
    """Mean of squared residuals over every entry; returns a 0-d value."""
    vp = value_of(pred)
    vt = np.asarray(target, dtype=np.float64)
    if vp.shape != vt.shape or vp.size == 0:
        raise ShapeError(f"mse_loss: pred {vp.shape} vs target {vt.shape}")
    resid = vp - vt
    n = resid.size
    return _record(np.mean(resid * resid), (pred,), (lambda g: g * (2.0 / n) * resid,))


# ---------------------------------------------------------------- backward


def backward(loss):
    """Accumulate d(loss)/d(node) into every reachable node's ``grad``.

    Returns ``{parameter name: gradient}`` for every parameter on the tape;
    parameters that do not influence the loss get zeros. A tape can only be
    differentiated once.
    """
    if not isinstance(loss, TapeNode):
        raise TypeError("backward expects a TapeNode")
    tape = loss.tape
    if tape.consumed:
        raise TapeConsumedError("backward already ran on this tape; build a new one")
    if loss.value.size != 1:
        raise NonScalarLossError(f"loss must be scalar, got shape {loss.value.shape}")
    tape.consumed = True

    for p in tape.parameters:
        p.grad = np.zeros_like(p.value)
    seed = np.ones_like(loss.value)
    loss.grad = seed if loss.grad is None else loss.grad + seed

    for node in reversed(tape.nodes):
        g = node.grad
        if g is None or not node._edges:
            continue
        for parent, vjp in node._edges:
            contrib = vjp(g)
            parent.grad = contrib if parent.grad is None else parent.grad + contrib
    return {p.name: p.grad for p in tape.parameters}


# ---------------------------------------------------------------- gradient check


def gradient_errors(f, theta, h=1e-5):
    """Per-coordinate relative error between tape and central-difference gradients.

    ``f`` maps a flat parameter (TapeNode or ndarray) to a scalar. Returns
    ``(errors, analytic, numeric)``; the error is
    ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    theta = np.array(theta, dtype=np.float64)
    tape = Tape()
    p = tape.parameter(theta, name="theta")
    out = f(p)
    if isinstance(out, TapeNode):
        analytic = backward(out)["theta"]
    else:
        analytic = np.zeros_like(theta)
    numeric = np.empty_like(theta)
    flat = theta.reshape(-1)
    for i in range(flat.size):
        plus, minus = flat.copy(), flat.copy()
        plus[i] += h
        minus[i] -= h
        fp = float(value_of(f(plus.reshape(theta.shape))))
        fm = float(value_of(f(minus.reshape(theta.shape))))
        numeric.reshape(-1)[i] = (fp - fm) / (2.0 * h)
    errors = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return errors, analytic, numeric


def finite_difference_check(f, theta, h=1e-5):
    """Maximum relative gradient error of ``f`` at ``theta`` (central differences)."""
    errors, _, _ = gradient_errors(f, theta, h)
    return float(np.max(errors)) if errors.size else 0.0
