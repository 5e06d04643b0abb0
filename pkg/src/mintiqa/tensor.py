"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Everything downstream (encoders, Q-Formers, regression heads, losses) is built
from the operations in this module, so the gradient contract here is the one
that matters: every differentiable op must agree with central finite
differences, which ``grad_check`` verifies.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NumericError(ValueError):
    """Raised on non-finite inputs to ops that assume finite values."""


class ContractError(RuntimeError):
    """Raised when a caller violates an operation contract."""


class Tensor:
    """A dense n-dimensional float64 value, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


_TLS = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_TLS, "stack", None)
    if stack is None:
        stack = []
        _TLS.stack = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of operations; backward replays it in reverse.

    Tapes are confined to one thread.  Gradients accumulate additively into
    ``Tensor.grad``: running backward twice without zeroing doubles them.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _tape_stack().pop()
        return False

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        holders: dict[int, Tensor] = {id(loss): loss}
        for out, inputs, back in reversed(self._records):
            g = adjoint.pop(id(out), None)
            holders.pop(id(out), None)
            if g is None:
                continue
            for t, gi in zip(inputs, back(g)):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + gi
                else:
                    adjoint[key] = gi
                    holders[key] = t
        for key, g in adjoint.items():
            t = holders[key]
            if t.requires_grad:
                t.grad = g if t.grad is None else t.grad + g


def _result(data: np.ndarray, inputs: Sequence[Tensor], back: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.grad = None
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape._records.append((out, tuple(inputs), back))
    return out


# ---------------------------------------------------------------------------
# kernel operations
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    data = a.data @ b.data

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return _result(data, (a, b), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add; the only broadcast allowed is a trailing-axis bias."""
    if a.shape == b.shape:
        def back(g):
            return g, g
    elif b.data.ndim == 1 and a.data.ndim >= 1 and a.shape[-1] == b.shape[0]:
        def back(g):
            axes = tuple(range(g.ndim - 1))
            return g, g.sum(axis=axes) if axes else g
    else:
        raise ShapeError(f"add: incompatible shapes {a.shape} + {b.shape}")
    return _result(a.data + b.data, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} * {b.shape}")

    def back(g):
        return g * b.data, g * a.data

    return _result(a.data * b.data, (a, b), back)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def back(g):
        return (g * s,)

    return _result(a.data * s, (a,), back)


def add_const(a: Tensor, c: np.ndarray) -> Tensor:
    """Add a constant array (no gradient flows into the constant)."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != a.shape:
        raise ShapeError(f"add_const: incompatible shapes {a.shape} + {c.shape}")

    def back(g):
        return (g,)

    return _result(a.data + c, (a,), back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat of zero tensors")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        return tuple(
            np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(sizes))
        )

    return _result(data, tuple(tensors), back)


def slice_(t: Tensor, axis: int, start: int, stop: int) -> Tensor:
    n = t.shape[axis]
    if not (0 <= start <= stop <= n):
        raise ShapeError(f"slice [{start}:{stop}] out of range for axis {axis} of {t.shape}")
    index = [slice(None)] * t.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def back(g):
        full = np.zeros_like(t.data)
        full[index] = g
        return (full,)

    return _result(t.data[index].copy(), (t,), back)


def reshape(t: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = t.data.reshape(shape)

    def back(g):
        return (g.reshape(t.shape),)

    return _result(data.copy(), (t,), back)


def transpose(t: Tensor) -> Tensor:
    if t.data.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {t.shape}")

    def back(g):
        return (g.T,)

    return _result(t.data.T.copy(), (t,), back)


def mean(t: Tensor, axis: int | None = None) -> Tensor:
    if axis is None:
        n = t.data.size

        def back(g):
            return (np.full_like(t.data, float(g) / n),)

        return _result(np.asarray(t.data.mean()), (t,), back)
    n = t.shape[axis]

    def back_axis(g):
        return (np.expand_dims(g, axis).repeat(n, axis=axis) / n,)

    return _result(t.data.mean(axis=axis), (t,), back_axis)


def sum_(t: Tensor) -> Tensor:
    def back(g):
        return (np.full_like(t.data, float(g)),)

    return _result(np.asarray(t.data.sum()), (t,), back)


def softmax(t: Tensor) -> Tensor:
    """Row-wise (last axis) softmax with max-subtraction for stability."""
    if not np.all(np.isfinite(t.data)):
        raise NumericError("softmax: non-finite input")
    shifted = t.data - t.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - dot),)

    return _result(p, (t,), back)


def layer_norm(t: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then gain & bias."""
    d = t.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must have shape ({d},)")
    mu = t.data.mean(axis=-1, keepdims=True)
    var = t.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (t.data - mu) * inv
    data = xhat * gain.data + bias.data

    def back(g):
        gh = g * gain.data
        dx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        axes = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=axes) if axes else g * xhat
        dbias = g.sum(axis=axes) if axes else g
        return dx, dgain, dbias

    return _result(data, (t, gain, bias), back)


def normalize_rows(t: Tensor, eps: float = 1e-12) -> Tensor:
    """Last-axis standardization without learnable parameters."""
    mu = t.data.mean(axis=-1, keepdims=True)
    var = t.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (t.data - mu) * inv

    def back(g):
        dx = inv * (g - g.mean(axis=-1, keepdims=True)
                    - xhat * (g * xhat).mean(axis=-1, keepdims=True))
        return (dx,)

    return _result(xhat, (t,), back)


def gelu(t: Tensor) -> Tensor:
    x = t.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    data = x * cdf

    def back(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        return (g * (cdf + x * pdf),)

    return _result(data, (t,), back)


def sigmoid(t: Tensor) -> Tensor:
    x = t.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def back(g):
        return (g * s * (1.0 - s),)

    return _result(s, (t,), back)


def log(t: Tensor) -> Tensor:
    if np.any(t.data <= 0):
        raise NumericError("log: non-positive input")
    data = np.log(t.data)

    def back(g):
        return (g / t.data,)

    return _result(data, (t,), back)


def softplus(t: Tensor) -> Tensor:
    """log(1 + exp(x)), computed stably; note -log(sigmoid(x)) == softplus(-x)."""
    x = t.data
    data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def back(g):
        s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                     np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        return (g * s,)

    return _result(data, (t,), back)


def embedding(table: Tensor, ids: Sequence[int]) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError("embedding: ids must be a flat index list")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding: index out of range for table {table.shape}")
    data = table.data[ids].copy()

    def back(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids, g)
        return (dt,)

    return _result(data, (table,), back)


def cross_entropy(logits: Tensor, targets: Sequence[int]) -> Tensor:
    """Mean negative log-likelihood of integer classes under row-wise softmax."""
    t = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or t.ndim != 1 or t.size != logits.shape[0]:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs {t.size} targets")
    if t.size and (t.min() < 0 or t.max() >= logits.shape[1]):
        raise ShapeError("cross_entropy: target index out of range")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    picked = z[np.arange(t.size), t]
    data = np.asarray((lse - picked).mean())

    def back(g):
        p = np.exp(z - m)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(t.size), t] -= 1.0
        return (p * (float(g) / t.size),)

    return _result(data, (logits,), back)


def l1(a: Tensor, b: Tensor) -> Tensor:
    """Mean absolute difference (scalar)."""
    if a.shape != b.shape:
        raise ShapeError(f"l1: incompatible shapes {a.shape} vs {b.shape}")
    diff = a.data - b.data
    n = diff.size
    data = np.asarray(np.abs(diff).mean())

    def back(g):
        s = np.sign(diff) * (float(g) / n)
        return s, -s

    return _result(data, (a, b), back)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    n_elements: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def grad_check(f: Callable[[], Tensor], inputs: Sequence[Tensor],
               h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare tape gradients of a scalar function against central differences.

    ``f`` takes no arguments and reads the tensors in ``inputs``; their
    ``.data`` is perturbed in place for the finite-difference evaluations.
    """
    if h <= 0:
        raise ContractError("grad_check: h must be positive")
    y0 = f().item()
    if f().item() != y0:
        raise ContractError("grad_check: f is not deterministic")
    for t in inputs:
        if not t.requires_grad:
            raise ContractError("grad_check: all inputs must have requires_grad=True")
        t.zero_grad()
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    max_rel = 0.0
    n = 0
    for t in inputs:
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            rel = abs(num - gflat[i]) / max(1.0, abs(num), abs(gflat[i]))
            max_rel = max(max_rel, rel)
            n += 1
    return GradCheckReport(max_rel_error=max_rel, tol=tol, n_elements=n)
