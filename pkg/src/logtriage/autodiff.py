"""Reverse-mode automatic differentiation over dense float64 arrays.

A single module-level tape records operations in execution order; backward
walks it in reverse, which is a valid topological order by construction.
Only 0-d/1-d/2-d tensors with numpy-style broadcasting are supported, which
is all the training losses here need.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special as _sp


class ShapeError(ValueError):
    """Raised when operand shapes violate an op's contract."""


class Tensor:
    __slots__ = ("values", "grad", "requires_grad")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        # Leaves carry a persistent accumulator; intermediates get one
        # lazily during backward.
        self.grad = np.zeros_like(self.values) if requires_grad else None

    @property
    def shape(self):
        return self.values.shape

    def item(self) -> float:
        return float(self.values)

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy())

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    # operator sugar, all routed through the module-level ops
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


# ---------------------------------------------------------------------------
# tape machinery

_tape: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
_recording = True

# When > 0, relu/clip_min report inputs within this window of their kink so
# finite-difference checks can exclude the affected coordinate.
_kink_window = 0.0
_kink_fired = False


class no_grad:
    """Context manager disabling tape recording (pure forward evaluation)."""

    def __enter__(self):
        global _recording
        self._prev = _recording
        _recording = False
        return self

    def __exit__(self, *exc):
        global _recording
        _recording = self._prev
        return False


def tape_size() -> int:
    return len(_tape)


def clear_tape() -> None:
    _tape.clear()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _watch_kink(margin: np.ndarray) -> None:
    global _kink_fired
    if _kink_window > 0.0 and np.any(np.abs(margin) < _kink_window):
        _kink_fired = True


def _record(out: Tensor, inputs: Sequence[Tensor], closure: Callable[[np.ndarray], None]) -> None:
    if _recording and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _tape.append((out, closure))


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = _unbroadcast(g, t.values.shape)
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf, then clear the tape.

    Accumulation is additive: a second forward+backward without zeroing
    doubles every leaf gradient.
    """
    if loss.values.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.values.shape}")
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.values)
    loss.grad += 1.0
    for out, closure in reversed(_tape):
        if out.grad is None:
            continue
        closure(out.grad)
    # Tape outputs are always intermediates (ops construct fresh tensors),
    # so dropping their buffers never touches a leaf accumulator.
    for out, _ in _tape:
        out.grad = None
    clear_tape()


def parameter(values, requires_grad: bool = True) -> Tensor:
    return Tensor(values, requires_grad=requires_grad)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# primitive operations


def _binary(a, b, fwd, da, db) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(fwd(a.values, b.values))

    def closure(g):
        _accum(a, da(g, a.values, b.values, out.values))
        _accum(b, db(g, a.values, b.values, out.values))

    _record(out, (a, b), closure)
    return out


def add(a, b) -> Tensor:
    return _binary(a, b, np.add, lambda g, x, y, o: g, lambda g, x, y, o: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, np.subtract, lambda g, x, y, o: g, lambda g, x, y, o: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, np.multiply, lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def div(a, b) -> Tensor:
    return _binary(
        a, b, np.divide, lambda g, x, y, o: g / y, lambda g, x, y, o: -g * o / y
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.values.shape[1] != b.values.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.values.shape} @ {b.values.shape}")
    out = Tensor(a.values @ b.values)

    def closure(g):
        _accum(a, g @ b.values.T)
        _accum(b, a.values.T @ g)

    _record(out, (a, b), closure)
    return out


def transpose(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.values.T)
    _record(out, (a,), lambda g: _accum(a, g.T))
    return out


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.values)
    _record(out, (a,), lambda g: _accum(a, -g))
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    _watch_kink(a.values)
    out = Tensor(np.maximum(a.values, 0.0))
    mask = a.values > 0.0  # subgradient at 0 is 0
    _record(out, (a,), lambda g: _accum(a, g * mask))
    return out


def clip_min(a, floor: float) -> Tensor:
    a = as_tensor(a)
    _watch_kink(a.values - floor)
    out = Tensor(np.maximum(a.values, floor))
    mask = a.values > floor
    _record(out, (a,), lambda g: _accum(a, g * mask))
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sp.expit(a.values)
    out = Tensor(s)
    _record(out, (a,), lambda g: _accum(a, g * s * (1.0 - s)))
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.values)
    out = Tensor(t)
    _record(out, (a,), lambda g: _accum(a, g * (1.0 - t * t)))
    return out


def softplus(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.logaddexp(0.0, a.values))
    s = _sp.expit(a.values)
    _record(out, (a,), lambda g: _accum(a, g * s))
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.values)
    out = Tensor(e)
    _record(out, (a,), lambda g: _accum(a, g * e))
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.log(a.values))
    _record(out, (a,), lambda g: _accum(a, g / a.values))
    return out


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    r = np.sqrt(a.values)
    out = Tensor(r)
    # subgradient 0 at the boundary r == 0 keeps masked-out gradients clean
    safe = np.where(r > 0.0, 2.0 * r, 1.0)
    _record(out, (a,), lambda g: _accum(a, np.where(r > 0.0, g / safe, 0.0)))
    return out


def digamma(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(_sp.digamma(a.values))
    _record(out, (a,), lambda g: _accum(a, g * _sp.polygamma(1, a.values)))
    return out


def lgamma(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(_sp.gammaln(a.values))
    _record(out, (a,), lambda g: _accum(a, g * _sp.digamma(a.values)))
    return out


def softmax_row(a) -> Tensor:
    """Row-wise softmax with max-subtraction; a 1-d input is one row."""
    a = as_tensor(a)
    x = a.values
    if x.ndim == 1:
        x = x[None, :]
        squeeze = True
    else:
        squeeze = False
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    out_vals = p[0] if squeeze else p
    out = Tensor(out_vals)

    def closure(g):
        gp = g[None, :] if squeeze else g
        dot = (gp * p).sum(axis=1, keepdims=True)
        gx = p * (gp - dot)
        _accum(a, gx[0] if squeeze else gx)

    _record(out, (a,), closure)
    return out


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.values.sum())
    _record(out, (a,), lambda g: _accum(a, np.broadcast_to(g, a.values.shape)))
    return out


def sum_axis(a, axis: int, keepdims: bool = True) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.values.sum(axis=axis, keepdims=keepdims))

    def closure(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(gg, a.values.shape))

    _record(out, (a,), closure)
    return out


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.values.size
    out = Tensor(a.values.mean())
    _record(out, (a,), lambda g: _accum(a, np.broadcast_to(g / n, a.values.shape)))
    return out


def sumsq(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.sum(a.values * a.values))
    _record(out, (a,), lambda g: _accum(a, 2.0 * g * a.values))
    return out


def rowsum(a) -> Tensor:
    return sum_axis(a, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# gradient verification


def check_gradients(closure: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> dict:
    """Compare analytic gradients of `closure()` against central differences.

    The closure must be deterministic and rebuild the graph on every call.
    Coordinates whose perturbed evaluations pass near a relu/clip kink are
    excluded (the two-sided difference straddles the nondifferentiable point).
    Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
    """
    global _kink_window, _kink_fired
    zero_grads(params)
    loss = closure()
    backward(loss)
    analytic = [p.grad.copy() for p in params]
    zero_grads(params)

    max_rel = 0.0
    checked = 0
    excluded = 0
    per_param: list[float] = []
    for p, ag in zip(params, analytic):
        worst = 0.0
        flat = p.values.reshape(-1)
        aflat = ag.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            # center within h of a kink => the +-h stencil straddles it, and
            # the perturbed inputs then land within 2h of the kink
            _kink_window, _kink_fired = 2.0 * h, False
            flat[i] = orig + h
            with no_grad():
                f_plus = closure().item()
            flat[i] = orig - h
            with no_grad():
                f_minus = closure().item()
            flat[i] = orig
            fired = _kink_fired
            _kink_window, _kink_fired = 0.0, False
            if fired:
                excluded += 1
                continue
            numeric = (f_plus - f_minus) / (2.0 * h)
            rel = abs(aflat[i] - numeric) / max(abs(aflat[i]), abs(numeric), 1e-8)
            worst = max(worst, rel)
            checked += 1
        per_param.append(worst)
        max_rel = max(max_rel, worst)
    return {
        "max_rel_err": max_rel,
        "per_param": per_param,
        "checked": checked,
        "excluded": excluded,
    }
