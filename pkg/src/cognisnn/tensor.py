"""Dense float64 tensors with tape-based reverse-mode differentiation.

Primitive ops append ``(output, inputs, adjoint)`` records to the active
:class:`Tape`. Records are appended in execution order, so replaying them
backwards is a valid reverse topological order and BPTT falls out of taping
every timestep of a sequence.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import NotScalarLoss, ShapeMismatch


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of primitive applications."""

    def __init__(self):
        self.records: list = []

    def __len__(self):
        return len(self.records)

    def clear(self) -> None:
        self.records.clear()

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


_ACTIVE: list[Tape] = []
_GRAD_ENABLED = [True]


@contextmanager
def no_grad():
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def _record(out: Tensor, inputs: tuple[Tensor, ...], adjoint) -> Tensor:
    if _ACTIVE and _GRAD_ENABLED[-1] and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _ACTIVE[-1].records.append((out, inputs, adjoint))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` and clear the tape.

    Every requires-grad leaf seen on the tape ends with a gradient buffer,
    zero when it had no influence on the loss.
    """
    if loss.data.size != 1:
        raise NotScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    produced = {id(rec[0]) for rec in tape.records}
    grads = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for out, inputs, adjoint in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(inputs, adjoint(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key not in produced:
                leaves[key] = inp
            prev = grads.get(key)
            grads[key] = gi if prev is None else prev + gi
    for _, inputs, _ in tape.records:
        for inp in inputs:
            if inp.requires_grad and id(inp) not in produced:
                leaves.setdefault(id(inp), inp)
    for key, leaf in leaves.items():
        g = grads.get(key)
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)
        if g is not None:
            leaf.grad = leaf.grad + g
    tape.clear()


# elementwise ---------------------------------------------------------


def _pair(a, b) -> tuple[Tensor, Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and b.size != 1 and a.size != 1:
        raise ShapeMismatch(f"shapes {a.shape} and {b.shape} differ")
    return a, b


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return scale(a, float(b))
    a, b = _pair(a, b)
    out = Tensor(a.data * b.data)
    return _record(
        out, (a, b), lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))
    )


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c)
    return _record(out, (a,), lambda g: (g * c,))


def tsum(a: Tensor) -> Tensor:
    out = Tensor(np.sum(a.data))
    return _record(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def tmean(a: Tensor) -> Tensor:
    n = a.size
    out = Tensor(np.mean(a.data))
    return _record(out, (a,), lambda g: (np.full(a.shape, float(g) / n),))


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def add_n(tensors) -> Tensor:
    """Sum of equally shaped tensors, left to right."""
    tensors = list(tensors)
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ShapeMismatch(f"shapes {shape} and {t.shape} differ")
    total = tensors[0].data.copy()
    for t in tensors[1:]:
        total += t.data
    return _record(Tensor(total), tuple(tensors), lambda g: tuple(g for _ in tensors))
