"""Dense 2-D tensors with tape-based reverse-mode differentiation.

Every tensor is a float64 matrix. Vectors are represented as ``1 x d`` (row) or
``d x 1`` (column) matrices and scalars as ``1 x 1``. A :class:`Tape` is created
explicitly for each forward pass; leaves are registered with :meth:`Tape.watch`
and every primitive whose inputs live on a tape records itself there. Tensors
without a tape are constants.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "DimensionError",
    "NumericError",
    "ContractError",
    "as_tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "transpose",
    "relu",
    "power",
    "sqrt",
    "row_sum",
    "col_sum",
    "col_mean",
    "col_max",
    "total_sum",
    "l2_norm",
    "normalize",
    "softmax_cross_entropy",
    "backward",
    "grad_check",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """A non-finite value entered or left a primitive."""


class ContractError(RuntimeError):
    """An API precondition was violated."""


_tape_ids = itertools.count(1)


class Tape:
    """Ordered record of differentiable operations for one forward pass.

    Nodes are appended as the forward computation runs, so the list is already
    in topological order. A tape supports a single :func:`backward` call until
    :meth:`zero_grad` is invoked.
    """

    def __init__(self) -> None:
        self.id = next(_tape_ids)
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._tensors: list[Tensor] = []
        self.consumed = False

    def watch(self, data, requires_grad: bool = True) -> "Tensor":
        """Register a leaf tensor on this tape."""
        t = data if isinstance(data, Tensor) else Tensor(data)
        leaf = Tensor(t.data, requires_grad=requires_grad, _tape=self if requires_grad else None)
        return leaf

    def _register(self, t: "Tensor") -> None:
        self._tensors.append(t)

    def record(self, out: "Tensor", inputs: tuple["Tensor", ...], rule: Callable) -> None:
        self.nodes.append((out, inputs, rule))

    def zero_grad(self) -> None:
        for t in self._tensors:
            if t.grad is not None:
                t.grad = np.zeros_like(t.data)
        self.consumed = False

    def __len__(self) -> int:
        return len(self.nodes)


class Tensor:
    """Immutable dense matrix with an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "tape")

    def __init__(self, data, requires_grad: bool = False, _tape: Tape | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DimensionError(f"tensors are 2-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericError("tensor data contains non-finite values")
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        if self.requires_grad and _tape is None:
            _tape = Tape()
        self.tape = _tape if self.requires_grad else None
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        if self.tape is not None:
            self.tape._register(self)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def tape_id(self) -> int | None:
        return None if self.tape is None else self.tape.id

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data[0, 0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data.tolist()}{flag})"

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return neg(self)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(*arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.isfinite(a).all():
            raise NumericError("non-finite value in primitive")


def _common_tape(inputs: Sequence[Tensor]) -> Tape | None:
    tape = None
    for t in inputs:
        if t.requires_grad:
            if tape is None:
                tape = t.tape
            elif t.tape is not tape:
                raise ContractError("inputs belong to different tapes")
    return tape


def _emit(data: np.ndarray, inputs: tuple[Tensor, ...], rule: Callable) -> Tensor:
    """Wrap a forward result and record ``rule`` when any input needs grads.

    ``rule(g)`` maps the output gradient to one gradient per input (``None``
    for inputs that do not require grad).
    """
    _check_finite(data)
    tape = _common_tape(inputs)
    out = Tensor(data, requires_grad=tape is not None, _tape=tape)
    if tape is not None:
        tape.record(out, inputs, rule)
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# --- primitives -------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    _check_finite(a.data, b.data)
    A, B = a.data, b.data
    return _emit(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    _check_finite(a.data, b.data)
    return _emit(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    _check_finite(a.data, b.data)
    return _emit(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product; a ``1 x 1`` operand multiplies every entry."""
    _check_finite(a.data, b.data)
    A, B = a.data, b.data
    if a.shape == b.shape:
        return _emit(A * B, (a, b), lambda g: (g * B, g * A))
    if b.shape == (1, 1):
        return _emit(A * B, (a, b), lambda g: (g * B, np.sum(g * A, keepdims=True)))
    if a.shape == (1, 1):
        return _emit(A * B, (a, b), lambda g: (np.sum(g * B, keepdims=True), g * A))
    raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")


def scale(a: Tensor, c: float) -> Tensor:
    if not np.isfinite(c):
        raise NumericError("scale factor is not finite")
    _check_finite(a.data)
    return _emit(a.data * c, (a,), lambda g: (g * c,))


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def transpose(a: Tensor) -> Tensor:
    _check_finite(a.data)
    return _emit(a.data.T.copy(), (a,), lambda g: (g.T,))


def relu(a: Tensor) -> Tensor:
    _check_finite(a.data)
    # subgradient at exactly 0 is 0
    mask = a.data > 0
    return _emit(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def power(a: Tensor, p: float) -> Tensor:
    _check_finite(a.data)
    A = a.data
    out = A**p
    return _emit(out, (a,), lambda g: (g * p * A ** (p - 1),))


def sqrt(a: Tensor) -> Tensor:
    _check_finite(a.data)
    if (a.data < 0).any():
        raise NumericError("sqrt of a negative entry")
    out = np.sqrt(a.data)
    return _emit(out, (a,), lambda g: (g * 0.5 / out,))


def row_sum(a: Tensor) -> Tensor:
    """Sum across each row: ``n x d -> n x 1``."""
    _check_finite(a.data)
    shape = a.shape
    return _emit(a.data.sum(axis=1, keepdims=True), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def col_sum(a: Tensor) -> Tensor:
    """Sum down each column: ``n x d -> 1 x d``."""
    _check_finite(a.data)
    shape = a.shape
    return _emit(a.data.sum(axis=0, keepdims=True), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def col_mean(a: Tensor) -> Tensor:
    _check_finite(a.data)
    shape = a.shape
    n = shape[0]
    return _emit(a.data.mean(axis=0, keepdims=True), (a,), lambda g: (np.broadcast_to(g / n, shape).copy(),))


def col_max(a: Tensor) -> Tensor:
    """Column-wise maximum ``n x d -> 1 x d``.

    The argmax is fixed at forward time (``np.argmax`` picks the lowest row on
    ties) and the backward pass routes gradient only to those positions.
    """
    _check_finite(a.data)
    idx = np.argmax(a.data, axis=0)
    cols = np.arange(a.cols)
    shape = a.shape

    def rule(g):
        out = np.zeros(shape)
        out[idx, cols] = g[0]
        return (out,)

    return _emit(a.data[idx, cols][None, :], (a,), rule)


def total_sum(a: Tensor) -> Tensor:
    _check_finite(a.data)
    shape = a.shape
    return _emit(np.sum(a.data, keepdims=True), (a,), lambda g: (np.full(shape, g[0, 0]),))


def l2_norm(a: Tensor) -> Tensor:
    """Frobenius norm as a ``1 x 1`` tensor."""
    _check_finite(a.data)
    A = a.data
    nrm = float(np.sqrt(np.sum(A * A)))
    if nrm == 0.0:
        raise NumericError("l2_norm of a zero tensor is not differentiable")
    return _emit(np.array([[nrm]]), (a,), lambda g: (g[0, 0] * A / nrm,))


def normalize(a: Tensor) -> Tensor:
    """Divide a vector (any shape) by its Euclidean norm."""
    _check_finite(a.data)
    A = a.data
    nrm = float(np.sqrt(np.sum(A * A)))
    if nrm == 0.0:
        raise NumericError("cannot normalize a zero vector")
    u = A / nrm

    def rule(g):
        return ((g - u * np.sum(g * u)) / nrm,)

    return _emit(u, (a,), rule)


def softmax_cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Cross-entropy of a ``1 x C`` logit row against class ``label``."""
    if logits.rows != 1:
        raise DimensionError(f"logits must be 1 x C, got {logits.shape}")
    if not 0 <= label < logits.cols:
        raise ContractError(f"label {label} outside [0, {logits.cols})")
    _check_finite(logits.data)
    z = logits.data[0]
    shifted = z - z.max()
    logsum = np.log(np.exp(shifted).sum())
    p = np.exp(shifted - logsum)
    loss = logsum - shifted[label]

    def rule(g):
        d = p.copy()
        d[label] -= 1.0
        return (g[0, 0] * d[None, :],)

    return _emit(np.array([[loss]]), (logits,), rule)


# --- reverse pass -----------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor of ``loss``'s tape that feeds it."""
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss.tape
    if tape is None:
        raise ContractError("loss is not recorded on a tape")
    if tape.consumed:
        raise ContractError("backward already ran on this tape; call zero_grad() first")
    tape.consumed = True

    # Work in a private buffer so fan-out accumulates before being published.
    pending: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    for out, inputs, rule in reversed(tape.nodes):
        g = pending.pop(id(out), None)
        if g is None:
            continue
        out.grad = out.grad + g
        for t, gi in zip(inputs, rule(g)):
            if not t.requires_grad or gi is None:
                continue
            key = id(t)
            if key in pending:
                pending[key] = pending[key] + gi
            else:
                pending[key] = gi
    # remaining entries are leaves
    for t in tape._tensors:
        g = pending.pop(id(t), None)
        if g is not None:
            t.grad = t.grad + g


def grad_check(f: Callable[[Tensor], Tensor], point, step: float = 1e-5) -> float:
    """Max relative error between autodiff and central differences.

    The error per coordinate is ``|auto - fd| / max(1, |fd|)``.
    """
    if step <= 0:
        raise ContractError("step must be positive")
    x0 = as_tensor(point).data.copy()
    tape = Tape()
    leaf = tape.watch(x0)
    out = f(leaf)
    if out.shape != (1, 1):
        raise ContractError(f"f must be scalar-valued, got shape {out.shape}")
    backward(out)
    auto = leaf.grad

    fd = np.zeros_like(x0)
    for idx in np.ndindex(*x0.shape):
        xp = x0.copy()
        xm = x0.copy()
        xp[idx] += step
        xm[idx] -= step
        fd[idx] = (f(Tensor(xp)).item() - f(Tensor(xm)).item()) / (2 * step)
    return float(np.max(np.abs(auto - fd) / np.maximum(1.0, np.abs(fd))))
