"""Rank-4 tensors, parameters, and a reverse-mode autodiff tape.

Every value flowing through the network is a Tensor wrapping a (N, C, H, W)
ndarray in float64 or float32.  Scalars (losses) use shape (1, 1, 1, 1).
Ops in kernels.py record pull-back closures on the active tape; backward()
replays them in reverse order, accumulating into .grad arrays.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ShapeError, TapeError

DTYPES = {"f64": np.float64, "f32": np.float32}
_NP_TO_TAG = {np.dtype(np.float64): "f64", np.dtype(np.float32): "f32"}


def dtype_of(arr: np.ndarray) -> str:
    """Return the short dtype tag ("f64" or "f32") for an array."""
    tag = _NP_TO_TAG.get(arr.dtype)
    if tag is None:
        raise ShapeError(f"unsupported dtype {arr.dtype}, expected float64 or float32")
    return tag


class Tensor:
    """A rank-4 array plus a gradient buffer of the same shape."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        value = np.asarray(value)
        if value.ndim != 4:
            raise ShapeError(f"tensors are rank 4 (N, C, H, W), got shape {value.shape}")
        dtype_of(value)  # validates
        self.value = value
        self.grad = np.zeros_like(value)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.value.shape

    @property
    def dtype(self) -> str:
        return dtype_of(self.value)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.value.shape}, dtype={self.dtype})"


class Param(Tensor):
    """A named leaf tensor with a momentum buffer for SGD."""

    __slots__ = ("name", "momentum")

    def __init__(self, name: str, value: np.ndarray):
        super().__init__(value)
        self.name = name
        self.momentum = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.value.shape}, dtype={self.dtype})"


_ACTIVE: "Tape | None" = None

# When set to an op name, every replayed pull-back for that op sees its
# incoming gradient scaled by 1.001.  Used to prove the gradient checker
# actually catches a corrupted backward pass.
_FAULT_OP: str | None = None


class Tape:
    """Ordered record of pull-back closures for one forward pass."""

    def __init__(self):
        self._records: list[Callable[[], None]] = []
        self._spent = False

    def __enter__(self) -> "Tape":
        global _ACTIVE
        if _ACTIVE is not None:
            raise TapeError("a tape is already active; tapes do not nest")
        _ACTIVE = self
        return self

    def __exit__(self, *exc) -> bool:
        global _ACTIVE
        _ACTIVE = None
        return False

    def __len__(self) -> int:
        return len(self._records)


def record(op: str, out: Tensor, pull: Callable[[np.ndarray], None]) -> None:
    """Register a pull-back for `out` on the active tape, if any.

    `pull` receives the gradient flowing into `out` and must accumulate
    (+=) into the grads of the op's inputs.
    """
    tape = _ACTIVE
    if tape is None:
        return

    def replay() -> None:
        g = out.grad
        if _FAULT_OP == op:
            g = g * 1.001
        pull(g)

    tape._records.append(replay)


def backward(tape: Tape, loss: Tensor) -> None:
    """Seed d(loss)/d(loss) = 1 and replay the tape in reverse."""
    if tape._spent:
        raise TapeError("backward already ran on this tape")
    if loss.shape != (1, 1, 1, 1):
        raise ShapeError(f"backward needs a scalar loss of shape (1, 1, 1, 1), got {loss.shape}")
    tape._spent = True
    loss.grad[...] = 1.0
    for replay in reversed(tape._records):
        replay()


class inject_fault:
    """Context manager that corrupts the backward pass of one op by name."""

    def __init__(self, op: str):
        self.op = op

    def __enter__(self) -> None:
        global _FAULT_OP
        _FAULT_OP = self.op

    def __exit__(self, *exc) -> bool:
        global _FAULT_OP
        _FAULT_OP = None
        return False


def zero_grads(params: list[Param]) -> None:
    for p in params:
        p.grad[...] = 0.0


def sgd_step(params: list[Param], lr: float, momentum: float = 0.0, weight_decay: float = 0.0) -> None:
    """Momentum SGD update: v <- m*v + (g + wd*w); w <- w - lr*v."""
    for p in params:
        g = p.grad
        if weight_decay != 0.0:
            g = g + weight_decay * p.value
        p.momentum *= momentum
        p.momentum += g
        p.value -= lr * p.momentum
