"""Tensor value type and the gradient tape.

A :class:`Tensor` is a thin wrapper around a numpy array. Operations are plain
functions (see :mod:`crossres.tensor.ops`) that compute a new array and, while
a :class:`GradTape` is active and one of their inputs is being tracked, append
a node holding a backward closure. ``GradTape.gradient`` replays the recorded
nodes in reverse order, so every node is visited exactly once.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent.

    ``axis`` names the offending dimension (``"channels"``, ``"height"``...)
    when one can be identified.
    """

    def __init__(self, message: str, axis: str | None = None):
        super().__init__(message)
        self.axis = axis


class Tensor:
    """N-d array of reals with an optional gradient-tracking flag.

    Data is stored as float32 unless a float64 array is passed explicitly
    (used by :func:`crossres.tensor.grad_check`).
    """

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype != np.float64 or not isinstance(data, np.ndarray):
            arr = arr.astype(DEFAULT_DTYPE, copy=False)
        self.data = arr
        self.requires_grad = requires_grad
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

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # Arithmetic sugar; the implementations live in ops.
    def __add__(self, other):
        from .ops import add
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from .ops import sub
        return sub(self, other)

    def __rsub__(self, other):
        from .ops import sub
        return sub(other, self)

    def __mul__(self, other):
        from .ops import mul
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from .ops import mul
        return mul(self, -1.0)

    def __getitem__(self, index):
        from .ops import getitem
        return getitem(self, index)

    def reshape(self, *shape):
        from .ops import reshape
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self):
        from .ops import sum_all
        return sum_all(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn):
        self.out = out
        self.inputs = inputs
        self.backward = backward


_TAPES: list["GradTape"] = []


class GradTape:
    """Records differentiable operations for one backward pass.

    Usage::

        with GradTape() as tape:
            tape.watch(x)
            y = f(x)
        (dx,) = tape.gradient(y, [x])

    Tensors created with ``requires_grad=True`` are tracked without an
    explicit ``watch``. A tape is single-use and owned by one caller.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._tracked: dict[int, Tensor] = {}
        self._used = False

    def __enter__(self) -> "GradTape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            self._tracked[id(t)] = t

    def is_tracked(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._tracked

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: BackwardFn) -> None:
        if any(self.is_tracked(t) for t in inputs):
            self._nodes.append(_Node(out, inputs, backward))
            self._tracked[id(out)] = out

    def gradient(self, target: Tensor, sources: Iterable[Tensor]) -> list[np.ndarray]:
        """Reverse-mode gradient of ``sum(target)`` w.r.t. each source.

        Sources the target does not depend on get zero arrays.
        """
        if self._used:
            raise RuntimeError("GradTape.gradient can only be called once")
        self._used = True
        sources = list(sources)
        keep = {id(s) for s in sources}
        grads: dict[int, np.ndarray] = {id(target): np.ones_like(target.data)}
        for node in reversed(self._nodes):
            key = id(node.out)
            g = grads.get(key)
            if g is None:
                continue
            if key not in keep:
                del grads[key]
            in_grads = node.backward(g)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or not self.is_tracked(inp):
                    continue
                if gi.shape != inp.shape:
                    raise ShapeError(
                        f"gradient shape {gi.shape} != value shape {inp.shape}"
                    )
                k = id(inp)
                if k in grads:
                    grads[k] = grads[k] + gi
                else:
                    grads[k] = gi
        self._nodes.clear()
        return [
            grads.get(id(s), np.zeros_like(s.data)).astype(s.dtype, copy=False)
            for s in sources
        ]


def record(out_data: np.ndarray, inputs: Sequence, backward: BackwardFn) -> Tensor:
    """Wrap ``out_data`` in a Tensor and register its backward on the active tape."""
    out = Tensor(out_data)
    if _TAPES:
        tape = _TAPES[-1]
        tensors = tuple(t for t in inputs if isinstance(t, Tensor))
        if len(tensors) == len(inputs):
            tape._record(out, tensors, backward)
        else:
            raise TypeError("record() inputs must all be Tensors")
    return out


def taping() -> bool:
    return bool(_TAPES)
