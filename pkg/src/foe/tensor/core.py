"""Tensor value type and the reverse-mode tape.

Gradients follow the conjugate convention used for real-valued losses: for a
complex tensor ``z = a + ib`` the stored gradient is ``dL/da + i dL/db``.  For
real tensors the gradient is the ordinary real gradient.  Any complex gradient
flowing into a real tensor is projected onto its real part, which is exactly
the chain rule for a real input embedded in a complex computation.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

_REAL = (np.float32, np.float64)
_COMPLEX = (np.complex64, np.complex128)
_ids = itertools.count()
_state = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = []
    return stack


def grad_enabled() -> bool:
    return not getattr(_state, "no_grad", False)


@contextmanager
def no_grad():
    """Suspend recording on the current thread."""
    prev = getattr(_state, "no_grad", False)
    _state.no_grad = True
    try:
        yield
    finally:
        _state.no_grad = prev


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype.type in _REAL or arr.dtype.type in _COMPLEX:
        return arr
    if np.iscomplexobj(arr):
        return arr.astype(np.complex128)
    return arr.astype(np.float64)


class Tensor:
    """Dense real or complex array with optional gradient tracking."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        if 0 in self.data.shape:
            raise ValueError(f"zero-sized extent in shape {self.data.shape}")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.id = next(_ids)
        self.node: Node | None = None

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

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self):
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None):
        from . import ops
        return ops.sum(self, axis)

    def mean(self, axis=None):
        from . import ops
        return ops.mean(self, axis)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass(eq=False)
class Node:
    """One recorded primitive application."""

    name: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]

    @property
    def input_ids(self) -> tuple[int, ...]:
        return tuple(t.id for t in self.inputs)

    @property
    def output_id(self) -> int:
        return self.output.id


@dataclass(eq=False)
class Tape:
    """Ordered record of primitive applications.

    Operations executed inside ``with tape:`` on the owning thread are
    appended in execution order, so the list is topologically sorted by
    construction.  A tape can be differentiated once.
    """

    nodes: list[Node] = field(default_factory=list)
    consumed: bool = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape stack corrupted")
        stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def names(self) -> list[str]:
        return [n.name for n in self.nodes]

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def record(name: str, out_data, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap ``out_data`` in a Tensor and record it on the active tape.

    Recording happens only when gradients are enabled, a tape is active on
    this thread, and at least one input requires a gradient.
    """
    out = Tensor(out_data)
    stack = _tape_stack()
    if stack and grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = Node(name, tuple(inputs), out, backward_fn)
        out.node = node
        stack[-1].nodes.append(node)
    return out


def _accumulate(store: dict[int, np.ndarray], t: Tensor, g: np.ndarray) -> None:
    if np.iscomplexobj(g) and not t.is_complex:
        g = g.real
    if g.shape != t.shape:
        raise RuntimeError(f"gradient shape {g.shape} does not match tensor shape {t.shape}")
    prev = store.get(t.id)
    store[t.id] = g.copy() if prev is None else prev + g


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` on every leaf reachable from ``loss`` through ``tape``.

    Leaves are tensors that require gradients but were not produced by a
    node on this tape.  Existing leaf gradients are accumulated into.
    """
    if loss.size != 1 or loss.ndim != 0 and loss.shape != (1,):
        raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
    if loss.is_complex:
        raise ValueError("loss must be real")
    if tape.consumed:
        raise RuntimeError("tape already differentiated; record a new one")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {loss.id: np.ones(loss.shape, dtype=loss.dtype)}
    produced = {n.output_id for n in tape.nodes}
    leaves: dict[int, Tensor] = {}
    if loss.requires_grad and loss.id not in produced:
        leaves[loss.id] = loss

    for node in reversed(tape.nodes):
        g = grads.pop(node.output_id, None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            _accumulate(grads, t, np.asarray(gi))
            if t.id not in produced:
                leaves.setdefault(t.id, t)

    for tid, leaf in leaves.items():
        g = grads.get(tid)
        if g is None:
            continue
        leaf.grad = g if leaf.grad is None else leaf.grad + g
