"""
Tensor values and the tape that records operations on them.

Gradients are only tracked while a ``Tape`` is active::

    with Tape() as tape:
        loss = ops.sum(ops.matmul(x, w))
    tape.backward(loss)
    w.grad  # same shape as w

Outside a tape every op is a plain numpy computation (used by eval/infer).
"""
import itertools
import logging
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import ContractError, NumericsError

logger = logging.getLogger(__name__)

_ids = itertools.count()

_dtype: ContextVar[type] = ContextVar("km_dtype", default=np.float32)
_debug: ContextVar[bool] = ContextVar("km_debug", default=False)
_tape: ContextVar[Optional["Tape"]] = ContextVar("km_tape", default=None)


# --------------------------
# PRECISION / DEBUG
# --------------------------
def default_dtype():
    return _dtype.get()


@contextmanager
def precision(dtype):
    """64-bit for gradient checking, 32-bit (the default) for training."""
    token = _dtype.set(np.dtype(dtype).type)
    try:
        yield
    finally:
        _dtype.reset(token)


@contextmanager
def debug_checks(enabled=True):
    """Verify every recorded op output is finite."""
    token = _debug.set(enabled)
    try:
        yield
    finally:
        _debug.reset(token)


# --------------------------
# TENSOR
# --------------------------
class Tensor:
    """
    n-dimensional real array with an optional gradient.

    ``data`` is never modified in place by any op; optimizers rebind it.
    """

    __array_priority__ = 100

    def __init__(self, values, requires_grad=False, name=None, dtype=None):
        self.data = np.array(values, dtype=dtype or default_dtype())
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self.id = next(_ids)
        self.is_leaf = True

    @classmethod
    def wrap(cls, array):
        """Wrap an op result without copying or casting."""
        t = cls.__new__(cls)
        t.data = array
        t.grad = None
        t.requires_grad = False
        t.name = None
        t.id = next(_ids)
        t.is_leaf = True
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data.copy()

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single value, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # Arithmetic delegates to ops; imported lazily to avoid the cycle.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def as_tensor(value, like=None):
    """Constants (python scalars, arrays) become non-differentiable tensors."""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(value, dtype=dtype)


# --------------------------
# TAPE
# --------------------------
@dataclass
class Record:
    inputs: Sequence[Tensor]
    output: Tensor
    backward: Callable
    op: str


class Tape:
    """Ordered log of differentiable operations; confined to one thread."""

    def __init__(self):
        self.records = []
        self._token = None
        self._consumed = False

    def __enter__(self):
        self._token = _tape.set(self)
        return self

    def __exit__(self, *exc):
        _tape.reset(self._token)
        self._token = None
        return False

    def __len__(self):
        return len(self.records)

    def push(self, record):
        self.records.append(record)

    def backward(self, loss):
        """Populate ``grad`` on every ``requires_grad`` leaf reached from ``loss``."""
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar output, got shape {loss.shape}")
        if self._consumed:
            raise ContractError("backward has already been run on this tape")
        self._consumed = True

        grads = {loss.id: np.ones_like(loss.data)}
        leaves = {}
        for rec in reversed(self.records):
            g = grads.pop(rec.output.id, None)
            if g is None:
                continue
            in_grads = rec.backward(g)
            for t, gi in zip(rec.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if gi.shape != t.shape:
                    raise ContractError(
                        f"backward of {rec.op} produced grad {gi.shape} for input {t.shape}"
                    )
                if t.id in grads:
                    grads[t.id] = grads[t.id] + gi
                else:
                    grads[t.id] = gi
                if t.is_leaf:
                    leaves[t.id] = t

        for t in leaves.values():
            g = grads.get(t.id)
            t.grad = g.astype(t.dtype, copy=False)
        logger.debug("backward over %d records, %d leaves", len(self.records), len(leaves))


def current_tape():
    return _tape.get()


def record(data, inputs, backward, op):
    """
    Wrap ``data`` as the output of ``op`` and log it on the active tape.

    ``backward(g)`` returns one gradient (or None) per input.
    """
    out = Tensor.wrap(data)
    if _debug.get() and not np.all(np.isfinite(data)):
        raise NumericsError(f"{op} produced non-finite values")
    tape = _tape.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        tape.push(Record(inputs=tuple(inputs), output=out, backward=backward, op=op))
    return out
