"""Tape-based reverse-mode automatic differentiation.

A :class:`Tensor` wraps a float32/float64 numpy array plus an optional
gradient buffer. Operations (see :mod:`cropenhance.autodiff.ops`) record
themselves onto the innermost active :class:`Tape`; :func:`backward`
replays the tape in reverse, accumulating vector-Jacobian products.

Recording only happens inside a ``with Tape() as tape:`` block, so code
that never opens a tape (data generation, evaluation) pays no autodiff
overhead. Tapes are thread-local: each thread sees only its own stack.
"""

import threading

import numpy as np

_ALLOWED_DTYPES = (np.float32, np.float64)


class ShapeError(ValueError):
    """Raised when operand dimensions do not agree."""


class GraphError(RuntimeError):
    """Raised when backward() is asked to differentiate a detached value."""


class Tensor:
    """N-dimensional float array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.type not in _ALLOWED_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def is_finite(self):
        """True when neither data nor grad contains NaN/Inf."""
        ok = bool(np.isfinite(self.data).all())
        if ok and self.grad is not None:
            ok = bool(np.isfinite(self.grad).all())
        return ok

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        return (
            f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}, "
            f"requires_grad={self.requires_grad})"
        )

    # Thin arithmetic sugar; the full op set lives in ops.py.
    def __add__(self, other):
        from . import ops

        if isinstance(other, Tensor):
            return ops.add(self, other)
        return ops.add_scalar(self, other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops

        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, other)

    __rmul__ = __mul__


class _TapeEntry:
    __slots__ = ("name", "inputs", "output", "vjp")

    def __init__(self, name, inputs, output, vjp):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


class Tape:
    """Ordered record of operations, innermost-active within a thread.

    Execution order is a topological order of the data flow, so replaying
    entries in reverse visits every consumer before its producer.
    """

    def __init__(self):
        self.entries = []

    def __enter__(self):
        _local.stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _local.stack.pop()
        assert popped is self, "tape stack corrupted"
        return False

    def __len__(self):
        return len(self.entries)

    def clear(self):
        self.entries.clear()


class _Local(threading.local):
    def __init__(self):
        self.stack = []


_local = _Local()


def active_tape():
    return _local.stack[-1] if _local.stack else None


def record(name, inputs, output, vjp):
    """Append an op to the active tape if its output needs gradients."""
    tape = active_tape()
    if tape is not None and output.requires_grad:
        tape.entries.append(_TapeEntry(name, tuple(inputs), output, vjp))


def backward(loss, tape=None):
    """Accumulate d(loss)/d(t) into t.grad for every tensor on the tape.

    Gradients add across fan-out, and across repeated backward() calls on
    the same tape (two calls without zero_grad double every gradient).
    """
    if tape is None:
        tape = active_tape()
    if tape is None:
        raise GraphError("backward() needs a tape (none active, none given)")
    if loss.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {tuple(loss.shape)}")
    if not loss.requires_grad:
        raise GraphError("loss does not require grad; graph is detached")

    grads = {id(loss): np.ones_like(loss.data)}
    tensors = {id(loss): loss}
    for entry in reversed(tape.entries):
        g_out = grads.get(id(entry.output))
        if g_out is None:
            continue
        in_grads = entry.vjp(g_out)
        for t, g in zip(entry.inputs, in_grads):
            if g is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g
                tensors[key] = t

    # Every key in grads is the loss or some entry input that requires
    # grad, so tensors[] is total and the flush is unconditional.
    for key, g in grads.items():
        tensors[key].accumulate_grad(g)
