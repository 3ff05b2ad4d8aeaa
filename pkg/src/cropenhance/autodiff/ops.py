"""Differentiable operations over :class:`~cropenhance.autodiff.Tensor`.

Each op computes its forward value with plain numpy (or a kernel backend
call), wraps it in a new Tensor and, when gradients are needed, records a
closure computing the vector-Jacobian product onto the active tape.

Only the limited broadcasting these networks need is supported: binary
elementwise ops take equal shapes or a scalar (0-d) operand on either
side. Anything else raises :class:`ShapeError`.
"""

import numpy as np

from .. import kernels
from .tensor import ShapeError, Tensor, record


def _out(name, inputs, data, vjp):
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    record(name, inputs, out, vjp)
    return out


def _check_dtypes(name, *tensors):
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ShapeError(f"{name}: mixed dtypes {sorted(str(d) for d in dtypes)}")


def _unbroadcast(g, shape):
    """Reduce a gradient back to a (possibly scalar) operand shape."""
    if g.shape == shape:
        return g
    return np.sum(g, dtype=g.dtype).reshape(shape)


def _binary_shapes(name, a, b):
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} do not agree")


def constant(value, dtype=np.float32):
    return Tensor(np.asarray(value, dtype=dtype))


# ---------------------------------------------------------------------------
# elementwise / scalar arithmetic


def add(a, b):
    _check_dtypes("add", a, b)
    _binary_shapes("add", a, b)
    data = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _out("add", (a, b), data, vjp)


def sub(a, b):
    _check_dtypes("sub", a, b)
    _binary_shapes("sub", a, b)
    data = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _out("sub", (a, b), data, vjp)


def mul(a, b):
    _check_dtypes("mul", a, b)
    _binary_shapes("mul", a, b)
    data = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _out("mul", (a, b), data, vjp)


def div(a, b):
    """Elementwise a / b (same shapes, or scalar on either side)."""
    _check_dtypes("div", a, b)
    _binary_shapes("div", a, b)
    data = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _out("div", (a, b), data, vjp)


def scale(x, c):
    c = x.dtype.type(c)
    data = x.data * c

    def vjp(g):
        return (g * c,)

    return _out("scale", (x,), data, vjp)


def add_scalar(x, c):
    data = x.data + x.dtype.type(c)

    def vjp(g):
        return (g,)

    return _out("add_scalar", (x,), data, vjp)


def negate(x):
    return scale(x, -1.0)


def relu(x):
    data = np.maximum(x.data, 0)

    def vjp(g):
        return (g * (x.data > 0),)

    return _out("relu", (x,), data, vjp)


def sqrt(x):
    data = np.sqrt(x.data)

    def vjp(g):
        # Guarded at zero so a zeroed upstream gradient stays zero
        # instead of producing 0 * inf = NaN.
        return (g * (0.5 / np.maximum(data, x.dtype.type(1e-20))),)

    return _out("sqrt", (x,), data, vjp)


def clamp_min(x, floor):
    """max(x, floor); gradient is zero wherever the floor is active."""
    floor = x.dtype.type(floor)
    data = np.maximum(x.data, floor)

    def vjp(g):
        return (g * (x.data > floor),)

    return _out("clamp_min", (x,), data, vjp)


# ---------------------------------------------------------------------------
# reductions and reshaping


def sum_all(x):
    data = np.asarray(x.data.sum(), dtype=x.dtype)

    def vjp(g):
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),)

    return _out("sum_all", (x,), data, vjp)


def mean_all(x):
    inv = x.dtype.type(1.0 / x.size)
    data = np.asarray(x.data.sum() * inv, dtype=x.dtype)

    def vjp(g):
        return (np.broadcast_to(g * inv, x.shape).astype(x.dtype, copy=True),)

    return _out("mean_all", (x,), data, vjp)


def dot(a, b):
    """Sum of the elementwise product; both operands flattened."""
    _check_dtypes("dot", a, b)
    if a.size != b.size:
        raise ShapeError(f"dot: sizes {a.size} and {b.size} differ")
    data = np.asarray(np.dot(a.data.reshape(-1), b.data.reshape(-1)), dtype=a.dtype)

    def vjp(g):
        return (g * b.data).astype(a.dtype), (g * a.data).astype(b.dtype)

    return _out("dot", (a, b), data, vjp)


def reshape(x, shape):
    shape = tuple(shape)
    data = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.shape),)

    return _out("reshape", (x,), data, vjp)


def flatten(x):
    return reshape(x, (x.size,))


# ---------------------------------------------------------------------------
# neural-network layers


def _same_pads(size, k, stride):
    out = -(-size // stride)
    total = max(0, (out - 1) * stride + k - size)
    lead = total // 2
    return lead, total - lead  # extra padding goes on the bottom/right


def conv_output_shape(in_shape, w_shape, stride, padding):
    c_in, h, w = in_shape
    c_out, c_in_w, kh, kw = w_shape
    if c_in != c_in_w:
        raise ShapeError(
            f"conv2d: input has {c_in} channels but weight expects {c_in_w}"
        )
    if padding == "same":
        pt, pb = _same_pads(h, kh, stride)
        pl, pr = _same_pads(w, kw, stride)
    elif padding == "valid":
        pt = pb = pl = pr = 0
        if h < kh or w < kw:
            raise ShapeError(f"conv2d: kernel {kh}x{kw} exceeds input {h}x{w}")
    else:
        raise ValueError(f"conv2d: unknown padding mode {padding!r}")
    ho = (h + pt + pb - kh) // stride + 1
    wo = (w + pl + pr - kw) // stride + 1
    return (c_out, ho, wo), (pt, pb, pl, pr)


def conv2d(x, w, b=None, stride=1, padding="valid"):
    """2-D cross-correlation of x (C,H,W) with w (O,C,kH,kW) plus bias (O,)."""
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ShapeError(
            f"conv2d: expected (C,H,W) input and (O,C,kH,kW) weight, "
            f"got {x.shape} and {w.shape}"
        )
    _check_dtypes("conv2d", *((x, w, b) if b is not None else (x, w)))
    (c_out, ho, wo), pads = conv_output_shape(x.shape, w.shape, stride, padding)
    data = kernels.conv2d_forward(x.data, w.data, stride, pads)
    if b is not None:
        if b.shape != (c_out,):
            raise ShapeError(f"conv2d: bias shape {b.shape} != ({c_out},)")
        data = data + b.data[:, None, None]

    inputs = (x, w) if b is None else (x, w, b)
    needs = tuple(t.requires_grad for t in inputs)

    def vjp(g):
        g = np.ascontiguousarray(g)
        gx = gw = gb = None
        if needs[0]:
            gx = kernels.conv2d_backward_input(g, w.data, x.shape, stride, pads)
        if needs[1]:
            gw = kernels.conv2d_backward_weight(
                g, x.data, w.shape[2], w.shape[3], stride, pads
            )
        if b is not None and needs[2]:
            gb = g.sum(axis=(1, 2))
        return (gx, gw) if b is None else (gx, gw, gb)

    return _out("conv2d", inputs, data, vjp)


def linear(x, w, b):
    """w @ x + b for a vector x (N,), weight (M,N), bias (M,)."""
    _check_dtypes("linear", x, w, b)
    if x.data.ndim != 1 or w.data.ndim != 2:
        raise ShapeError(f"linear: expected vector and matrix, got {x.shape}, {w.shape}")
    m, n = w.shape
    if x.shape != (n,) or b.shape != (m,):
        raise ShapeError(
            f"linear: weight {w.shape} needs input ({n},) and bias ({m},), "
            f"got {x.shape} and {b.shape}"
        )
    data = w.data @ x.data + b.data
    needs = (x.requires_grad, w.requires_grad, b.requires_grad)

    def vjp(g):
        gx = w.data.T @ g if needs[0] else None
        gw = np.outer(g, x.data) if needs[1] else None
        gb = g if needs[2] else None
        return gx, gw, gb

    return _out("linear", (x, w, b), data, vjp)


def _check_pool(name, x, k):
    if x.data.ndim != 3:
        raise ShapeError(f"{name}: expected (C,H,W), got {x.shape}")
    _, h, w = x.shape
    if k < 1 or h % k or w % k:
        raise ShapeError(f"{name}: window {k} must divide spatial dims {h}x{w}")


def maxpool2d(x, k):
    _check_pool("maxpool2d", x, k)
    from .tensor import active_tape

    need_arg = x.requires_grad and active_tape() is not None
    data, arg = kernels.maxpool2d_forward(x.data, k, need_arg)

    def vjp(g):
        return (kernels.maxpool2d_backward(np.ascontiguousarray(g), arg, k, x.shape),)

    return _out("maxpool2d", (x,), data, vjp)


def avgpool2d(x, k):
    _check_pool("avgpool2d", x, k)
    data = kernels.avgpool2d_forward(x.data, k)

    def vjp(g):
        return (kernels.avgpool2d_backward(np.ascontiguousarray(g), k, x.shape),)

    return _out("avgpool2d", (x,), data, vjp)


def pixel_shuffle(x, r):
    """Rearrange (C*r*r, H, W) to (C, H*r, W*r), depth-to-space."""
    if x.data.ndim != 3:
        raise ShapeError(f"pixel_shuffle: expected (C,H,W), got {x.shape}")
    c2, h, w = x.shape
    if r < 1 or c2 % (r * r):
        raise ShapeError(f"pixel_shuffle: {c2} channels not divisible by r^2={r * r}")
    c = c2 // (r * r)
    data = np.ascontiguousarray(
        x.data.reshape(c, r, r, h, w).transpose(0, 3, 1, 4, 2)
    ).reshape(c, h * r, w * r)

    def vjp(g):
        return (_unshuffle_data(g, r),)

    return _out("pixel_shuffle", (x,), data, vjp)


def _unshuffle_data(a, r):
    c, hr, wr = a.shape
    h, w = hr // r, wr // r
    return np.ascontiguousarray(
        a.reshape(c, h, r, w, r).transpose(0, 2, 4, 1, 3)
    ).reshape(c * r * r, h, w)


def pixel_unshuffle(x, r):
    """Exact inverse of :func:`pixel_shuffle` (space-to-depth)."""
    if x.data.ndim != 3:
        raise ShapeError(f"pixel_unshuffle: expected (C,H,W), got {x.shape}")
    c, hr, wr = x.shape
    if r < 1 or hr % r or wr % r:
        raise ShapeError(f"pixel_unshuffle: dims {hr}x{wr} not divisible by r={r}")
    data = _unshuffle_data(x.data, r)
    h, w = hr // r, wr // r

    def vjp(g):
        return (
            np.ascontiguousarray(
                g.reshape(c, r, r, h, w).transpose(0, 3, 1, 4, 2)
            ).reshape(c, hr, wr),
        )

    return _out("pixel_unshuffle", (x,), data, vjp)
