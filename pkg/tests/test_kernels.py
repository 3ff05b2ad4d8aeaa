"""Cross-backend agreement: the compiled kernels and the numpy fallback
must compute the same functions (within float rounding; exactly for
pure rearrangements)."""

import numpy as np
import pytest

from cropenhance.kernels import _native, numpy_backend

pytestmark = pytest.mark.skipif(_native is None, reason="native backend not built")

DTYPES = [np.float32, np.float64]


def tol(dtype):
    return dict(rtol=2e-5, atol=2e-6) if dtype == np.float32 else dict(rtol=1e-12, atol=1e-13)


@pytest.mark.parametrize("dtype", DTYPES)
@pytest.mark.parametrize(
    "stride,pads", [(1, (0, 0, 0, 0)), (1, (1, 1, 1, 1)), (2, (0, 1, 0, 1)), (3, (2, 2, 2, 2))]
)
def test_conv_forward_agreement(rng, dtype, stride, pads):
    x = rng.random((3, 11, 13)).astype(dtype)
    w = rng.random((4, 3, 3, 3)).astype(dtype)
    a = numpy_backend.conv2d_forward(x, w, stride, pads)
    b = _native.conv2d_forward(x, w, stride, pads)
    assert a.shape == b.shape
    np.testing.assert_allclose(a, b, **tol(dtype))


@pytest.mark.parametrize("dtype", DTYPES)
@pytest.mark.parametrize("stride,pads", [(1, (0, 0, 0, 0)), (2, (1, 0, 1, 0))])
def test_conv_backward_agreement(rng, dtype, stride, pads):
    x = rng.random((3, 10, 10)).astype(dtype)
    w = rng.random((4, 3, 2, 2)).astype(dtype)
    gy = numpy_backend.conv2d_forward(x, w, stride, pads).astype(dtype)
    gw_a = numpy_backend.conv2d_backward_weight(gy, x, 2, 2, stride, pads)
    gw_b = _native.conv2d_backward_weight(gy, x, 2, 2, stride, pads)
    np.testing.assert_allclose(gw_a, gw_b, **tol(dtype))
    gx_a = numpy_backend.conv2d_backward_input(gy, w, x.shape, stride, pads)
    gx_b = _native.conv2d_backward_input(gy, w, x.shape, stride, pads)
    np.testing.assert_allclose(gx_a, gx_b, **tol(dtype))


@pytest.mark.parametrize("dtype", DTYPES)
@pytest.mark.parametrize("k", [1, 2, 4])
def test_pool_agreement(rng, dtype, k):
    x = rng.random((3, 8, 8)).astype(dtype)
    ya, aa = numpy_backend.maxpool2d_forward(x, k)
    yb, ab = _native.maxpool2d_forward(x, k)
    np.testing.assert_array_equal(ya, yb)
    np.testing.assert_array_equal(aa, ab)
    gy = rng.random(ya.shape).astype(dtype)
    np.testing.assert_array_equal(
        numpy_backend.maxpool2d_backward(gy, aa, k, x.shape),
        _native.maxpool2d_backward(gy, ab, k, x.shape),
    )
    np.testing.assert_allclose(
        numpy_backend.avgpool2d_forward(x, k),
        _native.avgpool2d_forward(x, k),
        **tol(dtype),
    )
    np.testing.assert_allclose(
        numpy_backend.avgpool2d_backward(gy, k, x.shape),
        _native.avgpool2d_backward(gy, k, x.shape),
        **tol(dtype),
    )


def test_maxpool_tie_rule_agrees(rng):
    x = np.zeros((1, 4, 4), dtype=np.float32)  # every window all-ties
    _, aa = numpy_backend.maxpool2d_forward(x, 2)
    _, ab = _native.maxpool2d_forward(x, 2)
    np.testing.assert_array_equal(aa, ab)
    assert aa.max() == 0  # first element wins


def test_maxpool_forward_only_skips_arg(rng):
    x = rng.random((2, 4, 4)).astype(np.float32)
    _, arg_np = numpy_backend.maxpool2d_forward(x, 2, False)
    _, arg_nat = _native.maxpool2d_forward(x, 2, False)
    assert arg_np is None and arg_nat is None


@pytest.mark.parametrize("dtype", DTYPES)
def test_bilinear_agreement(rng, dtype):
    src = rng.random((3, 9, 9)).astype(dtype)
    px = rng.uniform(-2.0, 10.0, (7, 7))
    py = rng.uniform(-2.0, 10.0, (7, 7))
    fa = numpy_backend.bilinear_forward(src, px, py)
    fb = _native.bilinear_forward(src, px, py)
    np.testing.assert_allclose(fa, fb, **tol(dtype))
    gy = rng.random(fa.shape).astype(dtype)
    ga = numpy_backend.bilinear_backward(gy, src, px, py, True, True)
    gb = _native.bilinear_backward(gy, src, px, py, True, True)
    for u, v in zip(ga, gb):
        np.testing.assert_allclose(u, v, **tol(dtype))


def test_bilinear_exact_pixel_centres_bit_exact(rng):
    src = rng.random((2, 6, 6)).astype(np.float32)
    py, px = np.mgrid[0:6, 0:6].astype(np.float64)
    for backend in (numpy_backend, _native):
        out = backend.bilinear_forward(src, px, py)
        np.testing.assert_array_equal(out, src)


def test_backend_switching(rng):
    from cropenhance import kernels

    original = kernels.backend_name()
    try:
        for name in ("numpy", "native", "auto"):
            kernels.set_backend(name)
            assert kernels.backend_name() == name
            x = rng.random((1, 4, 4)).astype(np.float32)
            y, _ = kernels.maxpool2d_forward(x, 2)
            assert y.shape == (1, 2, 2)
        with pytest.raises(ValueError):
            kernels.set_backend("bogus")
    finally:
        kernels.set_backend(original)
