"""Finite-difference gradient verification.

Used by the selftest command and the test suite. The contract: for a
pure scalar-valued function of Tensors, the tape's analytic gradient at
randomly probed coordinates matches central differences in float64 to a
relative tolerance, provided the probes keep clear of non-smooth loci
(ReLU kinks, pooling ties, interpolation cell edges). Callers are
responsible for constructing inputs that stay clear of those loci;
helpers below make that easy.
"""

import numpy as np

from .autodiff import Tape, Tensor, backward

DEFAULT_EPS = 1e-5


def off_kink_uniform(rng, shape, low=0.1, high=1.0):
    """Values bounded away from zero with random signs; safe for ReLU."""
    mag = rng.uniform(low, high, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return mag * sign


def probe_gradient(func, arrays, wrt, n_probes=100, eps=DEFAULT_EPS, seed=0):
    """Compare analytic and finite-difference gradients.

    func takes len(arrays) Tensors and returns a scalar Tensor; arrays
    are float64 numpy arrays. Returns the max relative error over
    n_probes random coordinates of arrays[wrt], where the error is
    |analytic - fd| / max(1, |fd|).
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]

    def evaluate(values):
        tensors = [Tensor(v.copy(), requires_grad=(i == wrt)) for i, v in enumerate(values)]
        with Tape() as tape:
            loss = func(*tensors)
            backward(loss, tape)
        return float(loss.data), tensors[wrt].grad

    _, analytic = evaluate(arrays)
    if analytic is None:
        raise AssertionError("no gradient reached the probed tensor")

    rng = np.random.Generator(np.random.PCG64(seed))
    flat_size = arrays[wrt].size
    n_probes = min(n_probes, flat_size)
    coords = rng.choice(flat_size, size=n_probes, replace=False)

    worst = 0.0
    for c in coords:
        idx = np.unravel_index(c, arrays[wrt].shape)
        plus = [a.copy() for a in arrays]
        minus = [a.copy() for a in arrays]
        plus[wrt][idx] += eps
        minus[wrt][idx] -= eps
        fp = _eval_value(func, plus)
        fm = _eval_value(func, minus)
        fd = (fp - fm) / (2 * eps)
        err = abs(analytic[idx] - fd) / max(1.0, abs(fd))
        worst = max(worst, err)
    return worst


def _eval_value(func, values):
    tensors = [Tensor(v) for v in values]
    return float(func(*tensors).data)


def sampling_safe_affine(rng, src_hw, out_hw, margin=2e-3):
    """Draw a mild affine whose sample points sit strictly inside the
    source and at least `margin` pixels from every cell boundary, so
    finite differences never straddle an interpolation kink or the
    pixel-snap zone."""
    from .warp import AffineParams, _to_pixels, affine_grid

    h, w = src_hw
    for _ in range(1000):
        theta = np.array(
            [
                rng.uniform(0.55, 0.85),
                rng.uniform(-0.08, 0.08),
                rng.uniform(-0.1, 0.1),
                rng.uniform(-0.08, 0.08),
                rng.uniform(0.55, 0.85),
                rng.uniform(-0.1, 0.1),
            ]
        )
        grid = affine_grid(Tensor(theta), *out_hw)
        px, py = _to_pixels(grid.coords.data, h, w)
        frac_ok = (
            np.abs(px - np.rint(px)).min() >= margin
            and np.abs(py - np.rint(py)).min() >= margin
        )
        inside = (
            px.min() >= margin
            and px.max() <= w - 1 - margin
            and py.min() >= margin
            and py.max() <= h - 1 - margin
        )
        if frac_ok and inside:
            return AffineParams(theta)
    raise RuntimeError("could not find a sampling-safe affine")
