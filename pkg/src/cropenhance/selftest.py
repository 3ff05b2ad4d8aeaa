"""Fast built-in sanity suite behind the `selftest` CLI command.

Runs a condensed version of the gradient and invariant checks (the full
versions live in the test suite) and prints one line per check. Designed
to finish in well under a minute.
"""

import os
import tempfile
import time

import numpy as np

from . import metrics, synthgen, train, warp
from .autodiff import Tape, Tensor, backward, ops
from .gradcheck import off_kink_uniform, probe_gradient, sampling_safe_affine
from .model import FeatureExtractor, feature_cosine_loss, feature_mse_loss

GRAD_TOL = 1e-5
PROBES = 10


def _rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


def check_conv2d_gradients():
    rng = _rng(1)
    x = off_kink_uniform(rng, (2, 6, 6))
    w = off_kink_uniform(rng, (3, 2, 2, 2))
    b = off_kink_uniform(rng, (3,))
    proj = rng.standard_normal((3, 5, 5))

    def f(xt, wt, bt):
        return ops.sum_all(ops.mul(ops.conv2d(xt, wt, bt), Tensor(proj)))

    errs = [probe_gradient(f, [x, w, b], wrt, n_probes=PROBES) for wrt in (0, 1, 2)]
    worst = max(errs)
    return worst <= GRAD_TOL, f"max rel err {worst:.2e}"


def check_linear_gradients():
    rng = _rng(2)
    x = off_kink_uniform(rng, (5,))
    w = off_kink_uniform(rng, (4, 5))
    b = off_kink_uniform(rng, (4,))
    proj = rng.standard_normal(4)

    def f(xt, wt, bt):
        return ops.sum_all(ops.mul(ops.linear(xt, wt, bt), Tensor(proj)))

    worst = max(probe_gradient(f, [x, w, b], wrt, n_probes=PROBES) for wrt in (0, 1, 2))
    return worst <= GRAD_TOL, f"max rel err {worst:.2e}"


def check_activation_pool_gradients():
    rng = _rng(3)
    x = off_kink_uniform(rng, (2, 6, 6))
    proj = rng.standard_normal((2, 6, 6))
    pproj = rng.standard_normal((2, 3, 3))

    def f_relu(xt):
        return ops.sum_all(ops.mul(ops.relu(xt), Tensor(proj)))

    def f_max(xt):
        return ops.sum_all(ops.mul(ops.maxpool2d(xt, 2), Tensor(pproj)))

    def f_avg(xt):
        return ops.sum_all(ops.mul(ops.avgpool2d(xt, 2), Tensor(pproj)))

    worst = max(
        probe_gradient(f_relu, [x], 0, n_probes=PROBES),
        probe_gradient(f_max, [x], 0, n_probes=PROBES),
        probe_gradient(f_avg, [x], 0, n_probes=PROBES),
    )
    return worst <= GRAD_TOL, f"max rel err {worst:.2e}"


def check_pixel_shuffle():
    rng = _rng(4)
    x = rng.random((8, 3, 5)).astype(np.float32)
    out = ops.pixel_unshuffle(ops.pixel_shuffle(Tensor(x), 2), 2)
    ok = np.array_equal(out.data, x)
    return ok, "roundtrip bit-exact" if ok else "roundtrip mismatch"


def check_grid_sample_gradients():
    rng = _rng(5)
    # Smooth image keeps finite differences on the bilinear surface honest.
    img = np.cumsum(np.cumsum(rng.random((2, 9, 9)), axis=1), axis=2) / 20.0
    theta = sampling_safe_affine(rng, (9, 9), (5, 5)).values
    proj = rng.standard_normal((2, 5, 5))

    def f(img_t, theta_t):
        return ops.sum_all(ops.mul(warp.warp_affine(img_t, theta_t, 5, 5), Tensor(proj)))

    worst = max(
        probe_gradient(f, [img, theta], 0, n_probes=PROBES),
        probe_gradient(f, [img, theta], 1, n_probes=6),
    )
    return worst <= 1e-4, f"max rel err {worst:.2e}"


def check_loss_gradients():
    rng = _rng(6)
    features = FeatureExtractor(blocks=((1, 4),) * 5, seed=7, dtype=np.float64)
    a = rng.random((3, 32, 32))
    b = rng.random((3, 32, 32))
    a_hr = rng.random((3, 64, 64))
    b_hr = rng.random((3, 64, 64))

    def f_cos(at):
        return feature_cosine_loss(at, Tensor(b), features)

    def f_mse(at):
        return feature_mse_loss(at, Tensor(b_hr), features, 2)

    worst = max(
        probe_gradient(f_cos, [a], 0, n_probes=PROBES),
        probe_gradient(f_mse, [a_hr], 0, n_probes=PROBES),
    )
    return worst <= 1e-4, f"max rel err {worst:.2e}"


def check_identity_resample():
    rng = _rng(7)
    img = Tensor(rng.random((3, 64, 64)).astype(np.float32))
    theta = Tensor(np.array(warp.IDENTITY_AFFINE, dtype=np.float32))
    out = warp.warp_affine(img, theta, 64, 64)
    ok = np.array_equal(out.data, img.data)
    return ok, "identity warp bit-exact" if ok else "identity warp differs"


def check_compose_affine():
    rng = _rng(8)
    a = warp.AffineParams(rng.uniform(-1, 1, 6))
    b = warp.AffineParams(rng.uniform(-1, 1, 6))
    composed = warp.compose_affine(a, b)
    oracle = (a.as_matrix() @ b.as_matrix())[:2, :].reshape(6)
    err = np.abs(composed.values - oracle).max()
    return err < 1e-12, f"max err {err:.2e}"


def check_homography_affine_agreement():
    rng = _rng(9)
    img = rng.random((3, 24, 24))
    vals = [0.7, 0.1, 0.05, -0.08, 0.75, -0.1]
    hom = warp.Homography.from_affine(warp.AffineParams(vals))
    via_h, _ = warp.warp_homography(img, hom, 24, 24)
    via_a = warp.warp_affine(Tensor(img), Tensor(np.array(vals)), 24, 24)
    err = np.abs(via_h - via_a.data).max()
    return err < 1e-6, f"max err {err:.2e}"


def check_metric_closed_forms():
    rng = _rng(10)
    a = rng.random((3, 16, 16)) * 0.8
    b = a + 0.1
    ok = (
        abs(metrics.psnr(a, b) - 20.0) < 1e-6
        and abs(metrics.ssim(a, a) - 1.0) < 1e-6
        and metrics.mse_metric(a, a) == 0.0
    )
    return ok, "psnr/ssim/mse closed forms"


def check_checkpoint_roundtrip():
    rng = _rng(11)
    ckpt = train.Checkpoint(
        tensors={"a.weight": rng.random((3, 4)).astype(np.float32)},
        step=5,
        rng_state={"bit_generator": "PCG64", "state": {"state": 1, "inc": 2}},
        config={"model": {"input_size": 64}},
    )
    with tempfile.TemporaryDirectory() as tmp:
        p1 = os.path.join(tmp, "a.dcec")
        p2 = os.path.join(tmp, "b.dcec")
        train.save_checkpoint(p1, ckpt)
        again = train.load_checkpoint(p1)
        train.save_checkpoint(p2, again)
        with open(p1, "rb") as f1, open(p2, "rb") as f2:
            identical = f1.read() == f2.read()
        try:
            with open(p1, "r+b") as fh:
                fh.write(b"XXXX")
            train.load_checkpoint(p1)
            magic_ok = False
        except train.CheckpointError:
            magic_ok = True
    return identical and magic_ok, "roundtrip + magic validation"


def check_generator_bounds():
    bounds = synthgen.TransformBounds()
    for seed in range(100):
        hom = synthgen.sample_transform(seed, bounds)
        corners = hom.inverse().apply(synthgen._CORNERS)
        if np.abs(corners).max() > 1.0 + 1e-9:
            return False, f"corner escaped frame at seed {seed}"
    h1 = synthgen.sample_transform(42, bounds)
    h2 = synthgen.sample_transform(42, bounds)
    ok = np.array_equal(h1.matrix, h2.matrix)
    return ok, "100 seeds inside frame, redraw deterministic"


CHECKS = [
    ("conv2d gradients", check_conv2d_gradients),
    ("linear gradients", check_linear_gradients),
    ("relu/pool gradients", check_activation_pool_gradients),
    ("pixel shuffle inverse", check_pixel_shuffle),
    ("grid sample gradients", check_grid_sample_gradients),
    ("loss gradients", check_loss_gradients),
    ("identity resample", check_identity_resample),
    ("affine composition", check_compose_affine),
    ("homography vs affine path", check_homography_affine_agreement),
    ("metric closed forms", check_metric_closed_forms),
    ("checkpoint roundtrip", check_checkpoint_roundtrip),
    ("generator bounds", check_generator_bounds),
]


def run_selftest(out=print):
    failures = 0
    t0 = time.time()
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashed check is a failed check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        status = "PASS" if ok else "FAIL"
        out(f"[{status}] {name:<28} {detail}")
        if not ok:
            failures += 1
    out(f"{len(CHECKS) - failures}/{len(CHECKS)} checks passed "
        f"in {time.time() - t0:.1f}s")
    return failures
