"""Image quality metrics (PSNR, SSIM, MSE) and dataset-level reports.

All three metrics operate on (3,H,W) float images in [0,1]. MSE is the
plain mean over pixels and channels; PSNR uses peak 1.0 with the MSE
floored at 1e-10 (capping identical images at 100 dB); SSIM is the
standard single-scale form with an 11x11 Gaussian window (sigma 1.5,
K1=0.01, K2=0.03, dynamic range 1.0) over valid windows, averaged per
channel and then across channels.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import imageio
from .inference import run_pipeline
from . import kernels
from .synthgen import read_manifest
from .util import ordered_parallel_map

MSE_FLOOR = 1e-10


class EvaluationError(RuntimeError):
    pass


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse_metric(a, b):
    """Mean squared error over all pixels and channels, in [0,1] scale."""
    a, b = _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b):
    """Peak signal-to-noise ratio in dB against peak value 1.0."""
    err = max(mse_metric(a, b), MSE_FLOOR)
    return float(10.0 * np.log10(1.0 / err))


def _gaussian_window(size, sigma):
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a, b, window_size=11, sigma=1.5, k1=0.01, k2=0.03, dynamic_range=1.0):
    """Structural similarity; mean over valid windows, then channels."""
    a, b = _check_pair(a, b)
    _, h, w = a.shape
    if h < window_size or w < window_size:
        raise ValueError(
            f"images must be at least {window_size}x{window_size} for SSIM, got {h}x{w}"
        )
    win = _gaussian_window(window_size, sigma)
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    per_channel = []
    for ch in range(a.shape[0]):
        wa = sliding_window_view(a[ch], (window_size, window_size))
        wb = sliding_window_view(b[ch], (window_size, window_size))
        mu1 = np.einsum("hwij,ij->hw", wa, win, optimize=True)
        mu2 = np.einsum("hwij,ij->hw", wb, win, optimize=True)
        e11 = np.einsum("hwij,hwij,ij->hw", wa, wa, win, optimize=True)
        e22 = np.einsum("hwij,hwij,ij->hw", wb, wb, win, optimize=True)
        e12 = np.einsum("hwij,hwij,ij->hw", wa, wb, win, optimize=True)
        s1 = e11 - mu1 * mu1
        s2 = e22 - mu2 * mu2
        cov = e12 - mu1 * mu2
        num = (2 * mu1 * mu2 + c1) * (2 * cov + c2)
        den = (mu1 * mu1 + mu2 * mu2 + c1) * (s1 + s2 + c2)
        per_channel.append(np.mean(num / den))
    return float(np.mean(per_channel))


@dataclass
class MetricReport:
    resolution: int
    samples: list  # per-sample dicts: {id, psnr_db, ssim, mse}
    means: dict

    def to_json(self):
        payload = {
            "resolution": self.resolution,
            "samples": self.samples,
            "means": self.means,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["resolution"], d["samples"], d["means"])

    def table(self):
        rows = [
            ("PSNR (dB)", self.means["psnr_db"], "{:.2f}"),
            ("SSIM", self.means["ssim"], "{:.4f}"),
            ("MSE", self.means["mse"], "{:.4f}"),
        ]
        lines = [f"n={len(self.samples)} samples @ {self.resolution}px"]
        for label, value, fmt in rows:
            lines.append(f"{label:<10} {fmt.format(value)}")
        return "\n".join(lines)


def _aggregate(samples, resolution):
    means = {
        key: float(np.mean([s[key] for s in samples]))
        for key in ("psnr_db", "ssim", "mse")
    }
    return MetricReport(resolution=resolution, samples=samples, means=means)


def evaluate_pairs(pairs, ids=None, resolution=None):
    """Score a list of (prediction, reference) image arrays."""
    samples = []
    for i, (a, b) in enumerate(pairs):
        sid = ids[i] if ids is not None else f"{i:06d}"
        samples.append(
            {"id": sid, "psnr_db": psnr(a, b), "ssim": ssim(a, b), "mse": mse_metric(a, b)}
        )
    if resolution is None:
        resolution = int(np.asarray(pairs[0][0]).shape[-1])
    return _aggregate(samples, resolution)


def evaluate_dataset(manifest_path, model, resolution, sr_roundtrip=False, threads=None):
    """Run inference over a manifest and score it at the given resolution.

    resolution must equal either the ground-truth size (base) or the 2x
    ground-truth size. At base resolution an enhancer output is average-
    pooled down first; for cropper-only models, sr_roundtrip=True scores
    the bilinear-2x-then-downsample image instead of the raw crop, which
    is the comparable baseline for an enhancer.
    """
    manifest_path = Path(manifest_path)
    records = read_manifest(manifest_path)
    root = manifest_path.parent

    missing = [
        rec.id
        for rec in records
        if not (root / rec.photo_path).exists()
        or not (root / rec.gt_path).exists()
        or not (root / rec.gt_hr_path).exists()
    ]
    if missing:
        raise EvaluationError(f"missing image files for ids: {missing}")

    upscale = model.config.upscale

    def score(rec):
        photo = imageio.load_image(root / rec.photo_path)
        gt = imageio.load_image(root / rec.gt_path)
        gt_hr = imageio.load_image(root / rec.gt_hr_path)
        base = gt.shape[-1]
        hr = gt_hr.shape[-1]
        if resolution not in (base, hr):
            raise EvaluationError(
                f"resolution {resolution} matches neither ground truth ({base}) "
                f"nor 2x ground truth ({hr})"
            )
        result = run_pipeline(model, photo)
        if resolution == hr:
            pred, ref = result.enhanced, gt_hr
        elif model.enhancer is not None or sr_roundtrip:
            pred, ref = kernels.avgpool2d_forward(result.enhanced, upscale), gt
        else:
            pred, ref = result.cropped, gt
        pred = np.clip(pred, 0.0, 1.0)
        return {
            "id": rec.id,
            "psnr_db": psnr(pred, ref),
            "ssim": ssim(pred, ref),
            "mse": mse_metric(pred, ref),
        }

    samples = ordered_parallel_map(score, records, threads=threads)
    return _aggregate(samples, resolution)
