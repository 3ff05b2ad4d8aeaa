"""Tape-free forward passes for evaluation and the infer command."""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .warp import resize_bilinear


@dataclass
class PipelineResult:
    thetas: list  # one (6,) float array per cropper stage
    cropped: np.ndarray
    enhanced: np.ndarray
    used_enhancer: bool


def run_pipeline(model, photo):
    """Run the full pipeline on one (3,H,W) image array, without autodiff.

    `enhanced` is always at upscale resolution: the enhancer's output
    clamped to [0,1] when the model has one, otherwise a plain bilinear
    upsample of the crop so downstream consumers see a uniform shape.
    """
    stages, enhanced = model.forward(Tensor(np.asarray(photo, dtype=np.float32)))
    thetas = [theta.data.astype(np.float64).copy() for theta, _ in stages]
    cropped = stages[-1][1].data.copy()
    if enhanced is not None:
        out = np.clip(enhanced.data, 0.0, 1.0)
        used = True
    else:
        r = model.config.upscale
        out = resize_bilinear(
            np.clip(cropped, 0.0, 1.0), cropped.shape[1] * r, cropped.shape[2] * r
        )
        used = False
    return PipelineResult(
        thetas=thetas, cropped=cropped, enhanced=out, used_enhancer=used
    )
