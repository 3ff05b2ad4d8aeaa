"""PNG image I/O and the in-memory image convention.

Images are float32 numpy arrays of shape (3, H, W) with values in
[0, 1], channel-major. Files are 8-bit RGB PNG; loading divides by 255,
saving rounds back. Validation helpers enforce the range/channel
invariants at module boundaries.
"""

import numpy as np
from PIL import Image


class ImageFormatError(ValueError):
    pass


def validate_image(img, what="image"):
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ImageFormatError(f"{what}: expected (3,H,W), got {img.shape}")
    if not np.isfinite(img).all():
        raise ImageFormatError(f"{what}: contains NaN or Inf")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ImageFormatError(
            f"{what}: values outside [0,1] (min {img.min():.4g}, max {img.max():.4g})"
        )
    return img


def load_image(path):
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        arr = np.asarray(rgb, dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_image(path, img, clamp=False):
    img = np.asarray(img, dtype=np.float32)
    if clamp:
        img = np.clip(img, 0.0, 1.0)
    validate_image(img, what=str(path))
    u8 = np.round(img * 255.0).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(u8, mode="RGB").save(path, format="PNG")


def to_tensor(img, requires_grad=False):
    from .autodiff import Tensor

    return Tensor(np.asarray(img, dtype=np.float32), requires_grad=requires_grad)
