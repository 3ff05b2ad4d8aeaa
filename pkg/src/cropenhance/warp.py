"""Differentiable affine warping and generator-side homography warping.

Coordinate conventions (used consistently everywhere):

* Normalized coordinates are align-corners: -1 is the center of the
  first pixel, +1 the center of the last.
* Transforms map OUTPUT coordinates to SOURCE coordinates (inverse
  warping), so the identity parameters reproduce the input exactly.
* Sampling is bilinear with zero padding outside the source extent.

Pixel positions within ``PIXEL_SNAP`` of an exact pixel center are
snapped to it before interpolation. This absorbs the float rounding in
the normalize/denormalize round trip so that identity grids and
integer-pixel translations reproduce pixels bit-exactly (guaranteed for
images up to ~800 px a side).
"""

import numpy as np

from . import kernels
from .autodiff import Tensor, record
from .autodiff.tensor import ShapeError

PIXEL_SNAP = 1e-4

IDENTITY_AFFINE = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)


class DegenerateTransformError(ValueError):
    """Raised when a projective warp's homogeneous factor vanishes."""


class AffineParams:
    """Row-major 2x3 affine matrix [a11 a12 a13; a21 a22 a23] on
    normalized coordinates, flattened to 6 scalars."""

    __slots__ = ("values",)

    def __init__(self, values):
        arr = np.asarray(values, dtype=np.float64).reshape(-1)
        if arr.shape != (6,):
            raise ShapeError(f"affine parameters must be 6 scalars, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("affine parameters must be finite")
        self.values = arr

    @classmethod
    def identity(cls):
        return cls(IDENTITY_AFFINE)

    @classmethod
    def scaling(cls, s):
        return cls((s, 0.0, 0.0, 0.0, s, 0.0))

    def as_matrix(self):
        m = np.eye(3, dtype=np.float64)
        m[:2, :] = self.values.reshape(2, 3)
        return m

    def __eq__(self, other):
        return isinstance(other, AffineParams) and np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"AffineParams({self.values.tolist()})"


class Homography:
    """3x3 projective matrix on homogeneous normalized coordinates,
    normalized so the bottom-right entry is 1."""

    __slots__ = ("matrix",)

    def __init__(self, matrix):
        m = np.asarray(matrix, dtype=np.float64).reshape(3, 3)
        if not np.isfinite(m).all():
            raise ValueError("homography entries must be finite")
        if abs(m[2, 2]) < 1e-12:
            raise DegenerateTransformError("homography has vanishing scale entry")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= 1e-9:
            raise DegenerateTransformError("homography is not invertible")
        self.matrix = m

    @classmethod
    def identity(cls):
        return cls(np.eye(3))

    @classmethod
    def from_affine(cls, params):
        return cls(params.as_matrix())

    def inverse(self):
        return Homography(np.linalg.inv(self.matrix))

    def apply(self, xy):
        """Map points (N,2) in normalized coordinates; perspective divide."""
        pts = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        hom = np.concatenate([pts, np.ones((len(pts), 1))], axis=1) @ self.matrix.T
        return hom[:, :2] / hom[:, 2:3]

    def flat(self):
        return self.matrix.reshape(9).copy()

    def __repr__(self):
        return f"Homography({self.matrix.tolist()})"


class SampleGrid:
    """Per-output-pixel normalized source coordinates, shape (2, H, W).

    coords[0] holds x, coords[1] holds y. The coordinate array is always
    float64 and may carry gradients back to the affine parameters that
    produced it.
    """

    __slots__ = ("coords",)

    def __init__(self, coords):
        if coords.shape[0] != 2 or len(coords.shape) != 3:
            raise ShapeError(f"sample grid must be (2,H,W), got {coords.shape}")
        self.coords = coords

    @property
    def height(self):
        return self.coords.shape[1]

    @property
    def width(self):
        return self.coords.shape[2]


def _base_grid(h_out, w_out):
    xt = np.linspace(-1.0, 1.0, w_out, dtype=np.float64)
    yt = np.linspace(-1.0, 1.0, h_out, dtype=np.float64)
    return np.meshgrid(xt, yt)


def affine_grid(theta, h_out, w_out):
    """Build a SampleGrid from 6 affine parameters (Tensor of shape (6,)).

    Differentiable with respect to theta.
    """
    if h_out < 2 or w_out < 2:
        raise ValueError(f"grid size must be at least 2x2, got {h_out}x{w_out}")
    if theta.shape != (6,):
        raise ShapeError(f"affine_grid: theta must have shape (6,), got {theta.shape}")
    xt, yt = _base_grid(h_out, w_out)
    a = theta.data.astype(np.float64)
    xs = a[0] * xt + a[1] * yt + a[2]
    ys = a[3] * xt + a[4] * yt + a[5]
    coords = Tensor(np.stack([xs, ys]), requires_grad=theta.requires_grad)

    def vjp(g):
        gx, gy = g[0], g[1]
        gtheta = np.array(
            [
                (gx * xt).sum(),
                (gx * yt).sum(),
                gx.sum(),
                (gy * xt).sum(),
                (gy * yt).sum(),
                gy.sum(),
            ],
            dtype=np.float64,
        )
        return (gtheta.astype(theta.dtype),)

    record("affine_grid", (theta,), coords, vjp)
    return SampleGrid(coords)


def _snap(p):
    r = np.rint(p)
    return np.where(np.abs(p - r) < PIXEL_SNAP, r, p)


def _to_pixels(grid_coords, h_src, w_src):
    xs, ys = grid_coords[0], grid_coords[1]
    px = _snap((xs + 1.0) * (0.5 * (w_src - 1)))
    py = _snap((ys + 1.0) * (0.5 * (h_src - 1)))
    return px, py


def grid_sample(src, grid):
    """Bilinearly sample src (Tensor C,H,W) at the grid's coordinates.

    Differentiable with respect to both the source values and the grid
    (hence the affine parameters behind it). Coordinates outside the
    normalized [-1,1] square fade to zero over one source pixel; the
    coordinate gradient at an exact pixel center is the one-sided
    derivative of the cell to its right/below.
    """
    if src.data.ndim != 3:
        raise ShapeError(f"grid_sample: source must be (C,H,W), got {src.shape}")
    coords = grid.coords
    _, h_src, w_src = src.shape
    px, py = _to_pixels(coords.data, h_src, w_src)
    data = kernels.bilinear_forward(src.data, px, py)
    needs = (src.requires_grad, coords.requires_grad)

    def vjp(g):
        gsrc, gpx, gpy = kernels.bilinear_backward(
            np.ascontiguousarray(g), src.data, px, py, needs[0], needs[1]
        )
        gcoords = None
        if needs[1]:
            gcoords = np.stack([gpx * (0.5 * (w_src - 1)), gpy * (0.5 * (h_src - 1))])
        return gsrc, gcoords

    out = Tensor(data, requires_grad=any(needs))
    record("grid_sample", (src, coords), out, vjp)
    return out


def warp_affine(src, theta, h_out, w_out):
    """affine_grid + grid_sample in one call."""
    return grid_sample(src, affine_grid(theta, h_out, w_out))


def compose_affine(outer, inner):
    """Parameters equivalent to warping with `outer` first, then
    resampling that result with `inner`."""
    m = outer.as_matrix() @ inner.as_matrix()
    return AffineParams(m[:2, :].reshape(6))


def warp_homography(src, hom, h_out, w_out):
    """Inverse-warp an image array (C,H,W) through a homography.

    Returns (warped, coverage) where coverage is 1.0 where the source
    coordinate falls inside the source extent, 0.0 outside, and the
    bilinear in-range mass on the one-pixel boundary band. Generator-side
    only: operates on plain arrays and records no gradients.
    """
    src = np.asarray(src)
    if src.ndim != 3:
        raise ShapeError(f"warp_homography: source must be (C,H,W), got {src.shape}")
    _, h_src, w_src = src.shape
    xt, yt = _base_grid(h_out, w_out)
    m = hom.matrix
    denom = m[2, 0] * xt + m[2, 1] * yt + m[2, 2]
    if np.abs(denom).min() < 1e-6:
        raise DegenerateTransformError(
            "projective warp passes through the plane at infinity inside the frame"
        )
    xs = (m[0, 0] * xt + m[0, 1] * yt + m[0, 2]) / denom
    ys = (m[1, 0] * xt + m[1, 1] * yt + m[1, 2]) / denom
    px = _snap((xs + 1.0) * (0.5 * (w_src - 1)))
    py = _snap((ys + 1.0) * (0.5 * (h_src - 1)))
    warped = kernels.bilinear_forward(src, px, py)
    ones = np.ones((1, h_src, w_src), dtype=src.dtype)
    coverage = kernels.bilinear_forward(ones, px, py)[0]
    return warped, coverage


def center_crop(src, h_out, w_out):
    """Extract the centered h_out x w_out window of a (C,H,W) Tensor."""
    _, h, w = src.shape
    if h_out > h or w_out > w:
        raise ShapeError(f"center_crop: {h_out}x{w_out} exceeds source {h}x{w}")
    top = (h - h_out) // 2
    left = (w - w_out) // 2
    data = np.ascontiguousarray(src.data[:, top : top + h_out, left : left + w_out])

    def vjp(g):
        gx = np.zeros_like(src.data)
        gx[:, top : top + h_out, left : left + w_out] = g
        return (gx,)

    out = Tensor(data, requires_grad=src.requires_grad)
    record("center_crop", (src,), out, vjp)
    return out


def resize_bilinear(img, h_out, w_out):
    """Plain bilinear resize of an array (C,H,W); align-corners, no grad."""
    img = np.asarray(img)
    _, h, w = img.shape
    if h_out == h and w_out == w:
        return img.copy()
    px = _snap(np.linspace(0.0, w - 1.0, w_out, dtype=np.float64))
    py = _snap(np.linspace(0.0, h - 1.0, h_out, dtype=np.float64))
    pxg, pyg = np.meshgrid(px, py)
    return kernels.bilinear_forward(img, pxg, pyg)
