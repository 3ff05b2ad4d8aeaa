"""Synthetic dataset generation.

Each sample embeds a foreground image into a background photo through a
bounded random projective transform, recording the exact transform as
ground truth. The emitted files per sample are the composited photo, the
foreground at base resolution (the cropper's target) and at 2x (the
enhancer's target), plus one manifest line.

Everything is keyed off a single 64-bit seed: per-sample seeds are split
from it, so regeneration with the same inputs is byte-identical and
samples can be produced in parallel.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imageio
from .util import ordered_parallel_map
from .warp import DegenerateTransformError, Homography, resize_bilinear, warp_homography

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")

# Unit-square corners, (x, y), counter-clockwise from bottom-left.
_CORNERS = np.array(
    [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]], dtype=np.float64
)

MAX_PLACEMENT_ATTEMPTS = 100


class BoundsInfeasibleError(RuntimeError):
    """No valid placement found within the attempt budget."""


class GenerationError(RuntimeError):
    pass


@dataclass
class TransformBounds:
    """Limits for the random embedding transform.

    scale is the foreground's size as a fraction of the photo;
    perspective_jitter displaces each corner by at most that fraction of
    the image dimension, and translation is drawn from whatever margin
    keeps all four corners inside the frame.
    """

    scale_min: float = 0.5
    scale_max: float = 0.8
    rot_max_deg: float = 25.0
    perspective_jitter: float = 0.05

    def __post_init__(self):
        if not (0.0 < self.scale_min <= self.scale_max <= 1.0):
            raise ValueError(
                f"need 0 < scale_min <= scale_max <= 1, got "
                f"[{self.scale_min}, {self.scale_max}]"
            )
        if not (0.0 <= self.perspective_jitter <= 0.2):
            raise ValueError(
                f"perspective_jitter must be in [0, 0.2], got {self.perspective_jitter}"
            )
        if self.rot_max_deg < 0:
            raise ValueError("rot_max_deg must be non-negative")


@dataclass
class SampleRecord:
    """One synthetic example; `homography` is the photo-to-foreground
    matrix (row-major, normalized coordinates) used for compositing, so
    its inverse maps the foreground into the photo."""

    id: str
    photo_path: str
    gt_path: str
    gt_hr_path: str
    homography: list
    fg_scale: float
    seed: int

    def to_json(self):
        return json.dumps(
            {
                "id": self.id,
                "photo_path": self.photo_path,
                "gt_path": self.gt_path,
                "gt_hr_path": self.gt_hr_path,
                "homography": self.homography,
                "fg_scale": self.fg_scale,
                "seed": self.seed,
            }
        )

    @classmethod
    def from_json(cls, line):
        return cls(**json.loads(line))


def _placed_corners(rng, bounds):
    s = rng.uniform(bounds.scale_min, bounds.scale_max)
    angle = np.deg2rad(rng.uniform(-bounds.rot_max_deg, bounds.rot_max_deg))
    c, sn = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -sn], [sn, c]])
    placed = (_CORNERS * s) @ rot.T
    j = 2.0 * bounds.perspective_jitter
    placed = placed + rng.uniform(-j, j, size=(4, 2))
    return placed, s


def sample_transform_scaled(seed, bounds):
    """Draw one bounded random projective embedding; returns the
    photo-to-foreground Homography and the drawn scale factor.

    Draw order is fixed (scale, rotation, corner jitter, translation) so
    a seed fully determines the result. Placements whose corners leave
    the frame are rejected and redrawn, up to MAX_PLACEMENT_ATTEMPTS.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        placed, s = _placed_corners(rng, bounds)
        lo = -1.0 - placed.min(axis=0)
        hi = 1.0 - placed.max(axis=0)
        if lo[0] > hi[0] + 1e-12 or lo[1] > hi[1] + 1e-12:
            continue
        shift = np.array(
            [rng.uniform(lo[0], max(lo[0], hi[0])), rng.uniform(lo[1], max(lo[1], hi[1]))]
        )
        placed = placed + shift
        if np.abs(placed).max() > 1.0 + 1e-12:
            continue
        try:
            fwd = fit_homography(_CORNERS, placed)
            return fwd.inverse(), float(s)
        except (DegenerateTransformError, np.linalg.LinAlgError):
            continue
    raise BoundsInfeasibleError(
        f"no valid placement in {MAX_PLACEMENT_ATTEMPTS} attempts for bounds {bounds}"
    )


def sample_transform(seed, bounds):
    return sample_transform_scaled(seed, bounds)[0]


def fit_homography(src_pts, dst_pts):
    """Exact homography through 4 point correspondences (8x8 linear solve
    with the bottom-right entry pinned to 1)."""
    src = np.asarray(src_pts, dtype=np.float64).reshape(4, 2)
    dst = np.asarray(dst_pts, dtype=np.float64).reshape(4, 2)
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        b[2 * i] = u
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i + 1] = v
    h = np.linalg.solve(a, b)
    return Homography(np.append(h, 1.0).reshape(3, 3))


def composite(fg, bg, hom):
    """Embed fg into bg: warp fg by the photo-to-foreground homography
    and alpha-blend over bg using the warp's coverage mask."""
    fg = np.asarray(fg)
    bg = np.asarray(bg)
    if fg.shape != bg.shape:
        raise ValueError(f"foreground {fg.shape} and background {bg.shape} differ")
    warped, mask = warp_homography(fg, hom, fg.shape[1], fg.shape[2])
    return mask * warped + (1.0 - mask) * bg


def list_images(directory):
    directory = Path(directory)
    if not directory.is_dir():
        raise GenerationError(f"not a directory: {directory}")
    files = sorted(
        p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not files:
        raise GenerationError(f"no images (png/jpg) found in {directory}")
    return files


class _Pool:
    """Image file pool with deterministic draws and bad-file eviction."""

    def __init__(self, files):
        self.files = list(files)
        self.good = {}

    def draw(self, rng):
        while self.files:
            path = self.files[int(rng.integers(len(self.files)))]
            if self.good.get(path, None) is False:
                self.files.remove(path)
                continue
            if path not in self.good:
                try:
                    imageio.load_image(path)
                    self.good[path] = True
                except Exception as exc:
                    logger.warning("skipping unreadable image %s (%s)", path, exc)
                    self.good[path] = False
                    self.files.remove(path)
                    continue
            return path
        raise GenerationError("image pool exhausted (all files unreadable)")


def sample_seed(run_seed, index):
    """64-bit per-sample seed split from the run seed."""
    state = np.random.SeedSequence((run_seed, index)).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def generate_dataset(n, seed, bounds, fg_dir, bg_dir, out_dir, size=224, hr_factor=2,
                     threads=None):
    """Generate n samples into out_dir; returns the manifest path.

    Layout: {id}_photo.png and {id}_gt.png at size**2, {id}_gt2x.png at
    (size*hr_factor)**2, and manifest.jsonl with one record per line
    (paths relative to out_dir). Fully deterministic for fixed inputs.
    """
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fg_pool = _Pool(list_images(fg_dir))
    bg_pool = _Pool(list_images(bg_dir))

    # Choices are resolved sequentially so bad-file eviction cannot race;
    # the heavy work (load, warp, encode) then runs per sample.
    plans = []
    for i in range(n):
        s_i = sample_seed(seed, i)
        pick_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((s_i, 0))))
        fg_path = fg_pool.draw(pick_rng)
        bg_path = bg_pool.draw(pick_rng)
        plans.append((i, s_i, fg_path, bg_path))

    id_width = max(6, len(str(n - 1)))

    def build(plan):
        i, s_i, fg_path, bg_path = plan
        sid = f"{i:0{id_width}d}"
        hom, fg_scale = sample_transform_scaled(s_i, bounds)
        fg_src = imageio.load_image(fg_path)
        bg = resize_bilinear(imageio.load_image(bg_path), size, size)
        fg_base = resize_bilinear(fg_src, size, size)
        gt_hr = resize_bilinear(fg_src, size * hr_factor, size * hr_factor)
        photo = np.clip(composite(fg_base, bg, hom), 0.0, 1.0)
        names = (f"{sid}_photo.png", f"{sid}_gt.png", f"{sid}_gt2x.png")
        for name, img in zip(names, (photo, fg_base, gt_hr)):
            imageio.save_image(out_dir / name, img, clamp=True)
        return SampleRecord(
            id=sid,
            photo_path=names[0],
            gt_path=names[1],
            gt_hr_path=names[2],
            homography=[float(v) for v in hom.flat()],
            fg_scale=fg_scale,
            seed=s_i,
        )

    records = ordered_parallel_map(build, plans, threads=threads)
    if len(records) < n:
        raise GenerationError(f"produced {len(records)} of {n} requested samples")
    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(manifest_path, records)
    return manifest_path


def write_manifest(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_manifest(path):
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(SampleRecord.from_json(line))
    if not records:
        raise GenerationError(f"manifest {path} is empty")
    return records


def manifest_image(manifest_path, rel_path):
    return imageio.load_image(Path(manifest_path).parent / rel_path)


def write_texture_images(out_dir, count, size=224, seed=0, prefix="tex"):
    """Write seeded procedural texture PNGs; stand-ins for real photos.

    Each texture sums a few octaves of bilinearly upsampled noise and a
    handful of soft discs, giving smooth color fields with sharp-ish
    structure, which is plenty for alignment and sharpness experiments.
    Returns the list of written paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, i))))
        img = np.zeros((3, size, size), dtype=np.float64)
        weight = 1.0
        for cells in (4, 8, 16, 32):
            noise = rng.random((3, cells, cells))
            img += weight * resize_bilinear(noise, size, size)
            weight *= 0.55
        yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
        for _ in range(int(rng.integers(3, 7))):
            cx, cy = rng.uniform(0.15 * size, 0.85 * size, size=2)
            radius = rng.uniform(0.05 * size, 0.2 * size)
            color = rng.random(3)
            dist = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
            alpha = np.clip(radius - dist, 0.0, 1.5) / 1.5
            img = img * (1 - alpha) + color[:, None, None] * alpha * img.max()
        img -= img.min()
        img /= max(img.max(), 1e-9)
        img = 0.05 + 0.9 * img
        path = out_dir / f"{prefix}_{i:04d}.png"
        imageio.save_image(path, img.astype(np.float32))
        paths.append(path)
    return paths
