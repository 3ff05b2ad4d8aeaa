"""End-to-end training: Adam over all trainable parameters, seeded batch
sampling, loss-history bookkeeping, and binary checkpoints.

Checkpoint file layout (little-endian):

    magic "DCEC" | u32 version=1 | u32 tensor count
    per tensor: u16 name length | name (utf-8) | u8 rank | u32 per dim
                | raw float32 data
    u64 step counter | u32 blob length | blob (utf-8 JSON with the RNG
    state and a config snapshot)

A checkpoint saved, loaded, and saved again is byte-identical.
"""

import csv
import json
import logging
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import imageio
from .autodiff import Tape, backward
from .imageio import to_tensor
from . import kernels
from .model import CropEnhanceModel, ModelConfig, total_loss
from .synthgen import read_manifest

logger = logging.getLogger(__name__)

MAGIC = b"DCEC"
VERSION = 1
CHECKPOINT_NAME = "checkpoint.dcec"
HISTORY_NAME = "history.csv"
HISTORY_FIELDS = ("step", "loss_total", "loss_cropper", "loss_enhancer")


class CheckpointError(RuntimeError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class NanLossError(RuntimeError):
    def __init__(self, step, term):
        super().__init__(f"non-finite loss at step {step} in the {term} term")
        self.step = step
        self.term = term


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    learning_rate: float = 1e-4
    batch_size: int = 8
    max_steps: int = 100
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 10.0
    eval_every: int = 0  # 0 disables periodic loss logging
    checkpoint_every: int = 0  # 0 keeps only the final checkpoint
    feature_import_path: str | None = None

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig.from_dict(self.model)
        for name in ("learning_rate", "batch_size", "adam_beta1", "adam_beta2",
                     "adam_eps", "clip_norm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")

    def to_dict(self):
        d = {k: v for k, v in self.__dict__.items() if k != "model"}
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class Checkpoint:
    tensors: dict  # name -> float32 array, insertion-ordered
    step: int
    rng_state: dict | None
    config: dict | None


def adam_step(params, grads, m, v, lr, betas=(0.9, 0.999), eps=1e-8, t=1):
    """One bias-corrected Adam update, in place on the param arrays."""
    b1, b2 = betas
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, mi, vi in zip(params, grads, m, v):
        if p.shape != g.shape:
            raise ValueError(f"param/grad shape mismatch: {p.shape} vs {g.shape}")
        mi *= b1
        mi += (1.0 - b1) * g
        vi *= b2
        vi += (1.0 - b2) * (g * g)
        p -= (lr / c1) * mi / (np.sqrt(vi / c2) + eps)
    return params, m, v


def clip_gradients(grads, max_norm):
    total = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
    if total > max_norm and total > 0:
        factor = np.float32(max_norm / total)
        for g in grads:
            g *= factor
    return total


# ---------------------------------------------------------------------------
# checkpoint serialization


def save_checkpoint(path, ckpt):
    blob = json.dumps(
        {"rng_state": ckpt.rng_state, "config": ckpt.config}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(ckpt.tensors)))
        for name, arr in ckpt.tensors.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            name_b = name.encode("utf-8")
            if len(name_b) > 0xFFFF:
                raise CheckpointError(f"tensor name too long: {name[:40]}...")
            if data.ndim > 0xFF:
                raise CheckpointError(f"tensor rank {data.ndim} exceeds format limit")
            if any(d > 0xFFFFFFFF for d in data.shape):
                raise CheckpointError(f"tensor dim overflow in {name}: {data.shape}")
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())
        fh.write(struct.pack("<Q", ckpt.step))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
    return Path(path)


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedCheckpointError(
            f"checkpoint truncated while reading {what} "
            f"(wanted {n} bytes, got {len(buf)})"
        )
    return buf


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != MAGIC:
            raise CheckpointError(
                f"bad checkpoint magic {magic!r}, expected {MAGIC!r}"
            )
        version, count = struct.unpack("<II", _read_exact(fh, 8, "header"))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        tensors = {}
        for i in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, f"tensor {i} name length"))
            name = _read_exact(fh, name_len, f"tensor {i} name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, f"{name} rank"))
            dims = struct.unpack(
                f"<{rank}I", _read_exact(fh, 4 * rank, f"{name} dims")
            )
            n_elem = int(np.prod(dims, dtype=np.int64)) if rank else 1
            raw = _read_exact(fh, 4 * n_elem, f"{name} data")
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
        (step,) = struct.unpack("<Q", _read_exact(fh, 8, "step counter"))
        (blob_len,) = struct.unpack("<I", _read_exact(fh, 4, "blob length"))
        blob = json.loads(_read_exact(fh, blob_len, "state blob").decode("utf-8"))
    return Checkpoint(
        tensors=tensors,
        step=step,
        rng_state=blob.get("rng_state"),
        config=blob.get("config"),
    )


def model_from_checkpoint(ckpt):
    if not ckpt.config or "model" not in ckpt.config:
        raise CheckpointError("checkpoint carries no model config snapshot")
    model = CropEnhanceModel(ModelConfig.from_dict(ckpt.config["model"]))
    params = {n: a for n, a in ckpt.tensors.items() if not n.startswith("adam.")}
    model.load_state(params)
    return model


# ---------------------------------------------------------------------------
# training


@lru_cache(maxsize=256)
def _load_versioned(path_str, mtime_ns, size):
    return imageio.load_image(path_str)


def _cached_image(path_str):
    st = Path(path_str).stat()
    return _load_versioned(path_str, st.st_mtime_ns, st.st_size)


def _build_checkpoint(model, moments, step, rng, config):
    tensors = {}
    for name, p in model.named_parameters():
        tensors[name] = p.data
    for name, (m, v) in moments.items():
        tensors[f"adam.m.{name}"] = m
        tensors[f"adam.v.{name}"] = v
    return Checkpoint(
        tensors=tensors,
        step=step,
        rng_state=rng.bit_generator.state,
        config=config.to_dict(),
    )


def train_loop(config, manifest_path, out_dir):
    """Optimize the model on a manifest; returns (Checkpoint, history).

    Writes checkpoint.dcec and history.csv (one row per step:
    step,loss_total,loss_cropper,loss_enhancer) into out_dir. Every
    random choice derives from config.seed, so reruns are bit-identical.
    """
    manifest_path = Path(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = read_manifest(manifest_path)
    root = manifest_path.parent

    model = CropEnhanceModel(config.model)
    if config.feature_import_path:
        donor = load_checkpoint(config.feature_import_path)
        model.import_feature_weights(donor.tensors)
        logger.info("imported feature weights from %s", config.feature_import_path)

    trainable = model.trainable_parameters()
    moments = {
        name: (np.zeros_like(p.data), np.zeros_like(p.data)) for name, p in trainable
    }
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((config.seed, 1))))
    queue = []
    history = []
    upscale = config.model.upscale
    use_enhancer = config.model.use_enhancer

    # While the feature extractor is frozen, photo features and target
    # features are constants per sample; computing them once is a large
    # share of the step cost.
    frozen = config.model.freeze_features
    feat_cache = {}

    def cached_features(rec):
        if not frozen:
            return None, None, None
        entry = feat_cache.get(rec.id)
        if entry is None:
            from .model import extract_features

            photo_f = extract_features(
                model.features, _cached_image(str(root / rec.photo_path))
            )
            gt_f = extract_features(
                model.features, _cached_image(str(root / rec.gt_path))
            )
            hr_f = None
            if use_enhancer:
                hr = _cached_image(str(root / rec.gt_hr_path))
                pooled = kernels.avgpool2d_forward(hr, upscale) if upscale > 1 else hr
                hr_f = extract_features(model.features, pooled)
            entry = (photo_f, gt_f, hr_f)
            feat_cache[rec.id] = entry
        return entry

    for step in range(config.max_steps):
        while len(queue) < config.batch_size:
            queue.extend(int(i) for i in rng.permutation(len(records)))
        batch = [queue.pop(0) for _ in range(config.batch_size)]

        with Tape() as tape:
            batch_total = None
            lc_sum = 0.0
            le_sum = 0.0
            for idx in batch:
                rec = records[idx]
                photo = to_tensor(_cached_image(str(root / rec.photo_path)))
                gt = to_tensor(_cached_image(str(root / rec.gt_path)))
                photo_f, gt_f, hr_f = cached_features(rec)
                stages, enhanced = model.forward(photo, photo_features=photo_f)
                gt_hr = (
                    to_tensor(_cached_image(str(root / rec.gt_hr_path)))
                    if use_enhancer
                    else None
                )
                total, lc, le = total_loss(
                    stages, enhanced, gt, gt_hr, model.features, upscale,
                    deep_supervision=config.model.deep_supervision,
                    gt_features=gt_f, gt_hr_features=hr_f,
                )
                lc_sum += float(lc.data)
                le_sum += float(le.data) if le is not None else 0.0
                batch_total = total if batch_total is None else batch_total + total
            batch_loss = batch_total * (1.0 / config.batch_size)
            loss_val = float(batch_loss.data)
            lc_val = lc_sum / config.batch_size
            le_val = le_sum / config.batch_size
            if not np.isfinite(loss_val):
                term = "cropper" if not np.isfinite(lc_val) else "enhancer"
                raise NanLossError(step, term)
            backward(batch_loss, tape)

        grads = []
        for _, p in trainable:
            grads.append(p.grad if p.grad is not None else np.zeros_like(p.data))
        clip_gradients(grads, config.clip_norm)
        adam_step(
            [p.data for _, p in trainable],
            grads,
            [moments[n][0] for n, _ in trainable],
            [moments[n][1] for n, _ in trainable],
            config.learning_rate,
            betas=(config.adam_beta1, config.adam_beta2),
            eps=config.adam_eps,
            t=step + 1,
        )
        for _, p in trainable:
            p.zero_grad()

        history.append((step, loss_val, lc_val, le_val))
        if config.eval_every and (step + 1) % config.eval_every == 0:
            window = history[-config.eval_every:]
            logger.info(
                "step %d: mean loss %.5f over last %d steps",
                step, float(np.mean([h[1] for h in window])), len(window),
            )
        if config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            ckpt = _build_checkpoint(model, moments, step + 1, rng, config)
            save_checkpoint(out_dir / f"checkpoint_step{step + 1}.dcec", ckpt)

    ckpt = _build_checkpoint(model, moments, config.max_steps, rng, config)
    ckpt_path = save_checkpoint(out_dir / CHECKPOINT_NAME, ckpt)
    history_path = write_history(out_dir / HISTORY_NAME, history)
    logger.info("saved %s after %d steps", ckpt_path, config.max_steps)
    return ckpt, history


def write_history(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_FIELDS)
        for step, total, lc, le in history:
            writer.writerow([step, repr(total), repr(lc), repr(le)])
    return Path(path)
