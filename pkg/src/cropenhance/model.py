"""The trainable pipeline: feature extractor, affine cropper heads, and
the super-resolving enhancer, plus the feature-space losses that tie
them together.

The pipeline splits into a cropper C and an enhancer E. C looks at the
photo through a frozen convolutional feature extractor, regresses 6
affine parameters, and resamples the photo with them; E upsamples the
cropped image with residual blocks and pixel shuffle. Both are trained
end to end: the cropper against a cosine distance between feature maps
of crop and ground truth, the enhancer against an MSE between feature
maps of its output and the high-resolution ground truth.
"""

import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from .autodiff import Tensor, init, ops
from .autodiff.tensor import ShapeError
from .warp import IDENTITY_AFFINE, affine_grid, grid_sample

logger = logging.getLogger(__name__)

# Feature extractor block specs: (convs_per_block, channels) per
# conv/relu/maxpool block. Five blocks fix the spatial reduction at 32x.
COMPACT_BLOCKS = ((1, 16), (1, 32), (1, 64), (1, 64), (1, 64))
VGG19_BLOCKS = ((2, 64), (2, 128), (4, 256), (4, 512), (4, 512))

FEATURE_REDUCTION = 32

# Cropper head widths (conv1, conv2, fc1, fc2); the wide set matches the
# 512-channel feature extractor, the narrow set keeps compact runs cheap.
WIDE_HEAD = (512, 128, 1000, 80)
COMPACT_HEAD = (128, 32, 256, 80)

DENOM_FLOOR = 1e-12


class Conv2d:
    def __init__(self, c_in, c_out, k, stride=1, padding="same", seed=0, name="conv",
                 dtype=np.float32):
        fan = k * k
        self.weight = init.glorot_uniform(
            (c_out, c_in, k, k), c_in * fan, c_out * fan, seed, name + ".weight", dtype
        )
        self.bias = init.zeros((c_out,), dtype=dtype)
        self.stride = stride
        self.padding = padding
        self.name = name

    def __call__(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def parameters(self):
        return [(self.name + ".weight", self.weight), (self.name + ".bias", self.bias)]


class Dense:
    def __init__(self, n_in, n_out, seed=0, name="fc", dtype=np.float32,
                 zero_weights=False, bias_values=None):
        if zero_weights:
            self.weight = init.zeros((n_out, n_in), dtype=dtype)
        else:
            self.weight = init.glorot_uniform(
                (n_out, n_in), n_in, n_out, seed, name + ".weight", dtype
            )
        if bias_values is None:
            self.bias = init.zeros((n_out,), dtype=dtype)
        else:
            self.bias = Tensor(np.asarray(bias_values, dtype=dtype), requires_grad=True)
        self.name = name

    def __call__(self, x):
        return ops.linear(x, self.weight, self.bias)

    def parameters(self):
        return [(self.name + ".weight", self.weight), (self.name + ".bias", self.bias)]


class FeatureExtractor:
    """Stack of conv/ReLU/maxpool blocks reducing 3xNxN to C_f x N/32 x N/32.

    Frozen by default: the weights stay fixed (random, seeded) and only
    serve as a feature space for the losses and the cropper head, while
    gradients still flow through them to earlier computation. A VGG19-
    shaped block spec is available for importing externally exported
    weights of that layout.
    """

    def __init__(self, blocks=COMPACT_BLOCKS, in_channels=3, seed=0, frozen=True,
                 name="features", dtype=np.float32):
        self.blocks = tuple((int(n), int(c)) for n, c in blocks)
        self.name = name
        self.convs = []
        c_prev = in_channels
        for bi, (n_convs, c_out) in enumerate(self.blocks):
            stage = []
            for ci in range(n_convs):
                stage.append(
                    Conv2d(c_prev, c_out, 3, padding="same", seed=seed,
                           name=f"{name}.b{bi}.c{ci}", dtype=dtype)
                )
                c_prev = c_out
            self.convs.append(stage)
        self.out_channels = c_prev
        self._frozen = None
        self.set_frozen(frozen)

    @property
    def frozen(self):
        return self._frozen

    def set_frozen(self, flag):
        self._frozen = bool(flag)
        for _, p in self.parameters():
            p.requires_grad = not self._frozen

    def __call__(self, img):
        _, h, w = img.shape
        if h % FEATURE_REDUCTION or w % FEATURE_REDUCTION:
            raise ShapeError(
                f"feature extractor needs spatial dims divisible by "
                f"{FEATURE_REDUCTION}, got {h}x{w}"
            )
        x = img
        for stage in self.convs:
            for conv in stage:
                x = ops.relu(conv(x))
            x = ops.maxpool2d(x, 2)
        return x

    def parameters(self):
        return [p for stage in self.convs for conv in stage for p in conv.parameters()]


class CropperHead:
    """Maps a feature block to 6 affine parameters.

    conv 2x2 -> conv 1x1 -> three fully connected layers. The last layer
    starts with zero weights and an identity-affine bias, so an untrained
    head always emits the identity transform.
    """

    def __init__(self, in_channels, feat_size, widths=None, seed=0, name="cropper",
                 dtype=np.float32):
        if widths is None:
            widths = WIDE_HEAD if in_channels >= 256 else COMPACT_HEAD
        n1, n2, d1, d2 = widths
        self.widths = (n1, n2, d1, d2)
        self.feat_size = feat_size
        self.name = name
        self.conv1 = Conv2d(in_channels, n1, 2, padding="same", seed=seed,
                            name=f"{name}.conv1", dtype=dtype)
        self.conv2 = Conv2d(n1, n2, 1, padding="same", seed=seed,
                            name=f"{name}.conv2", dtype=dtype)
        self.flatten_dim = feat_size * feat_size * n2
        self.fc1 = Dense(self.flatten_dim, d1, seed=seed, name=f"{name}.fc1", dtype=dtype)
        self.fc2 = Dense(d1, d2, seed=seed, name=f"{name}.fc2", dtype=dtype)
        self.fc3 = Dense(d2, 6, name=f"{name}.fc3", dtype=dtype,
                         zero_weights=True, bias_values=IDENTITY_AFFINE)

    def __call__(self, feats):
        x = ops.relu(self.conv1(feats))
        x = ops.relu(self.conv2(x))
        x = ops.flatten(x)
        x = ops.relu(self.fc1(x))
        x = ops.relu(self.fc2(x))
        return self.fc3(x)

    def parameters(self):
        out = []
        for layer in (self.conv1, self.conv2, self.fc1, self.fc2, self.fc3):
            out.extend(layer.parameters())
        return out


class Enhancer:
    """Residual-block super-resolver with sub-pixel upsampling.

    head conv -> B residual blocks (conv/ReLU/conv, scaled by res_scale)
    -> skip from the head output -> conv to channels*r^2 -> pixel shuffle
    -> tail conv to RGB. There is no skip from the network input to the
    output; a zero-weight network emits a zero image.
    """

    def __init__(self, channels=64, n_blocks=8, upscale=2, res_scale=0.1, seed=0,
                 name="enhancer", dtype=np.float32):
        self.channels = channels
        self.n_blocks = n_blocks
        self.upscale = upscale
        self.res_scale = res_scale
        self.name = name
        self.head = Conv2d(3, channels, 3, padding="same", seed=seed,
                           name=f"{name}.head", dtype=dtype)
        self.blocks = [
            (
                Conv2d(channels, channels, 3, padding="same", seed=seed,
                       name=f"{name}.b{i}.c0", dtype=dtype),
                Conv2d(channels, channels, 3, padding="same", seed=seed,
                       name=f"{name}.b{i}.c1", dtype=dtype),
            )
            for i in range(n_blocks)
        ]
        self.up = Conv2d(channels, channels * upscale * upscale, 3, padding="same",
                         seed=seed, name=f"{name}.up", dtype=dtype)
        self.tail = Conv2d(channels, 3, 3, padding="same", seed=seed,
                           name=f"{name}.tail", dtype=dtype)

    def __call__(self, x):
        h0 = self.head(x)
        h = h0
        for c0, c1 in self.blocks:
            y = c1(ops.relu(c0(h)))
            h = ops.add(h, ops.scale(y, self.res_scale))
        h = ops.add(h, h0)
        u = ops.pixel_shuffle(self.up(h), self.upscale)
        return self.tail(u)

    def parameters(self):
        out = self.head.parameters()
        for c0, c1 in self.blocks:
            out.extend(c0.parameters())
            out.extend(c1.parameters())
        out.extend(self.up.parameters())
        out.extend(self.tail.parameters())
        return out


@dataclass
class ModelConfig:
    input_size: int = 224
    feature_blocks: tuple = COMPACT_BLOCKS
    n_croppers: int = 1
    cropper_widths: tuple | None = None
    use_enhancer: bool = True
    enhancer_channels: int = 64
    enhancer_blocks: int = 8
    upscale: int = 2
    res_scale: float = 0.1
    freeze_features: bool = True
    deep_supervision: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.input_size % FEATURE_REDUCTION:
            raise ValueError(
                f"input_size must be a multiple of {FEATURE_REDUCTION}, "
                f"got {self.input_size}"
            )
        if self.n_croppers < 1:
            raise ValueError("need at least one cropper")
        self.feature_blocks = tuple(tuple(b) for b in self.feature_blocks)
        if self.cropper_widths is not None:
            self.cropper_widths = tuple(self.cropper_widths)

    @property
    def feat_size(self):
        return self.input_size // FEATURE_REDUCTION

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class CropEnhanceModel:
    """Stacked croppers followed by an optional enhancer."""

    def __init__(self, config):
        self.config = config
        self.features = FeatureExtractor(
            config.feature_blocks, seed=config.seed, frozen=config.freeze_features
        )
        self.croppers = [
            CropperHead(
                self.features.out_channels,
                config.feat_size,
                widths=config.cropper_widths,
                seed=config.seed,
                name=f"croppers.{i}",
            )
            for i in range(config.n_croppers)
        ]
        self.enhancer = (
            Enhancer(
                config.enhancer_channels,
                config.enhancer_blocks,
                config.upscale,
                config.res_scale,
                seed=config.seed,
            )
            if config.use_enhancer
            else None
        )

    def crop_stack(self, photo, photo_features=None):
        """Run the cropper chain; returns [(theta, cropped), ...].

        Each stage consumes the previous stage's crop, so gradients from
        any later loss reach every head in the chain. photo_features, if
        given, replaces the first stage's feature pass (valid only while
        the extractor is frozen, since it is then constant per photo).
        """
        size = self.config.input_size
        if photo.shape != (3, size, size):
            raise ShapeError(
                f"expected photo of shape (3,{size},{size}), got {photo.shape}"
            )
        stages = []
        current = photo
        for i, head in enumerate(self.croppers):
            if i == 0 and photo_features is not None:
                feats = photo_features
            else:
                feats = self.features(current)
            theta = head(feats)
            current = grid_sample(current, affine_grid(theta, size, size))
            stages.append((theta, current))
        return stages

    def forward(self, photo, photo_features=None):
        stages = self.crop_stack(photo, photo_features=photo_features)
        enhanced = self.enhancer(stages[-1][1]) if self.enhancer is not None else None
        return stages, enhanced

    def named_parameters(self):
        out = list(self.features.parameters())
        for head in self.croppers:
            out.extend(head.parameters())
        if self.enhancer is not None:
            out.extend(self.enhancer.parameters())
        return out

    def trainable_parameters(self):
        return [(n, p) for n, p in self.named_parameters() if p.requires_grad]

    def state_arrays(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state(self, arrays):
        params = dict(self.named_parameters())
        missing = sorted(set(params) - set(arrays))
        extra = sorted(set(arrays) - set(params))
        if missing or extra:
            raise KeyError(
                f"parameter set mismatch: missing {missing[:4]}, unexpected {extra[:4]}"
            )
        for name, p in params.items():
            src = np.asarray(arrays[name], dtype=p.dtype)
            if src.shape != p.shape:
                raise ShapeError(
                    f"parameter {name}: stored shape {src.shape} != model {p.shape}"
                )
            p.data = src.copy()

    def import_feature_weights(self, arrays):
        """Overwrite only the feature extractor's tensors (weight import)."""
        for name, p in self.features.parameters():
            if name not in arrays:
                raise KeyError(f"feature weight {name} missing from import source")
            src = np.asarray(arrays[name], dtype=p.dtype)
            if src.shape != p.shape:
                raise ShapeError(
                    f"feature weight {name}: shape {src.shape} != model {p.shape}"
                )
            p.data = src.copy()


# ---------------------------------------------------------------------------
# losses


def extract_features(features, img_array):
    """Feature map of a plain image array, outside any tape; usable as a
    precomputed constant target while the extractor is frozen."""
    return features(Tensor(np.asarray(img_array, dtype=np.float32)))


def feature_cosine_loss(img_a, img_b, features, target_features=None):
    """1 - cosine similarity between feature maps of the two images.

    The denominator is floored at 1e-12, so an all-zero feature map gives
    a loss of exactly 1 (and logs a warning) instead of dividing by zero.
    With ReLU features both vectors are non-negative, bounding the loss
    to [0, 1]. target_features short-circuits the second image's feature
    pass with a precomputed constant map.
    """
    fa = ops.flatten(features(img_a))
    fb = ops.flatten(target_features if target_features is not None else features(img_b))
    num = ops.dot(fa, fb)
    denom = ops.clamp_min(ops.sqrt(ops.mul(ops.dot(fa, fa), ops.dot(fb, fb))), DENOM_FLOOR)
    if float(denom.data) <= DENOM_FLOOR:
        logger.warning("degenerate (all-zero) feature vector in cosine loss")
    return ops.add_scalar(ops.negate(ops.div(num, denom)), 1.0)


def feature_mse_loss(enhanced, target_hr, features, pool, target_features=None):
    """Mean squared error between feature maps, after pooling both images
    down by the enhancer's upscale factor."""
    if enhanced.shape != target_hr.shape:
        raise ShapeError(
            f"resolution mismatch: output {enhanced.shape} vs target {target_hr.shape}"
        )
    a = ops.avgpool2d(enhanced, pool) if pool > 1 else enhanced
    fa = features(a)
    if target_features is not None:
        fb = target_features
    else:
        b = ops.avgpool2d(target_hr, pool) if pool > 1 else target_hr
        fb = features(b)
    d = ops.sub(fa, fb)
    return ops.mean_all(ops.mul(d, d))


def total_loss(stages, enhanced, gt, gt_hr, features, pool, deep_supervision=False,
               gt_features=None, gt_hr_features=None):
    """Combined objective: cosine loss on the last crop plus, when the
    enhancer ran, the feature MSE on its output.

    Returns (total, crop_term, enhance_term); enhance_term is None when
    no enhancer output was given. Intermediate croppers receive gradient
    only through the chain unless deep_supervision adds their own terms.
    The gt_features/gt_hr_features arguments carry precomputed target
    feature maps (frozen extractor only).
    """
    if deep_supervision and len(stages) > 1:
        l_crop = feature_cosine_loss(stages[0][1], gt, features, gt_features)
        for _, cropped in stages[1:]:
            l_crop = ops.add(
                l_crop, feature_cosine_loss(cropped, gt, features, gt_features)
            )
    else:
        l_crop = feature_cosine_loss(stages[-1][1], gt, features, gt_features)
    if enhanced is None:
        return l_crop, l_crop, None
    l_enh = feature_mse_loss(enhanced, gt_hr, features, pool, gt_hr_features)
    return ops.add(l_crop, l_enh), l_crop, l_enh
