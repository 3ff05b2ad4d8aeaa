"""cropenhance: find an image embedded in a photo, rectify it with a
learned affine warp, and super-resolve the result.

The package is built around a small tape-based autodiff engine
(:mod:`cropenhance.autodiff`), differentiable warping
(:mod:`cropenhance.warp`), the cropper/enhancer networks and losses
(:mod:`cropenhance.model`), a synthetic dataset generator
(:mod:`cropenhance.synthgen`), metrics (:mod:`cropenhance.metrics`), and
training with binary checkpoints (:mod:`cropenhance.train`).
"""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor, backward
from .model import CropEnhanceModel, ModelConfig
from .train import TrainConfig

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "CropEnhanceModel",
    "ModelConfig",
    "TrainConfig",
    "__version__",
]
