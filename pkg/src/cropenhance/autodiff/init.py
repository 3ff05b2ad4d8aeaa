"""Seeded parameter initialization.

Every learnable tensor is drawn from a generator derived from a global
seed plus the parameter's dotted name, so adding or reordering layers
never perturbs the initialization of unrelated ones.
"""

import hashlib

import numpy as np

from .tensor import Tensor


def name_seed(name):
    """Stable 64-bit value derived from a parameter name."""
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def param_rng(seed, name):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, name_seed(name)))))


def glorot_uniform(shape, fan_in, fan_out, seed, name, dtype=np.float32):
    """Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    rng = param_rng(seed, name)
    data = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return Tensor(data, requires_grad=True)


def zeros(shape, dtype=np.float32, requires_grad=True):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)
