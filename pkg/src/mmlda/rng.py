"""Seeded, counter-based random numbers shared by every sampler in the package.

All randomness goes through a Philox bit generator so that runs are
bit-reproducible across platforms, and gaussians are produced by an explicit
Box-Muller transform rather than whatever method the numpy version at hand
happens to use.
"""
from __future__ import annotations

import numpy as np

_TWO_PI = 2.0 * np.pi


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for the given seed and optional stream ids."""
    words = (int(seed),) + tuple(int(s) for s in stream)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def normals(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normal draws via Box-Muller on Philox uniforms."""
    if np.isscalar(shape):
        shape = (int(shape),)
    n = int(np.prod(shape, dtype=np.int64)) if shape else 1
    pairs = (n + 1) // 2
    u1 = 1.0 - rng.random(pairs)  # in (0, 1]; keeps the log finite
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    z = np.concatenate([radius * np.cos(_TWO_PI * u2), radius * np.sin(_TWO_PI * u2)])
    return z[:n].reshape(shape)
