"""Seeded synthetic datasets for desk-scale experiments and tests."""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError


def make_blobs(
    n: int,
    n_features: int = 24,
    n_classes: int = 3,
    seed: int = 0,
    spread: float = 1.0,
    center_scale: float = 3.0,
):
    """Gaussian class blobs: returns (x, y) with x (n, n_features), y int labels.

    Class centers are drawn once from the same seed, so train/test splits made
    with different seeds share the geometry only if they share the seed; use
    one call and slice instead.
    """
    if n < 1 or n_features < 1 or n_classes < 1:
        raise ConfigError("n, n_features, n_classes must all be positive")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, center_scale, size=(n_classes, n_features))
    y = rng.integers(0, n_classes, size=n)
    x = centers[y] + spread * rng.standard_normal((n, n_features))
    return x, y


def _bump_centers(size: int, n_classes: int):
    # fixed per-class blob locations spread along the diagonal
    positions = np.linspace(size * 0.25, size * 0.75, n_classes)
    return [(p, p) for p in positions]


def make_synthetic_images(
    n: int,
    size: int = 8,
    n_classes: int = 3,
    seed: int = 0,
    noise: float = 0.1,
):
    """Single-channel images with a class-dependent bright blob, values in [0, 1].

    Returns (x, y) with x of shape (n, 1, size, size).  The blob location is
    the only class signal, which makes spatial attribution maps easy to read.
    """
    if n < 1 or size < 4 or n_classes < 1:
        raise ConfigError("need n >= 1, size >= 4, n_classes >= 1")
    rng = np.random.default_rng(seed)
    centers = _bump_centers(size, n_classes)
    ii, jj = np.mgrid[0:size, 0:size]
    width = size / 5.0
    y = rng.integers(0, n_classes, size=n)
    x = np.empty((n, 1, size, size))
    for idx in range(n):
        ci, cj = centers[y[idx]]
        bump = np.exp(-((ii - ci) ** 2 + (jj - cj) ** 2) / (2.0 * width**2))
        img = bump + noise * rng.standard_normal((size, size))
        x[idx, 0] = np.clip(img, 0.0, 1.0)
    return x, y


def ood_uniform_images(n: int, size: int = 8, seed: int = 0):
    """Uniform-noise images, far from anything the blob classes produce."""
    if n < 1 or size < 1:
        raise ConfigError("need n >= 1 and size >= 1")
    rng = np.random.default_rng(seed)
    return rng.uniform(0.0, 1.0, size=(n, 1, size, size))
