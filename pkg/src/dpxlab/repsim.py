"""Kernel similarity of layer representations.

Given two activation batches recorded on the same examples, quantifies how
related the representations are:

* ``hsic_statistic`` is the biased V-statistic estimator of the
  Hilbert-Schmidt independence criterion, (1/n^2) trace(K H L H).
* ``hsic_gamma_test`` runs the Gretton et al. (2008) independence test: under
  H0 the scaled statistic n*HSIC is approximated by a two-moment gamma fit.
  When the moment estimates degenerate the test falls back to a permutation
  null and says so in the result.
* ``cka`` / ``dcka`` are centered kernel alignment (Kornblith et al. 2019) and
  a deconfounded variant that partials a third gram matrix out of both sides
  before aligning, for the common case where two models look similar only
  because both resemble their shared input.
* ``aggregate_layer_similarity`` compresses per-layer scores into medians over
  contiguous depth clusters so models with hundreds of layers stay readable.

All comparisons assume both batches index the same examples in the same order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import gamma as gamma_dist

from .errors import ConfigError, DegenerateKernelError, ShapeError, UndefinedError

KERNELS = ("linear", "rbf")


@dataclass(frozen=True)
class ActivationBatch:
    """Activations of one layer on a batch: values has shape (n_examples, n_features)."""

    values: np.ndarray
    layer_id: str
    model_id: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeError(f"activation batch must be 2-d, got shape {v.shape}")
        if v.shape[0] < 4:
            raise ShapeError("activation batch needs at least 4 examples")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class IndependenceResult:
    """Outcome of the HSIC independence test.

    ``method`` is "gamma" for the moment-matched null and "permutation" when
    the gamma fit degenerated and a resampled null was used instead.
    """

    hsic: float
    p_value: float
    reject_h0: bool
    kernel: str
    alpha: float
    method: str


def _as_batch(x) -> np.ndarray:
    values = x.values if isinstance(x, ActivationBatch) else x
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 1:
        v = v[:, None]
    if v.ndim != 2:
        raise ShapeError(f"batch must be 2-d, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ShapeError("batch contains non-finite values")
    return v


def gram_matrix(x, kernel: str = "linear") -> np.ndarray:
    """Pairwise kernel matrix of a batch.

    The rbf bandwidth is the median pairwise Euclidean distance (the usual
    heuristic); a batch of identical rows has no scale to work with and raises
    DegenerateKernelError.
    """
    v = _as_batch(x)
    if kernel == "linear":
        return v @ v.T
    if kernel != "rbf":
        raise ConfigError(f"unknown kernel '{kernel}'")
    sq = np.sum(v * v, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (v @ v.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    n = v.shape[0]
    iu = np.triu_indices(n, k=1)
    bandwidth = float(np.median(np.sqrt(d2[iu]))) if iu[0].size else 0.0
    if bandwidth <= 0.0:
        raise DegenerateKernelError("median pairwise distance is zero")
    return np.exp(-d2 / (2.0 * bandwidth**2))


def _check_square_pair(k: np.ndarray, l: np.ndarray) -> int:
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ShapeError(f"gram matrix must be square, got {k.shape}")
    if l.shape != k.shape:
        raise ShapeError(f"gram shapes differ: {k.shape} vs {l.shape}")
    return k.shape[0]


def _center(g: np.ndarray) -> np.ndarray:
    # H G H without materializing H
    row = g.mean(axis=0, keepdims=True)
    col = g.mean(axis=1, keepdims=True)
    return g - row - col + g.mean()


def hsic_statistic(k, l) -> float:
    """Biased HSIC estimate (1/n^2) trace(K H L H) from two gram matrices."""
    k = np.asarray(k, dtype=np.float64)
    l = np.asarray(l, dtype=np.float64)
    n = _check_square_pair(k, l)
    return float(np.sum(_center(k) * _center(l))) / (n * n)


def _permutation_pvalue(kc, lc, stat, n, n_permutations, rng) -> float:
    rng = np.random.default_rng(rng)
    exceed = 0
    for _ in range(n_permutations):
        p = rng.permutation(n)
        if float(np.sum(kc * lc[np.ix_(p, p)])) / n >= stat:
            exceed += 1
    return (1 + exceed) / (1 + n_permutations)


def hsic_gamma_test(
    x,
    y,
    kernel: str = "rbf",
    alpha: float = 0.05,
    n_permutations: int = 1000,
    rng: np.random.Generator | int | None = None,
) -> IndependenceResult:
    """Test the batches for statistical dependence at level ``alpha``.

    The null distribution of the scaled statistic n*HSIC is matched to a gamma
    by its first two moments, both estimable in closed form from the gram
    matrices.  The variance expression carries (n-4)(n-5) factors, so tiny
    batches (or a constant side, whose centered gram vanishes) degenerate;
    those cases run an ``n_permutations``-shuffle null instead.
    """
    vx, vy = _as_batch(x), _as_batch(y)
    if vx.shape[0] != vy.shape[0]:
        raise ShapeError(f"batch sizes differ: {vx.shape[0]} vs {vy.shape[0]}")
    n = vx.shape[0]
    if n < 4:
        raise ShapeError("independence test needs at least 4 examples")
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")

    k = gram_matrix(vx, kernel)
    l = gram_matrix(vy, kernel)
    kc, lc = _center(k), _center(l)
    stat = float(np.sum(kc * lc)) / n  # distributed as n * HSIC under H0
    hsic = stat / n

    # Null moments of HSIC (Gretton et al. 2008, biased estimator).
    mu_x = (k.sum() - np.trace(k)) / (n * (n - 1))
    mu_y = (l.sum() - np.trace(l)) / (n * (n - 1))
    mean_h0 = (1.0 + mu_x * mu_y - mu_x - mu_y) / n
    b = (kc * lc) / 6.0
    b2 = b * b
    var_h0 = (b2.sum() - np.trace(b2)) / (n * (n - 1))
    var_h0 *= 72.0 * (n - 4) * (n - 5) / (n * (n - 1) * (n - 2) * (n - 3))

    if var_h0 <= 0.0 or mean_h0 <= 0.0:
        p = _permutation_pvalue(kc, lc, stat, n, n_permutations, rng)
        method = "permutation"
    else:
        shape = mean_h0**2 / var_h0
        scale = var_h0 * n / mean_h0
        p = float(gamma_dist.sf(stat, a=shape, scale=scale))
        method = "gamma"
    return IndependenceResult(
        hsic=hsic,
        p_value=p,
        reject_h0=bool(p < alpha),
        kernel=kernel,
        alpha=alpha,
        method=method,
    )


def cka(x, y, kernel: str = "linear") -> float:
    """Centered kernel alignment between two batches, in [0, 1].

    Invariant to orthogonal transforms and isotropic scaling of either batch
    (with the linear kernel).  A constant batch has a zero centered gram and
    no defined alignment.
    """
    vx, vy = _as_batch(x), _as_batch(y)
    if vx.shape[0] != vy.shape[0]:
        raise ShapeError(f"batch sizes differ: {vx.shape[0]} vs {vy.shape[0]}")
    kc = _center(gram_matrix(vx, kernel))
    lc = _center(gram_matrix(vy, kernel))
    denom = float(np.linalg.norm(kc)) * float(np.linalg.norm(lc))
    if denom == 0.0:
        raise UndefinedError("cka undefined: a batch has zero centered gram (constant batch)")
    return float(np.sum(kc * lc)) / denom


def dcka(x, y, confounder, kernel: str = "linear") -> float:
    """Deconfounded CKA: alignment of gram residuals after regressing out a confounder.

    All three gram matrices are centered and vectorized; both sides are
    OLS-regressed (with intercept) on the confounder gram and the residuals
    aligned, giving a value in [-1, 1].  A constant confounder offers nothing
    to regress on and the value reduces to plain CKA.
    """
    vx, vy, vc = _as_batch(x), _as_batch(y), _as_batch(confounder)
    if not (vx.shape[0] == vy.shape[0] == vc.shape[0]):
        raise ShapeError(
            f"batch sizes differ: {vx.shape[0]}, {vy.shape[0]}, {vc.shape[0]}"
        )
    ka = _center(gram_matrix(vx, kernel)).ravel()
    kb = _center(gram_matrix(vy, kernel)).ravel()
    kc = _center(gram_matrix(vc, kernel)).ravel()

    scale = float(np.linalg.norm(kc))
    if scale == 0.0:
        # nothing to partial out; fall through to the undeconfounded alignment
        ra, rb = ka, kb
    else:
        design = np.column_stack([np.ones_like(kc), kc])
        coef_a, *_ = np.linalg.lstsq(design, ka, rcond=None)
        coef_b, *_ = np.linalg.lstsq(design, kb, rcond=None)
        ra = ka - design @ coef_a
        rb = kb - design @ coef_b
    # a residual at rounding-noise level means the side was explained away
    norm_ra, norm_rb = float(np.linalg.norm(ra)), float(np.linalg.norm(rb))
    if norm_ra <= 1e-9 * float(np.linalg.norm(ka)) or norm_rb <= 1e-9 * float(
        np.linalg.norm(kb)
    ):
        raise UndefinedError("dcka undefined: residual alignment has zero norm")
    return float(np.dot(ra, rb)) / (norm_ra * norm_rb)


def aggregate_layer_similarity(
    per_layer: list[tuple[int, float]], n_clusters: int
) -> list[tuple[int, float]]:
    """Median similarity over contiguous, near-equal-size depth clusters.

    Layers are split in depth order into ``n_clusters`` groups whose sizes
    differ by at most one (earlier groups take the remainder), and each group
    reports its median.  102 layers in 17 clusters gives groups of 6; 120 in
    15 gives groups of 8.
    """
    if n_clusters <= 0:
        raise ConfigError(f"n_clusters must be positive, got {n_clusters}")
    if not per_layer:
        raise ConfigError("per_layer is empty")
    if n_clusters > len(per_layer):
        raise ConfigError(
            f"n_clusters {n_clusters} exceeds layer count {len(per_layer)}"
        )
    ordered = sorted(per_layer, key=lambda t: t[0])
    values = np.array([v for _, v in ordered], dtype=np.float64)
    chunks = np.array_split(values, n_clusters)
    return [(i, float(np.median(chunk))) for i, chunk in enumerate(chunks)]
