"""Local-DP release of attribution heatmaps, and the SSIM utility gate.

Release path: a signed attribution map is quantized to 8-bit gray levels,
coarsened into square cells, and each cell mean gets one Laplace draw
calibrated to the worst-case influence of a single record:

    sensitivity = (gray_levels - 1) * influenced_pixels * channels / cell_size^2
    noise scale = sensitivity / epsilon

The noised map is *not* clamped back to [0, 255]; clamping would condition the
mechanism's output on the data and break the epsilon argument.

Utility is judged with SSIM (Wang et al. 2004) between the released map and
its non-private counterpart; ``elimination_test`` turns that into the
keep/drop decision the serving pipeline enforces.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import correlate

from .errors import ConfigError, ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def to_heatmap(values) -> np.ndarray:
    """Collapse an attribution tensor to a 2-d map (channels are summed)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3:
        return arr.sum(axis=0)
    raise ShapeError(f"cannot make a heatmap from shape {arr.shape}")


def quantize_heatmap(s) -> np.ndarray:
    """Min-max quantization to integer gray levels 0..255 (round half up).

    A constant map has no range to stretch and quantizes to all zeros.
    """
    arr = np.asarray(s, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ShapeError("heatmap contains non-finite values")
    lo = float(arr.min())
    span = float(arr.max()) - lo
    if span == 0.0:
        return np.zeros_like(arr)
    return np.floor((arr - lo) * (255.0 / span) + 0.5)


def _cell_edges(n: int, cell: int) -> np.ndarray:
    return np.arange(0, n, cell)


def pixelize(img, cell_size: int) -> np.ndarray:
    """Replace every cell_size x cell_size cell with its mean.

    Trailing cells are ragged when the side is not divisible; each cell
    averages only the pixels it actually contains.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"pixelize needs a 2-d map, got shape {arr.shape}")
    if not isinstance(cell_size, (int, np.integer)) or cell_size < 1:
        raise ConfigError(f"cell_size must be a positive integer, got {cell_size}")
    cells, (row_counts, col_counts) = _cell_means(arr, cell_size)
    return np.repeat(np.repeat(cells, row_counts, axis=0), col_counts, axis=1)


def _cell_means(arr: np.ndarray, cell: int):
    h, w = arr.shape
    rows = _cell_edges(h, cell)
    cols = _cell_edges(w, cell)
    sums = np.add.reduceat(np.add.reduceat(arr, rows, axis=0), cols, axis=1)
    row_counts = np.diff(np.append(rows, h))
    col_counts = np.diff(np.append(cols, w))
    return sums / np.outer(row_counts, col_counts), (row_counts, col_counts)


@dataclass(frozen=True)
class LdpParams:
    """Mechanism parameters; defaults follow the hardened release setting."""

    epsilon: float
    gray_levels: int = 256
    influenced_pixels: int = 16
    cell_size: int = 14
    channels: int = 1

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.gray_levels < 2:
            raise ConfigError("gray_levels must be at least 2")
        if self.influenced_pixels < 1 or self.cell_size < 1 or self.channels < 1:
            raise ConfigError("influenced_pixels, cell_size, channels must be positive")

    def sensitivity(self) -> float:
        return (
            (self.gray_levels - 1)
            * self.influenced_pixels
            * self.channels
            / (self.cell_size**2)
        )

    def noise_scale(self) -> float:
        return self.sensitivity() / self.epsilon

    def to_json(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "gray_levels": self.gray_levels,
            "influenced_pixels": self.influenced_pixels,
            "cell_size": self.cell_size,
            "channels": self.channels,
        }

    @staticmethod
    def from_json(doc: dict) -> "LdpParams":
        try:
            return LdpParams(**doc)
        except TypeError as exc:
            raise ConfigError(f"bad ldp params document: {exc}") from exc


@dataclass(frozen=True)
class LdpExplanation:
    """A released (noised) heatmap plus everything needed to audit it."""

    values: np.ndarray
    params: LdpParams
    seed: int | None = None
    ssim_vs_nonprivate: float | None = None

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    def with_ssim(self, value: float) -> "LdpExplanation":
        return replace(self, ssim_vs_nonprivate=float(value))


def ldp_apply(
    img,
    params: LdpParams,
    rng: np.random.Generator | int | None = None,
) -> LdpExplanation:
    """Privatize a quantized heatmap: pixelize, then one Laplace draw per cell.

    The input must already be integer gray levels in [0, 255] (what
    ``quantize_heatmap`` produces); the sensitivity calibration is stated in
    those units.  Passing an int as ``rng`` seeds the draw and is recorded on
    the result for reproducibility.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"ldp_apply needs a 2-d map, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError("map contains non-finite values")
    if arr.min() < 0 or arr.max() > 255 or not np.all(arr == np.floor(arr)):
        raise ConfigError("map must hold integer gray levels in [0, 255]; quantize first")
    seed = int(rng) if isinstance(rng, (int, np.integer)) else None
    gen = np.random.default_rng(rng)
    cells, (row_counts, col_counts) = _cell_means(arr, params.cell_size)
    noised = cells + gen.laplace(0.0, params.noise_scale(), size=cells.shape)
    values = np.repeat(np.repeat(noised, row_counts, axis=0), col_counts, axis=1)
    return LdpExplanation(values=values, params=params, seed=seed)


@dataclass(frozen=True)
class EliminationResult:
    keep: bool
    reason: str


def elimination_test(explanation: LdpExplanation, tau_ssim: float = 0.05) -> EliminationResult:
    """Keep a released map only if it still resembles its non-private source."""
    score = explanation.ssim_vs_nonprivate
    if score is None:
        raise ConfigError("ssim_vs_nonprivate not populated on this explanation")
    if score > tau_ssim:
        return EliminationResult(
            keep=True, reason=f"ssim {score:.4f} above threshold {tau_ssim}"
        )
    return EliminationResult(
        keep=False, reason=f"ssim {score:.4f} at or below threshold {tau_ssim}"
    )


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size) - size // 2
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma**2))
    return g / g.sum()


def ssim(a, b, dynamic_range: float = 255.0) -> float:
    """Mean structural similarity between two equal-size 2-d maps.

    Standard construction: 11x11 Gaussian window (sigma 1.5), stabilizers
    C1=(0.01 L)^2 and C2=(0.03 L)^2, averaged over fully valid window
    positions.  Maps smaller than the window are scored with a single uniform
    window spanning the whole map, with a RuntimeWarning, so tiny fixtures
    degrade loudly instead of failing.
    """
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2:
        raise ShapeError("ssim compares 2-d maps")
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {y.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ShapeError("ssim inputs contain non-finite values")
    if dynamic_range <= 0:
        raise ConfigError(f"dynamic_range must be positive, got {dynamic_range}")
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2

    h, w = x.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        warnings.warn(
            "map smaller than the 11x11 ssim window; scoring one global window",
            RuntimeWarning,
            stacklevel=2,
        )
        mu_x, mu_y = x.mean(), y.mean()
        var_x, var_y = x.var(), y.var()
        cov = float(np.mean((x - mu_x) * (y - mu_y)))
        num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
        return float(num / den)

    win = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    half = SSIM_WINDOW // 2

    def windowed(img):
        full = correlate(img, win, mode="constant", cval=0.0)
        return full[half : h - half, half : w - half]

    mu_x = windowed(x)
    mu_y = windowed(y)
    var_x = windowed(x * x) - mu_x * mu_x
    var_y = windowed(y * y) - mu_y * mu_y
    cov = windowed(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))
