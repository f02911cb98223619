"""Attribution methods over the class logit.

All methods explain the pre-softmax logit of one class at one input, and all
gradient-based ones reduce to calls into the network's exact reverse-mode
pass, so their correctness rides on the finite-difference-checked kernels:

* ``saliency``: absolute input gradient (Simonyan et al. 2014).
* ``smoothgrad``: mean gradient under Gaussian input noise (Smilkov et al.
  2017); the noise scale is a fraction of the input's value range, and a zero
  scale degenerates to the plain gradient with no sampling at all.
* ``integrated_gradients``: path integral from a baseline, midpoint rule
  (Sundararajan et al. 2017).  The completeness identity (attributions sum to
  the logit difference) is the natural correctness probe.
* ``grad_shap``: expected gradients over (baseline, path position) draws
  (Lundberg & Lee 2017 as popularized by SHAP's gradient explainer).
* ``grad_cam``: ReLU-gated weighted sum of a conv layer's channels, channel
  weights being spatially pooled logit gradients (Selvaraju et al. 2017),
  bilinearly upsampled to the input grid.
* ``exact_shapley``: the exact Shapley value by full coalition enumeration;
  exponential, so it refuses more than a dozen features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ScaleError
from .nn.network import (
    ModelSnapshot,
    forward,
    input_gradient,
    layer_sensitivity,
)


@dataclass(frozen=True)
class AttributionMap:
    """Signed per-element scores for one input under one explainer."""

    values: np.ndarray
    explainer_id: str
    model_id: str
    class_index: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)


def _model_id(model: ModelSnapshot) -> str:
    return model.provenance.get("model_id", model.digest()[:12])


def saliency(model: ModelSnapshot, x, class_index: int) -> AttributionMap:
    """Absolute gradient of the class logit with respect to the input."""
    grad = input_gradient(model, x, class_index)
    return AttributionMap(
        values=np.abs(grad),
        explainer_id="saliency",
        model_id=_model_id(model),
        class_index=class_index,
    )


def smoothgrad(
    model: ModelSnapshot,
    x,
    class_index: int,
    n_samples: int = 25,
    noise_fraction: float = 0.1,
    rng: np.random.Generator | int | None = None,
) -> AttributionMap:
    """Mean input gradient over Gaussian perturbations of the input.

    The noise standard deviation is noise_fraction times the input's value
    range.  When that scale is exactly zero (constant input, or a zero
    fraction) the plain gradient is returned unchanged and no random numbers
    are consumed.
    """
    if n_samples < 1:
        raise ConfigError(f"n_samples must be positive, got {n_samples}")
    if noise_fraction < 0:
        raise ConfigError(f"noise_fraction must be non-negative, got {noise_fraction}")
    arr = np.asarray(x, dtype=np.float64)
    sigma = noise_fraction * float(arr.max() - arr.min())
    params = {"n_samples": n_samples, "noise_fraction": noise_fraction, "sigma": sigma}
    if sigma == 0.0:
        values = input_gradient(model, arr, class_index)
    else:
        gen = np.random.default_rng(rng)
        total = np.zeros_like(arr)
        for _ in range(n_samples):
            noisy = arr + gen.normal(0.0, sigma, size=arr.shape)
            total += input_gradient(model, noisy, class_index)
        values = total / n_samples
    return AttributionMap(
        values=values,
        explainer_id="smoothgrad",
        model_id=_model_id(model),
        class_index=class_index,
        params=params,
    )


def integrated_gradients(
    model: ModelSnapshot,
    x,
    class_index: int,
    steps: int = 50,
    baseline=None,
) -> AttributionMap:
    """Midpoint-rule path integral of gradients from ``baseline`` to ``x``."""
    if steps < 1:
        raise ConfigError(f"steps must be positive, got {steps}")
    arr = np.asarray(x, dtype=np.float64)
    base = np.zeros_like(arr) if baseline is None else np.asarray(baseline, dtype=np.float64)
    if base.shape != arr.shape:
        raise ConfigError(f"baseline shape {base.shape} != input shape {arr.shape}")
    delta = arr - base
    total = np.zeros_like(arr)
    for k in range(steps):
        alpha = (k + 0.5) / steps
        total += input_gradient(model, base + alpha * delta, class_index)
    values = delta * (total / steps)
    return AttributionMap(
        values=values,
        explainer_id="integrated_gradients",
        model_id=_model_id(model),
        class_index=class_index,
        params={"steps": steps},
    )


def grad_shap(
    model: ModelSnapshot,
    x,
    class_index: int,
    baselines,
    n_baselines: int = 8,
    n_alpha: int = 16,
    rng: np.random.Generator | int | None = None,
) -> AttributionMap:
    """Expected gradients: average (x-b) * grad(f) at random points between
    a sampled reference ``b`` and ``x``."""
    if n_baselines < 1 or n_alpha < 1:
        raise ConfigError("n_baselines and n_alpha must be positive")
    refs = [np.asarray(b, dtype=np.float64) for b in baselines]
    if not refs:
        raise ConfigError("grad_shap needs a non-empty reference set")
    arr = np.asarray(x, dtype=np.float64)
    for b in refs:
        if b.shape != arr.shape:
            raise ConfigError(f"reference shape {b.shape} != input shape {arr.shape}")
    gen = np.random.default_rng(rng)
    total = np.zeros_like(arr)
    for _ in range(n_baselines):
        base = refs[int(gen.integers(0, len(refs)))]
        delta = arr - base
        for _ in range(n_alpha):
            alpha = float(gen.uniform(0.0, 1.0))
            total += delta * input_gradient(model, base + alpha * delta, class_index)
    values = total / (n_baselines * n_alpha)
    return AttributionMap(
        values=values,
        explainer_id="grad_shap",
        model_id=_model_id(model),
        class_index=class_index,
        params={"n_baselines": n_baselines, "n_alpha": n_alpha},
    )


def _bilinear_upsample(grid: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned separable bilinear interpolation to (out_h, out_w)."""
    in_h, in_w = grid.shape

    def coords(n_out, n_in):
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out)
        return np.arange(n_out) * (n_in - 1) / (n_out - 1)

    rows = coords(out_h, in_h)
    cols = coords(out_w, in_w)
    r0 = np.clip(np.floor(rows).astype(int), 0, in_h - 1)
    r1 = np.clip(r0 + 1, 0, in_h - 1)
    fr = (rows - r0)[:, None]
    c0 = np.clip(np.floor(cols).astype(int), 0, in_w - 1)
    c1 = np.clip(c0 + 1, 0, in_w - 1)
    fc = (cols - c0)[None, :]
    top = grid[r0][:, c0] * (1 - fc) + grid[r0][:, c1] * fc
    bottom = grid[r1][:, c0] * (1 - fc) + grid[r1][:, c1] * fc
    return top * (1 - fr) + bottom * fr


def grad_cam(
    model: ModelSnapshot,
    x,
    class_index: int,
    conv_layer_id: str | None = None,
) -> AttributionMap:
    """Class activation map at a conv layer, upsampled to the input grid.

    Channel weights are the spatial means of the class-logit gradient at that
    layer's output; the weighted channel sum is ReLU-gated, so the map is
    non-negative and highlights evidence for the class, not against it.
    """
    ids = model.spec.layer_ids()
    conv_ids = [
        lid
        for lid, spec in zip(ids, model.spec.layers)
        if spec["kind"] == "conv2d"
    ]
    if not conv_ids:
        raise ConfigError("grad_cam needs a model with at least one conv2d layer")
    layer_id = conv_layer_id if conv_layer_id is not None else conv_ids[-1]
    if layer_id not in conv_ids:
        raise ConfigError(f"'{layer_id}' is not a conv2d layer; have {conv_ids}")
    arr = np.asarray(x, dtype=np.float64)
    activation, grad = layer_sensitivity(model, arr, class_index, layer_id)
    weights = grad.mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(weights, activation, axes=1), 0.0)
    out_h, out_w = arr.shape[-2], arr.shape[-1]
    values = _bilinear_upsample(cam, out_h, out_w)
    return AttributionMap(
        values=values,
        explainer_id="grad_cam",
        model_id=_model_id(model),
        class_index=class_index,
        params={"conv_layer_id": layer_id},
    )


MAX_EXACT_SHAPLEY_FEATURES = 12


def exact_shapley(value_fn, n_features: int) -> np.ndarray:
    """Exact Shapley values of ``value_fn`` over feature coalitions.

    ``value_fn`` receives a boolean mask of length ``n_features`` and returns
    a scalar.  All 2^d coalition values are evaluated once and memoized;
    above MAX_EXACT_SHAPLEY_FEATURES the enumeration is refused.
    """
    d = int(n_features)
    if d < 1:
        raise ConfigError("n_features must be positive")
    if d > MAX_EXACT_SHAPLEY_FEATURES:
        raise ScaleError(
            f"exact enumeration over {d} features needs 2^{d} evaluations; "
            f"limit is {MAX_EXACT_SHAPLEY_FEATURES}"
        )
    values = np.empty(1 << d)
    for mask_bits in range(1 << d):
        mask = np.array([(mask_bits >> i) & 1 == 1 for i in range(d)])
        values[mask_bits] = float(value_fn(mask))
    fact = [math.factorial(k) for k in range(d + 1)]
    weight_by_size = [fact[s] * fact[d - s - 1] / fact[d] for s in range(d)]
    phi = np.zeros(d)
    for mask_bits in range(1 << d):
        size = bin(mask_bits).count("1")
        for i in range(d):
            if mask_bits & (1 << i):
                continue
            gain = values[mask_bits | (1 << i)] - values[mask_bits]
            phi[i] += weight_by_size[size] * gain
    return phi


def masked_logit_fn(model: ModelSnapshot, x, class_index: int, baseline=None):
    """Coalition value function: class logit with absent features set to baseline."""
    arr = np.asarray(x, dtype=np.float64)
    base = np.zeros_like(arr) if baseline is None else np.asarray(baseline, dtype=np.float64)
    if base.shape != arr.shape:
        raise ConfigError(f"baseline shape {base.shape} != input shape {arr.shape}")
    flat_x = arr.ravel()
    flat_b = base.ravel()

    def value(mask) -> float:
        m = np.asarray(mask, dtype=bool)
        if m.shape != flat_x.shape:
            raise ConfigError(f"mask length {m.shape} != feature count {flat_x.shape}")
        combined = np.where(m, flat_x, flat_b).reshape(arr.shape)
        return float(forward(model, combined)[class_index])

    return value


def shapley_attribution(
    model: ModelSnapshot, x, class_index: int, baseline=None
) -> AttributionMap:
    """Exact Shapley attribution of the class logit over input features."""
    arr = np.asarray(x, dtype=np.float64)
    phi = exact_shapley(masked_logit_fn(model, arr, class_index, baseline), arr.size)
    return AttributionMap(
        values=phi.reshape(arr.shape),
        explainer_id="exact_shapley",
        model_id=_model_id(model),
        class_index=class_index,
        params={"n_features": arr.size},
    )


def compute_attribution(
    model: ModelSnapshot,
    x,
    class_index: int,
    explainer_id: str,
    rng: np.random.Generator | int | None = None,
    params: dict | None = None,
) -> AttributionMap:
    """Dispatch by explainer id; sampling methods default to a zero baseline set."""
    params = dict(params or {})
    arr = np.asarray(x, dtype=np.float64)
    if explainer_id == "saliency":
        return saliency(model, arr, class_index)
    if explainer_id == "smoothgrad":
        return smoothgrad(model, arr, class_index, rng=rng, **params)
    if explainer_id == "integrated_gradients":
        return integrated_gradients(model, arr, class_index, **params)
    if explainer_id == "grad_shap":
        baselines = params.pop("baselines", None)
        if baselines is None:
            baselines = [np.zeros_like(arr)]
        return grad_shap(model, arr, class_index, baselines, rng=rng, **params)
    if explainer_id == "grad_cam":
        return grad_cam(model, arr, class_index, **params)
    if explainer_id == "exact_shapley":
        return shapley_attribution(model, arr, class_index, **params)
    raise ConfigError(f"unknown explainer '{explainer_id}'")


EXPLAINER_IDS = (
    "saliency",
    "smoothgrad",
    "integrated_gradients",
    "grad_shap",
    "grad_cam",
    "exact_shapley",
)
