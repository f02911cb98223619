"""SGD and DP-SGD training loops over the per-example kernels.

The DP path follows Abadi et al. (2016): per-example gradients are clipped in
L2 norm to ``clip_norm``, summed, perturbed once per coordinate with Gaussian
noise of scale ``sigma * clip_norm``, and averaged over the batch.  Batches
are Poisson-subsampled at rate q = batch_size / n_train so the accountant's
subsampling amplification actually applies to what the loop does.  The noise
multiplier is chosen by bisection so the spent epsilon meets the requested
target; the achieved value lands in the snapshot provenance.

Everything is driven by one seeded generator, so a (config, data) pair gives
the same snapshot every time.  With sigma = 0 no noise is drawn at all, which
keeps a wide-clip DP step bit-identical to the plain SGD step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ..errors import ConfigError
from .accountant import accountant_epsilon, sigma_for_epsilon
from .network import (
    ModelSnapshot,
    NetworkSpec,
    backward_trace,
    forward,
    forward_trace,
    init_weights,
    softmax_cross_entropy_grad,
)

MODES = ("non_private", "dp")


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for ``train``; epsilon/delta/clip_norm only matter in dp mode."""

    epochs: int = 10
    batch_size: int = 128
    lr: float = 0.001
    seed: int = 0
    mode: str = "non_private"
    epsilon: float | None = None
    delta: float = 1e-3
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.mode == "dp":
            if self.epsilon is None or self.epsilon <= 0:
                raise ConfigError("dp mode needs a positive epsilon target")
            if not 0 < self.delta < 1:
                raise ConfigError("dp mode needs delta in (0, 1)")
            if self.clip_norm <= 0:
                raise ConfigError("dp mode needs a positive clip_norm")


def _ce_example_grads(model: ModelSnapshot, x, label: int):
    logits, traces = forward_trace(model, x)
    _, dlogits = softmax_cross_entropy_grad(logits, label)
    _, grads, _ = backward_trace(model, dlogits, traces)
    return grads


def _mse_example_grads(model: ModelSnapshot, x, target):
    out, traces = forward_trace(model, x)
    dlogits = 2.0 * (out - target) / out.size
    _, grads, _ = backward_trace(model, dlogits, traces)
    return grads


def _flat_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def clip_gradients(grads, clip_norm: float) -> list[np.ndarray]:
    """Scale one example's gradient list so its joint L2 norm is at most clip_norm.

    The bound is re-checked after scaling; a violation means broken arithmetic
    and is not a recoverable condition.
    """
    norm = _flat_norm(grads)
    scale = min(1.0, clip_norm / norm) if norm > 0 else 1.0
    clipped = [g * scale for g in grads]
    clipped_norm = _flat_norm(clipped)
    if clipped_norm > clip_norm + 1e-12:
        raise AssertionError(
            f"post-clip norm {clipped_norm} exceeds clip_norm {clip_norm}"
        )
    return clipped


def sgd_step(model: ModelSnapshot, batch_x, batch_y, lr: float) -> ModelSnapshot:
    """One mean-gradient step on softmax cross-entropy."""
    if len(batch_x) == 0:
        raise ConfigError("empty batch")
    sums = [np.zeros_like(w) for w in model.weights]
    for x, y in zip(batch_x, batch_y):
        for s, g in zip(sums, _ce_example_grads(model, x, int(y))):
            s += g
    b = len(batch_x)
    new_weights = tuple(w - lr * (s / b) for w, s in zip(model.weights, sums))
    return replace(model, weights=new_weights)


def dp_sgd_step(
    model: ModelSnapshot,
    batch_x,
    batch_y,
    clip_norm: float,
    sigma: float,
    lr: float,
    rng: np.random.Generator,
) -> ModelSnapshot:
    """One clipped-and-noised step; empty batches are a configuration error."""
    if len(batch_x) == 0:
        raise ConfigError("empty batch")
    if clip_norm <= 0:
        raise ConfigError("clip_norm must be positive")
    if sigma < 0:
        raise ConfigError("sigma must be non-negative")
    sums = [np.zeros_like(w) for w in model.weights]
    for x, y in zip(batch_x, batch_y):
        clipped = clip_gradients(_ce_example_grads(model, x, int(y)), clip_norm)
        for s, g in zip(sums, clipped):
            s += g
    if sigma > 0:
        for s in sums:
            s += rng.normal(0.0, sigma * clip_norm, size=s.shape)
    b = len(batch_x)
    new_weights = tuple(w - lr * (s / b) for w, s in zip(model.weights, sums))
    return replace(model, weights=new_weights)


def _check_training_data(spec: NetworkSpec, x, y):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1:] != spec.input_shape:
        raise ConfigError(
            f"data shape {x.shape[1:]} does not match model input {spec.input_shape}"
        )
    y = np.asarray(y)
    if y.shape != (x.shape[0],):
        raise ConfigError("labels must be one int per example")
    if x.shape[0] == 0:
        raise ConfigError("empty training set")
    if y.min() < 0 or y.max() >= spec.output_classes:
        raise ConfigError("label out of range")
    return x, y.astype(np.int64)


def train(x, y, spec: NetworkSpec, cfg: TrainConfig) -> ModelSnapshot:
    """Train a classifier from scratch; returns a snapshot with provenance.

    Non-private mode runs shuffled minibatch SGD.  DP mode runs Poisson
    subsampling at rate batch_size/n over epochs * ceil(n/batch_size) rounds;
    a round with an empty sample performs no update but still counts toward
    the composition.
    """
    x, y = _check_training_data(spec, x, y)
    n = x.shape[0]
    rng = np.random.default_rng(cfg.seed)
    model = ModelSnapshot(spec=spec, weights=tuple(init_weights(spec, rng)))
    provenance = {
        "mode": cfg.mode,
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "lr": cfg.lr,
        "n_train": n,
    }

    if cfg.mode == "non_private":
        for _ in range(cfg.epochs):
            perm = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = perm[start : start + cfg.batch_size]
                model = sgd_step(model, x[idx], y[idx], cfg.lr)
    else:
        if cfg.batch_size > n:
            raise ConfigError("dp mode needs batch_size <= n_train")
        q = cfg.batch_size / n
        total_steps = cfg.epochs * math.ceil(n / cfg.batch_size)
        sigma = sigma_for_epsilon(q, total_steps, cfg.epsilon, cfg.delta)
        for _ in range(total_steps):
            idx = np.nonzero(rng.random(n) < q)[0]
            if idx.size == 0:
                continue
            model = dp_sgd_step(model, x[idx], y[idx], cfg.clip_norm, sigma, cfg.lr, rng)
        provenance.update(
            {
                "clip_norm": cfg.clip_norm,
                "sigma": sigma,
                "delta": cfg.delta,
                "sampling_rate": q,
                "steps": total_steps,
                "epsilon_target": cfg.epsilon,
                "epsilon_spent": accountant_epsilon(q, sigma, total_steps, cfg.delta),
            }
        )
    return replace(model, provenance=provenance)


def train_autoencoder(x, spec: NetworkSpec, cfg: TrainConfig) -> ModelSnapshot:
    """Train a reconstruction model (output width = flattened input width)."""
    x = np.asarray(x, dtype=np.float64)
    if cfg.mode != "non_private":
        raise ConfigError("the reconstruction gate is trained non-privately")
    if x.ndim < 2 or x.shape[1:] != spec.input_shape:
        raise ConfigError(
            f"data shape {x.shape[1:]} does not match model input {spec.input_shape}"
        )
    flat = x.reshape(x.shape[0], -1)
    if spec.output_classes != flat.shape[1]:
        raise ConfigError(
            f"autoencoder output width {spec.output_classes} != input size {flat.shape[1]}"
        )
    n = x.shape[0]
    rng = np.random.default_rng(cfg.seed)
    model = ModelSnapshot(spec=spec, weights=tuple(init_weights(spec, rng)))
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            sums = [np.zeros_like(w) for w in model.weights]
            for i in idx:
                for s, g in zip(sums, _mse_example_grads(model, x[i], flat[i])):
                    s += g
            new_weights = tuple(
                w - cfg.lr * (s / idx.size) for w, s in zip(model.weights, sums)
            )
            model = replace(model, weights=new_weights)
    provenance = {
        "mode": "non_private",
        "objective": "reconstruction",
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "lr": cfg.lr,
        "n_train": n,
    }
    return replace(model, provenance=provenance)


def ae_reconstruction_error(ae: ModelSnapshot, x) -> float:
    """Mean squared reconstruction error of one example."""
    arr = np.asarray(x, dtype=np.float64)
    out = forward(ae, arr)
    flat = arr.ravel()
    if out.shape != flat.shape:
        raise ConfigError(
            f"reconstruction width {out.shape} does not match input size {flat.shape}"
        )
    diff = out - flat
    return float(np.mean(diff * diff))


def evaluate_accuracy(model: ModelSnapshot, x, y) -> float:
    """Fraction of examples whose argmax logit matches the label."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.shape[0] == 0:
        raise ConfigError("empty evaluation set")
    correct = 0
    for i in range(x.shape[0]):
        correct += int(np.argmax(forward(model, x[i]))) == int(y[i])
    return correct / x.shape[0]
