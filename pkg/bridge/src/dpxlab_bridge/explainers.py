"""Attribution methods on torch modules via autograd.

The numerical recipes deliberately match the audit toolkit's definitions
(midpoint-rule path integral, range-scaled smoothing noise, expected gradients
from a zero reference) so that maps exported here are directly comparable with
maps computed there on the same weights.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .errors import ConfigError

EXPLAINER_IDS = ("saliency", "smoothgrad", "integrated_gradients", "grad_shap", "grad_cam")


class IncompatibleExplainer(Exception):
    """The method does not apply to this model family; callers skip, not fail."""


def _class_gradients(module: nn.Module, points: torch.Tensor, class_index: int) -> torch.Tensor:
    """Per-point gradient of the class logit for a batch of inputs."""
    points = points.detach().requires_grad_(True)
    logits = module(points)
    if not 0 <= class_index < logits.shape[1]:
        raise ConfigError(f"class index {class_index} out of range for {logits.shape[1]} logits")
    (grad,) = torch.autograd.grad(logits[:, class_index].sum(), points)
    return grad


def saliency(module: nn.Module, x: torch.Tensor, class_index: int) -> np.ndarray:
    grad = _class_gradients(module, x[None], class_index)[0]
    return grad.abs().numpy()


def smoothgrad(
    module: nn.Module,
    x: torch.Tensor,
    class_index: int,
    n_samples: int = 25,
    noise_fraction: float = 0.1,
    generator: torch.Generator | None = None,
) -> np.ndarray:
    """Mean gradient over Gaussian perturbations; zero scale falls back to the
    plain gradient with no random numbers consumed."""
    if n_samples < 1:
        raise ConfigError(f"n_samples must be positive, got {n_samples}")
    if noise_fraction < 0:
        raise ConfigError(f"noise_fraction must be non-negative, got {noise_fraction}")
    sigma = noise_fraction * float(x.max() - x.min())
    if sigma == 0.0:
        return _class_gradients(module, x[None], class_index)[0].numpy()
    noise = torch.randn((n_samples, *x.shape), dtype=x.dtype, generator=generator) * sigma
    grads = _class_gradients(module, x[None] + noise, class_index)
    return grads.mean(dim=0).numpy()


def integrated_gradients(
    module: nn.Module,
    x: torch.Tensor,
    class_index: int,
    steps: int = 50,
) -> np.ndarray:
    """Midpoint-rule path integral of gradients from a zero baseline."""
    if steps < 1:
        raise ConfigError(f"steps must be positive, got {steps}")
    alphas = (torch.arange(steps, dtype=x.dtype) + 0.5) / steps
    points = alphas.reshape(-1, *([1] * x.ndim)) * x[None]
    grads = _class_gradients(module, points, class_index)
    return (x * grads.mean(dim=0)).numpy()


def grad_shap(
    module: nn.Module,
    x: torch.Tensor,
    class_index: int,
    n_baselines: int = 8,
    n_alpha: int = 16,
    generator: torch.Generator | None = None,
) -> np.ndarray:
    """Expected gradients against a zero reference set."""
    if n_baselines < 1 or n_alpha < 1:
        raise ConfigError("n_baselines and n_alpha must be positive")
    n = n_baselines * n_alpha
    alphas = torch.rand(n, dtype=x.dtype, generator=generator)
    points = alphas.reshape(-1, *([1] * x.ndim)) * x[None]
    grads = _class_gradients(module, points, class_index)
    return (x * grads.mean(dim=0)).numpy()


def _last_conv(module: nn.Module) -> nn.Module:
    conv = None
    for _, m in module.named_modules():
        if isinstance(m, nn.Conv2d):
            conv = m
    if conv is None:
        raise IncompatibleExplainer("grad_cam needs a Conv2d layer and this model has none")
    return conv


def grad_cam(module: nn.Module, x: torch.Tensor, class_index: int) -> np.ndarray:
    """Class activation map at the last Conv2d, at that layer's spatial grid."""
    conv = _last_conv(module)
    grabbed: list[torch.Tensor] = []

    def hook(_m, _inp, out):
        grabbed.append(out)

    handle = conv.register_forward_hook(hook)
    try:
        xb = x[None].detach().requires_grad_(True)
        logits = module(xb)
        if not 0 <= class_index < logits.shape[1]:
            raise ConfigError(f"class index {class_index} out of range for {logits.shape[1]} logits")
        activation = grabbed[0]
        (grad,) = torch.autograd.grad(logits[0, class_index], activation)
    finally:
        handle.remove()
    weights = grad[0].mean(dim=(1, 2))
    cam = torch.relu((weights[:, None, None] * activation[0].detach()).sum(dim=0))
    return cam.numpy()


def attribute(
    module: nn.Module,
    x: torch.Tensor,
    class_index: int,
    explainer_id: str,
    seed: int = 0,
) -> tuple[np.ndarray, dict]:
    """Dispatch by id; returns the map and the params that produced it.

    Raises IncompatibleExplainer when the method does not apply to the model,
    ConfigError when the id itself is unknown.
    """
    if explainer_id == "saliency":
        return saliency(module, x, class_index), {}
    if explainer_id == "smoothgrad":
        gen = torch.Generator().manual_seed(seed)
        params = {"n_samples": 25, "noise_fraction": 0.1, "seed": seed}
        values = smoothgrad(module, x, class_index, generator=gen)
        return values, params
    if explainer_id == "integrated_gradients":
        return integrated_gradients(module, x, class_index, steps=50), {"steps": 50}
    if explainer_id == "grad_shap":
        gen = torch.Generator().manual_seed(seed)
        params = {"n_baselines": 8, "n_alpha": 16, "seed": seed}
        values = grad_shap(module, x, class_index, generator=gen)
        return values, params
    if explainer_id == "grad_cam":
        return grad_cam(module, x, class_index), {}
    raise ConfigError(
        f"unknown explainer '{explainer_id}'; supported: {', '.join(EXPLAINER_IDS)}"
    )
