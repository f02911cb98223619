"""Model registry and loading.

A model source is either a registry name (small reference architectures used
for validation and round-trip testing) or a path to a saved bundle:
``{"registry": <name>, "state_dict": <tensors>}``.  Registry builders seed
torch themselves, so the same name always yields the same weights no matter
what the caller did with global RNG state.

Everything runs in float64 on CPU.  These are extraction models, not training
runs; double precision keeps downstream numeric comparisons honest and costs
nothing at this scale.
"""

from __future__ import annotations

import os
from collections import OrderedDict
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError


@dataclass(frozen=True)
class LoadedModel:
    module: nn.Module
    name: str
    input_shape: tuple[int, ...]


def _toy_linear() -> nn.Module:
    torch.manual_seed(101)
    return nn.Linear(6, 3, bias=False)


def _tiny_mlp() -> nn.Module:
    torch.manual_seed(202)
    return nn.Sequential(
        OrderedDict(
            [
                ("fc1", nn.Linear(6, 8)),
                ("act1", nn.ReLU()),
                ("fc2", nn.Linear(8, 4)),
            ]
        )
    )


def _tiny_cnn() -> nn.Module:
    torch.manual_seed(303)
    return nn.Sequential(
        OrderedDict(
            [
                ("conv1", nn.Conv2d(1, 4, kernel_size=3, padding=1)),
                ("act1", nn.ReLU()),
                ("pool1", nn.AvgPool2d(2)),
                ("flat", nn.Flatten()),
                ("fc1", nn.Linear(4 * 6 * 6, 3)),
            ]
        )
    )


_REGISTRY: dict[str, tuple] = {
    "toy_linear": (_toy_linear, (6,)),
    "tiny_mlp": (_tiny_mlp, (6,)),
    "tiny_cnn": (_tiny_cnn, (1, 12, 12)),
}


def registry_names() -> list[str]:
    return sorted(_REGISTRY)


def _finalize(module: nn.Module, name: str, input_shape: tuple[int, ...]) -> LoadedModel:
    module = module.double().eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return LoadedModel(module=module, name=name, input_shape=input_shape)


def load_model(source: str) -> LoadedModel:
    """Resolve a registry name or a bundle path to a ready-to-run model."""
    if source in _REGISTRY:
        builder, input_shape = _REGISTRY[source]
        return _finalize(builder(), source, input_shape)
    if os.path.exists(source):
        try:
            bundle = torch.load(source, map_location="cpu", weights_only=True)
        except Exception as exc:
            raise ConfigError(f"cannot load model bundle {source}: {exc}") from exc
        if not isinstance(bundle, dict) or "registry" not in bundle or "state_dict" not in bundle:
            raise ConfigError(
                f"bundle {source} must be a dict with 'registry' and 'state_dict' keys"
            )
        name = bundle["registry"]
        if name not in _REGISTRY:
            raise ConfigError(
                f"bundle {source} names unknown architecture '{name}'; "
                f"known: {', '.join(registry_names())}"
            )
        builder, input_shape = _REGISTRY[name]
        module = builder()
        try:
            module.load_state_dict({k: v.double() for k, v in bundle["state_dict"].items()})
        except (RuntimeError, AttributeError) as exc:
            raise ConfigError(f"bundle {source} state does not fit '{name}': {exc}") from exc
        return _finalize(module, name, input_shape)
    raise ConfigError(
        f"model source '{source}' is neither a registry name nor a file; "
        f"known names: {', '.join(registry_names())}"
    )


def save_bundle(model: LoadedModel, path: str | os.PathLike) -> None:
    torch.save({"registry": model.name, "state_dict": model.module.state_dict()}, path)


def available_layers(module: nn.Module) -> list[str]:
    """Names of the leaf submodules, in graph order."""
    return [name for name, m in module.named_modules() if name and not list(m.children())]
