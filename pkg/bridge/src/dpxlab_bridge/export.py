"""Extraction jobs: model + dataset in, tensors + manifest out.

The bridge is write-only with respect to its output workspace.  Every file it
produces must be new; an existing path at a target location aborts the export
before anything is damaged.  All tensors go through the shared container
format, and a single manifest written once at the end describes the whole
export, including the warnings for anything that was skipped.

A dataset directory holds ``inputs.dpxt`` of shape (n, *example_shape) and
optionally ``labels.dpxt`` of shape (n,) with class indices stored as floats.
"""

from __future__ import annotations

import json
import os
import warnings as _warnings
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from . import explainers as ex
from .container import read_tensor, write_tensor
from .errors import ConfigError, StateError
from .models import LoadedModel, available_layers, load_model


@dataclass(frozen=True)
class ExportJob:
    """Everything one export run needs, as plain data."""

    model: str
    dataset_dir: str
    out_dir: str
    layers: tuple[str, ...] = ()
    explainers: tuple[str, ...] = ()
    batch_size: int = 32
    model_id: str | None = None
    epsilon: float | None = None
    seed: int = 0
    sensitivities: bool = False
    sensitivity_reference: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "explainers", tuple(self.explainers))
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")


@dataclass(frozen=True)
class BridgeManifest:
    """What an export produced: manifest path plus its parsed contents."""

    path: str
    entries: tuple[dict, ...] = ()
    warnings: tuple[dict, ...] = ()


def _fresh(path: str) -> str:
    if os.path.exists(path):
        raise StateError(f"refusing to overwrite existing file {path}")
    return path


class _Session:
    """One export run: accumulates tensors and entries, writes one manifest."""

    def __init__(self, job: ExportJob):
        self.job = job
        self.loaded = load_model(job.model)
        self.model_id = job.model_id or self.loaded.name
        self.inputs = self._read_inputs()
        self.labels = self._read_labels()
        os.makedirs(job.out_dir, exist_ok=True)
        self.entries: list[dict] = []
        self.warnings: list[dict] = []
        self._wrote_predictions = False

    def _read_inputs(self) -> torch.Tensor:
        path = os.path.join(self.job.dataset_dir, "inputs.dpxt")
        if not os.path.exists(path):
            raise ConfigError(f"dataset {self.job.dataset_dir} has no inputs.dpxt")
        arr = read_tensor(path)
        want = self.loaded.input_shape
        if arr.ndim != len(want) + 1 or tuple(arr.shape[1:]) != want:
            raise ConfigError(
                f"inputs shape {arr.shape} does not fit model "
                f"'{self.loaded.name}' which takes (n, {', '.join(map(str, want))})"
            )
        if len(arr) == 0:
            raise ConfigError("dataset has zero examples")
        return torch.from_numpy(arr.astype(np.float64, copy=False))

    def _read_labels(self) -> np.ndarray | None:
        path = os.path.join(self.job.dataset_dir, "labels.dpxt")
        if not os.path.exists(path):
            return None
        arr = read_tensor(path)
        if arr.shape != (len(self.inputs),):
            raise ConfigError(
                f"labels shape {arr.shape} does not match {len(self.inputs)} inputs"
            )
        return arr

    def _check_layers(self) -> None:
        known = available_layers(self.loaded.module)
        unknown = [l for l in self.job.layers if l not in known]
        if unknown:
            raise ConfigError(
                f"unknown layer(s) {', '.join(unknown)} in model "
                f"'{self.loaded.name}'; available: {', '.join(known)}"
            )

    def _add_tensor(
        self, logical_name: str, arr: np.ndarray, role: str, model_id: str | None = None, **tags
    ) -> None:
        file_name = f"{logical_name}.dpxt"
        write_tensor(np.asarray(arr), _fresh(os.path.join(self.job.out_dir, file_name)))
        entry = {
            "logical_name": logical_name,
            "file_path": file_name,
            "role": role,
            "model_id": model_id or self.model_id,
        }
        for key, value in tags.items():
            if value is not None:
                entry[key] = value
        self.entries.append(entry)

    def _batches(self, tensor: torch.Tensor):
        for lo in range(0, len(tensor), self.job.batch_size):
            yield tensor[lo : lo + self.job.batch_size]

    def _predict(self, module: nn.Module) -> np.ndarray:
        out = []
        with torch.no_grad():
            for batch in self._batches(self.inputs):
                out.append(module(batch).argmax(dim=1).numpy())
        return np.concatenate(out)

    def _write_predictions(self, preds: np.ndarray) -> None:
        # Several parts need predictions; only the first writer exports them.
        if self._wrote_predictions:
            return
        self._add_tensor(
            f"{self.model_id}.predictions",
            preds.astype(np.float64),
            "prediction",
            epsilon=self.job.epsilon,
        )
        if self.labels is not None:
            self._add_tensor(
                f"{self.model_id}.labels",
                self.labels.astype(np.float64),
                "label",
                epsilon=self.job.epsilon,
            )
        self._wrote_predictions = True

    def run_activations(self) -> None:
        self._check_layers()
        module = self.loaded.module
        hooks, grabbed = [], {name: [] for name in self.job.layers}
        by_name = dict(module.named_modules())

        def make_hook(name):
            def hook(_m, _inp, out):
                grabbed[name].append(out.detach().flatten(start_dim=1).numpy())

            return hook

        for name in self.job.layers:
            hooks.append(by_name[name].register_forward_hook(make_hook(name)))
        preds = []
        try:
            with torch.no_grad():
                for batch in self._batches(self.inputs):
                    preds.append(module(batch).argmax(dim=1).numpy())
        finally:
            for h in hooks:
                h.remove()
        self._write_predictions(np.concatenate(preds))
        for name in self.job.layers:
            self._add_tensor(
                f"{self.model_id}.{name}.activations",
                np.concatenate(grabbed[name]),
                "activation",
                layer_id=name,
                epsilon=self.job.epsilon,
            )

    def run_attributions(self) -> None:
        unknown = [e for e in self.job.explainers if e not in ex.EXPLAINER_IDS]
        if unknown:
            raise ConfigError(
                f"unknown explainer(s) {', '.join(unknown)}; "
                f"supported: {', '.join(ex.EXPLAINER_IDS)}"
            )
        module = self.loaded.module
        preds = self._predict(module)
        self._write_predictions(preds)
        for explainer_id in self.job.explainers:
            runner, params = self._attribution_runner(explainer_id)
            if runner is None:
                continue
            self._write_params(explainer_id, params)
            for i, x in enumerate(self.inputs):
                values = runner(x, int(preds[i]))
                self._add_tensor(
                    f"{self.model_id}.{explainer_id}.case{i:04d}",
                    values,
                    "attribution",
                    explainer_id=explainer_id,
                    epsilon=self.job.epsilon,
                )

    def _attribution_runner(self, explainer_id: str):
        """Per-explainer closure plus its sidecar params; None means skipped.

        Sampling methods stream one seeded generator across the whole export,
        so a rerun of the same job reproduces every map bit for bit.
        """
        module = self.loaded.module
        if explainer_id == "saliency":
            return (lambda x, c: ex.saliency(module, x, c)), {}
        if explainer_id == "integrated_gradients":
            steps = 50
            return (lambda x, c: ex.integrated_gradients(module, x, c, steps=steps)), {
                "steps": steps
            }
        if explainer_id == "smoothgrad":
            gen = torch.Generator().manual_seed(self.job.seed)
            params = {"n_samples": 25, "noise_fraction": 0.1, "seed": self.job.seed}
            return (
                lambda x, c: ex.smoothgrad(module, x, c, generator=gen)
            ), params
        if explainer_id == "grad_shap":
            gen = torch.Generator().manual_seed(self.job.seed)
            params = {"n_baselines": 8, "n_alpha": 16, "seed": self.job.seed}
            return (lambda x, c: ex.grad_shap(module, x, c, generator=gen)), params
        # grad_cam: probe compatibility once instead of failing per input.
        try:
            ex.grad_cam(module, self.inputs[0], 0)
        except ex.IncompatibleExplainer as exc:
            self._skip(explainer_id, str(exc))
            return None, {}
        cam_layer = [n for n, m in module.named_modules() if isinstance(m, nn.Conv2d)][-1]
        return (lambda x, c: ex.grad_cam(module, x, c)), {"cam_layer": cam_layer}

    def _skip(self, explainer_id: str, reason: str) -> None:
        _warnings.warn(f"skipping {explainer_id} for '{self.loaded.name}': {reason}")
        self.warnings.append({"explainer_id": explainer_id, "reason": reason})

    def _write_params(self, explainer_id: str, params: dict) -> None:
        params_dir = os.path.join(self.job.out_dir, "params")
        os.makedirs(params_dir, exist_ok=True)
        path = _fresh(os.path.join(params_dir, f"{explainer_id}.json"))
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"explainer_id": explainer_id, "params": params}, fh, indent=2)
            fh.write("\n")

    def run_sensitivities(self) -> None:
        """Gradients of the predicted-class logit at each selected layer.

        With a reference model the export is restricted to the inputs where
        the two models' hard predictions agree; those are the only inputs
        where the gradients describe comparable decisions.
        """
        self._check_layers()
        if not self.job.layers:
            raise ConfigError("sensitivity export needs at least one layer")
        module = self.loaded.module
        preds = self._predict(module)
        self._write_predictions(preds)
        keep = np.ones(len(preds), dtype=bool)
        if self.job.sensitivity_reference is not None:
            ref = load_model(self.job.sensitivity_reference)
            if ref.input_shape != self.loaded.input_shape:
                raise ConfigError(
                    f"reference '{ref.name}' takes {ref.input_shape}, "
                    f"model '{self.loaded.name}' takes {self.loaded.input_shape}"
                )
            ref_preds = self._predict(ref.module)
            # The reference is a different model: own id, no epsilon claim.
            ref_id = f"{self.model_id}.reference"
            self._add_tensor(
                f"{ref_id}.predictions",
                ref_preds.astype(np.float64),
                "prediction",
                model_id=ref_id,
            )
            keep = preds == ref_preds
        picked = self.inputs[torch.from_numpy(np.flatnonzero(keep))]
        picked_classes = torch.from_numpy(preds[keep].astype(np.int64))
        grabbed = {name: [] for name in self.job.layers}
        by_name = dict(module.named_modules())
        for lo in range(0, len(picked), self.job.batch_size):
            # Parameters are frozen, so the input must carry requires_grad or
            # the forward pass builds no graph to differentiate through.
            batch = picked[lo : lo + self.job.batch_size].detach().requires_grad_(True)
            classes = picked_classes[lo : lo + self.job.batch_size]
            acts: dict[str, torch.Tensor] = {}
            hooks = []

            def make_hook(name):
                def hook(_m, _inp, out):
                    acts[name] = out

                return hook

            for name in self.job.layers:
                hooks.append(by_name[name].register_forward_hook(make_hook(name)))
            try:
                logits = module(batch)
            finally:
                for h in hooks:
                    h.remove()
            picked_logits = logits.gather(1, classes[:, None]).sum()
            grads = torch.autograd.grad(picked_logits, [acts[n] for n in self.job.layers])
            for name, g in zip(self.job.layers, grads):
                grabbed[name].append(g.flatten(start_dim=1).numpy())
        for name in self.job.layers:
            self._add_tensor(
                f"{self.model_id}.{name}.sensitivities",
                np.concatenate(grabbed[name]),
                "activation",
                layer_id=name,
                epsilon=self.job.epsilon,
            )

    def finish(self) -> BridgeManifest:
        doc = {"entries": self.entries, "warnings": self.warnings}
        path = _fresh(os.path.join(self.job.out_dir, "manifest.json"))
        tmp = f"{path}.tmp.{os.getpid()}"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        os.replace(tmp, path)
        return BridgeManifest(
            path=path, entries=tuple(self.entries), warnings=tuple(self.warnings)
        )


def _run(job: ExportJob, parts: set[str]) -> BridgeManifest:
    session = _Session(job)
    if "activations" in parts:
        session.run_activations()
    if "attributions" in parts:
        session.run_attributions()
    if "sensitivities" in parts:
        session.run_sensitivities()
    return session.finish()


def export_activations(job: ExportJob) -> BridgeManifest:
    """Per-layer flattened activations plus labels and hard predictions."""
    return _run(job, {"activations"})


def export_attributions(job: ExportJob) -> BridgeManifest:
    """One attribution tensor per (input, explainer), with params sidecars."""
    return _run(job, {"attributions"})


def export_sensitivities(job: ExportJob) -> BridgeManifest:
    """Per-layer logit gradients, restricted to matched predictions if a
    reference model is given."""
    return _run(job, {"sensitivities"})


def export_all(job: ExportJob) -> BridgeManifest:
    """Everything the job selects, in one manifest.  This is the CLI path."""
    parts = set()
    if job.layers:
        parts.add("activations")
    if job.explainers:
        parts.add("attributions")
    if job.sensitivities or job.sensitivity_reference is not None:
        parts.add("sensitivities")
    if not parts:
        raise ConfigError("nothing to export: select layers, explainers, or sensitivities")
    return _run(job, parts)
