"""Desk-scale experiment driver: private-vs-nonprivate explanation audit.

One call trains a non-private reference classifier and a grid of DP-SGD
counterparts on seeded synthetic blobs, explains every evaluation example
under each model, writes the whole workspace (tensors plus manifest), and
produces the report tables.  Everything is derived from one integer seed, so
two runs into different directories emit byte-identical reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .explainers import compute_attribution
from .metrics import MetricConfig
from .nn import (
    NetworkSpec,
    TrainConfig,
    forward_with_activations,
    make_blobs,
    predict_label,
    train,
)
from .report import ReportPaths, generate_report
from .tensorio import Manifest, ManifestEntry, save_manifest, write_tensor


@dataclass(frozen=True)
class ExperimentConfig:
    """Knobs for the desk-scale run; defaults finish in well under a minute."""

    epsilons: tuple[float, ...] = (0.4, 1.0, 4.0, 10.0)
    explainers: tuple[str, ...] = ("saliency", "smoothgrad")
    n_train: int = 600
    n_eval: int = 150
    n_features: int = 24
    n_classes: int = 3
    spread: float = 3.0  # overlap enough that the privacy noise shows up in accuracy
    hidden: tuple[int, ...] = (32, 16)
    epochs: int = 12
    batch_size: int = 64
    lr: float = 0.05
    delta: float = 1e-3
    clip_norm: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.epsilons or any(e <= 0 for e in self.epsilons):
            raise ConfigError("epsilons must be a non-empty tuple of positives")
        if not self.explainers:
            raise ConfigError("need at least one explainer")
        if self.n_train < self.batch_size or self.n_eval < 1:
            raise ConfigError("dataset sizes too small for the batch size")


@dataclass(frozen=True)
class ExperimentResult:
    manifest_path: Path
    report: ReportPaths
    accuracies: dict = field(default_factory=dict)


def _mlp_spec(cfg: ExperimentConfig) -> NetworkSpec:
    layers = []
    width = cfg.n_features
    for h in cfg.hidden:
        layers.append({"kind": "dense", "in_features": width, "out_features": h})
        layers.append({"kind": "relu"})
        width = h
    layers.append({"kind": "dense", "in_features": width, "out_features": cfg.n_classes})
    return NetworkSpec(
        input_shape=(cfg.n_features,),
        layers=tuple(layers),
        output_classes=cfg.n_classes,
    )


def _model_grid(cfg: ExperimentConfig):
    yield "baseline", None, TrainConfig(
        epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr, seed=cfg.seed
    )
    for eps in cfg.epsilons:
        yield f"dp-eps-{eps:g}", eps, TrainConfig(
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            lr=cfg.lr,
            seed=cfg.seed,
            mode="dp",
            epsilon=eps,
            delta=cfg.delta,
            clip_norm=cfg.clip_norm,
        )


def run_experiment(workspace, cfg: ExperimentConfig = ExperimentConfig()) -> ExperimentResult:
    """Train the model grid, export the audit workspace, build the report."""
    root = Path(workspace)
    tensor_dir = root / "tensors"
    tensor_dir.mkdir(parents=True, exist_ok=True)

    # one blob draw shared by train and eval so both see the same geometry
    x_all, y_all = make_blobs(
        cfg.n_train + cfg.n_eval,
        n_features=cfg.n_features,
        n_classes=cfg.n_classes,
        seed=cfg.seed,
        spread=cfg.spread,
    )
    x_train, y_train = x_all[: cfg.n_train], y_all[: cfg.n_train]
    x_eval, y_eval = x_all[cfg.n_train :], y_all[cfg.n_train :]

    entries = []

    def emit(logical_name, values, role, model_id, **meta):
        rel = Path("tensors") / (logical_name.replace("/", "__") + ".dpxt")
        write_tensor(np.asarray(values, dtype=np.float64), root / rel)
        entries.append(
            ManifestEntry(
                logical_name=logical_name,
                file_path=str(rel),
                role=role,
                model_id=model_id,
                **meta,
            )
        )

    emit("inputs", x_eval, "input", "dataset")
    emit("labels", y_eval.astype(np.float64), "label", "dataset")

    spec = _mlp_spec(cfg)
    accuracies = {}
    for model_id, epsilon, train_cfg in _model_grid(cfg):
        snapshot = train(x_train, y_train, spec, train_cfg)
        meta = {} if epsilon is None else {"epsilon": epsilon}

        predictions = np.array([predict_label(snapshot, x) for x in x_eval])
        accuracies[model_id] = float(np.mean(predictions == y_eval))
        emit(f"predictions/{model_id}", predictions.astype(np.float64),
             "prediction", model_id, **meta)

        layer_stacks: dict[str, list[np.ndarray]] = {}
        for x in x_eval:
            _, acts = forward_with_activations(snapshot, x)
            for layer_id, values in acts:
                layer_stacks.setdefault(layer_id, []).append(values.ravel())
        for layer_id, rows in layer_stacks.items():
            emit(f"activations/{model_id}/{layer_id}", np.stack(rows),
                 "activation", model_id, layer_id=layer_id, **meta)

        for k, explainer_id in enumerate(cfg.explainers):
            maps = []
            for i, x in enumerate(x_eval):
                target = int(predictions[i])
                draw_seed = cfg.seed * 1_000_003 + k * cfg.n_eval + i
                maps.append(
                    compute_attribution(
                        snapshot, x, target, explainer_id, rng=draw_seed
                    ).values
                )
            emit(f"attributions/{model_id}/{explainer_id}", np.stack(maps),
                 "attribution", model_id, explainer_id=explainer_id, **meta)

    manifest = Manifest(entries=entries, base_dir=str(root))
    manifest_path = root / "manifest.json"
    save_manifest(manifest, manifest_path)

    report = generate_report(manifest, root / "report", cfg=MetricConfig())
    return ExperimentResult(
        manifest_path=manifest_path, report=report, accuracies=accuracies
    )
