"""Network assembly, snapshots, and the gradient extraction ops.

A model is a ``NetworkSpec`` (architecture as plain data, JSON-serializable)
plus a list of weight arrays, frozen together into a ``ModelSnapshot``.
Snapshots are value objects: training produces new ones, nothing mutates them,
and ``save_snapshot``/``load_snapshot`` move them across processes losslessly.

Layer ids are ``kind + position`` ("conv2d0", "relu1", ...).  The extraction
ops are what the rest of the toolkit consumes: ReLU activations for
representation comparisons, exact input gradients for explainers, and
gradients at intermediate outputs for class-activation maps.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, CorruptError, ShapeError
from ..tensorio import read_tensor, write_tensor
from .layers import build_layer


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description: input shape, layer dicts, output width."""

    input_shape: tuple[int, ...]
    layers: tuple[dict, ...]
    output_classes: int

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(dict(l) for l in self.layers))
        if not self.layers:
            raise ConfigError("network needs at least one layer")
        if any(d <= 0 for d in self.input_shape):
            raise ConfigError(f"bad input shape {self.input_shape}")
        if self.output_classes < 1:
            raise ConfigError("output_classes must be at least 1")
        shape = self.input_shape
        for i, spec in enumerate(self.layers):
            try:
                shape = build_layer(spec).out_shape(shape)
            except ShapeError as exc:
                raise ConfigError(f"layer {i} ({spec.get('kind')}): {exc}") from exc
        if shape != (self.output_classes,):
            raise ConfigError(
                f"network produces shape {shape}, expected ({self.output_classes},)"
            )

    def layer_ids(self) -> list[str]:
        return [f"{spec['kind']}{i}" for i, spec in enumerate(self.layers)]

    def to_json(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "layers": [dict(l) for l in self.layers],
            "output_classes": self.output_classes,
        }

    @staticmethod
    def from_json(doc: dict) -> "NetworkSpec":
        try:
            return NetworkSpec(
                input_shape=tuple(doc["input_shape"]),
                layers=tuple(doc["layers"]),
                output_classes=int(doc["output_classes"]),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad network spec document: {exc}") from exc


def init_weights(spec: NetworkSpec, rng: np.random.Generator) -> list[np.ndarray]:
    """Fresh parameter arrays for every layer, in layer order."""
    weights = []
    for layer_spec in spec.layers:
        weights.extend(build_layer(layer_spec).init_params(rng))
    return weights


@dataclass(frozen=True)
class ModelSnapshot:
    """Immutable (architecture, weights, provenance) triple."""

    spec: NetworkSpec
    weights: tuple[np.ndarray, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        frozen = []
        for w in self.weights:
            arr = np.array(w, dtype=np.float64)
            arr.flags.writeable = False
            frozen.append(arr)
        object.__setattr__(self, "weights", tuple(frozen))
        expected = sum(
            len(build_layer(l).init_params(np.random.default_rng(0)))
            for l in self.spec.layers
        )
        if len(self.weights) != expected:
            raise ConfigError(
                f"snapshot has {len(self.weights)} weight arrays, spec needs {expected}"
            )

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.spec.to_json(), sort_keys=True).encode())
        for w in self.weights:
            h.update(w.tobytes())
        return h.hexdigest()


class _Runner:
    """Per-spec layer objects plus the weight slicing table."""

    def __init__(self, spec: NetworkSpec):
        self.spec = spec
        self.layers = [build_layer(l) for l in spec.layers]
        self.ids = spec.layer_ids()
        rng = np.random.default_rng(0)
        self.slices = []
        start = 0
        for layer in self.layers:
            n = len(layer.init_params(rng))
            self.slices.append(slice(start, start + n))
            start += n
        self.n_weight_arrays = start


_RUNNERS: dict[int, _Runner] = {}


def _runner(spec: NetworkSpec) -> _Runner:
    key = id(spec)
    runner = _RUNNERS.get(key)
    if runner is None or runner.spec is not spec:
        runner = _Runner(spec)
        _RUNNERS[key] = runner
    return runner


def _check_input(spec: NetworkSpec, x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape != spec.input_shape:
        raise ShapeError(f"input shape {arr.shape}, model expects {spec.input_shape}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError("input contains non-finite values")
    return arr


def forward_trace(model: ModelSnapshot, x) -> tuple[np.ndarray, list]:
    """Logits plus per-layer (cache, output) records for a later backward pass."""
    arr = _check_input(model.spec, x)
    runner = _runner(model.spec)
    traces = []
    out = arr
    for layer, sl in zip(runner.layers, runner.slices):
        out, cache = layer.forward(out, list(model.weights[sl]))
        traces.append((cache, out))
    return out, traces


def backward_trace(
    model: ModelSnapshot, dlogits: np.ndarray, traces: list
) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    """Backpropagate ``dlogits``; returns (dx, weight grads, per-layer output grads).

    The i-th entry of the output-grad list is the gradient of the scalar
    objective with respect to layer i's output.
    """
    runner = _runner(model.spec)
    grads: list[np.ndarray | None] = [None] * runner.n_weight_arrays
    dout_per_layer: list[np.ndarray | None] = [None] * len(runner.layers)
    dout = dlogits
    for i in range(len(runner.layers) - 1, -1, -1):
        dout_per_layer[i] = dout
        layer = runner.layers[i]
        sl = runner.slices[i]
        cache, _ = traces[i]
        dout, dparams = layer.backward(dout, cache, list(model.weights[sl]))
        grads[sl] = dparams
    return dout, grads, dout_per_layer


def forward(model: ModelSnapshot, x) -> np.ndarray:
    """Logits for one example."""
    logits, _ = forward_trace(model, x)
    return logits


def predict_label(model: ModelSnapshot, x) -> int:
    """Argmax class (lowest index wins ties)."""
    return int(np.argmax(forward(model, x)))


def forward_with_activations(
    model: ModelSnapshot, x
) -> tuple[np.ndarray, list[tuple[str, np.ndarray]]]:
    """Logits plus the output of every ReLU layer, in depth order."""
    logits, traces = forward_trace(model, x)
    runner = _runner(model.spec)
    acts = [
        (runner.ids[i], traces[i][1])
        for i, layer in enumerate(runner.layers)
        if layer.kind == "relu"
    ]
    return logits, acts


def input_gradient(model: ModelSnapshot, x, class_index: int) -> np.ndarray:
    """Exact gradient of the class logit with respect to the input."""
    logits, traces = forward_trace(model, x)
    dlogits = _onehot_like(logits, class_index)
    dx, _, _ = backward_trace(model, dlogits, traces)
    return dx


def layer_sensitivity(
    model: ModelSnapshot, x, class_index: int, layer_id: str
) -> tuple[np.ndarray, np.ndarray]:
    """(activation, gradient of the class logit w.r.t. that activation)."""
    runner = _runner(model.spec)
    if layer_id not in runner.ids:
        raise ConfigError(f"no layer '{layer_id}' in {runner.ids}")
    idx = runner.ids.index(layer_id)
    logits, traces = forward_trace(model, x)
    dlogits = _onehot_like(logits, class_index)
    _, _, dout_per_layer = backward_trace(model, dlogits, traces)
    return traces[idx][1], dout_per_layer[idx]


def _onehot_like(logits: np.ndarray, class_index: int) -> np.ndarray:
    if not 0 <= class_index < logits.shape[0]:
        raise ConfigError(f"class index {class_index} out of range {logits.shape[0]}")
    d = np.zeros_like(logits)
    d[class_index] = 1.0
    return d


def softmax_cross_entropy_grad(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Loss value and dloss/dlogits for one example."""
    shifted = logits - logits.max()
    log_z = np.log(np.sum(np.exp(shifted)))
    log_probs = shifted - log_z
    if not 0 <= label < logits.shape[0]:
        raise ConfigError(f"label {label} out of range {logits.shape[0]}")
    grad = np.exp(log_probs)
    grad[label] -= 1.0
    return -float(log_probs[label]), grad


def save_snapshot(model: ModelSnapshot, directory: str | os.PathLike) -> None:
    """Serialize to a directory: spec.json, provenance.json, weights/*.dpxt."""
    os.makedirs(directory, exist_ok=True)
    wdir = os.path.join(directory, "weights")
    os.makedirs(wdir, exist_ok=True)
    with open(os.path.join(directory, "spec.json"), "w", encoding="utf-8") as fh:
        json.dump(model.spec.to_json(), fh, indent=2)
        fh.write("\n")
    prov = dict(model.provenance)
    prov["digest"] = model.digest()
    prov["n_weight_arrays"] = len(model.weights)
    with open(os.path.join(directory, "provenance.json"), "w", encoding="utf-8") as fh:
        json.dump(prov, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for i, w in enumerate(model.weights):
        write_tensor(w, os.path.join(wdir, f"w{i:03d}.dpxt"))


def load_snapshot(directory: str | os.PathLike) -> ModelSnapshot:
    try:
        with open(os.path.join(directory, "spec.json"), "r", encoding="utf-8") as fh:
            spec = NetworkSpec.from_json(json.load(fh))
        with open(os.path.join(directory, "provenance.json"), "r", encoding="utf-8") as fh:
            prov = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptError(f"cannot load snapshot from {directory}: {exc}") from exc
    n = prov.get("n_weight_arrays")
    weights = []
    i = 0
    while True:
        path = os.path.join(directory, "weights", f"w{i:03d}.dpxt")
        if not os.path.exists(path):
            break
        weights.append(read_tensor(path))
        i += 1
    if n is not None and n != len(weights):
        raise CorruptError(f"snapshot lists {n} weight arrays, found {len(weights)}")
    model = ModelSnapshot(spec=spec, weights=tuple(weights), provenance=prov)
    stored = prov.get("digest")
    if stored is not None and stored != model.digest():
        raise CorruptError("snapshot digest mismatch")
    return model
