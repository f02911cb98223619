"""The gated serving loop, end to end on a temporary store.

A query first passes an autoencoder anomaly gate.  Gated-out inputs never
touch the protected classifier.  Served inputs get a bare label plus a set of
locally-privatized heatmaps; a human reviewer then approves or rejects each
case, and only approved cases can release anything.

Run:  python3 demos/serving_pipeline.py
"""

import tempfile
from pathlib import Path

from dpxlab import CaseStore, LdpParams, Pipeline, PipelineConfig, release_artifact, review_decide
from dpxlab.nn import (
    NetworkSpec,
    TrainConfig,
    make_synthetic_images,
    ood_uniform_images,
    train,
    train_autoencoder,
)

SIZE = 12

x, y = make_synthetic_images(240, size=SIZE, n_classes=3, seed=11)
classifier = train(
    x,
    y,
    NetworkSpec(
        input_shape=(1, SIZE, SIZE),
        layers=(
            {"kind": "flatten"},
            {"kind": "dense", "in_features": SIZE * SIZE, "out_features": 24},
            {"kind": "relu"},
            {"kind": "dense", "in_features": 24, "out_features": 3},
        ),
        output_classes=3,
    ),
    TrainConfig(epochs=6, batch_size=32, lr=0.05, seed=3),
)
gate = train_autoencoder(
    x,
    NetworkSpec(
        input_shape=(1, SIZE, SIZE),
        layers=(
            {"kind": "flatten"},
            {"kind": "dense", "in_features": SIZE * SIZE, "out_features": 12},
            {"kind": "relu"},
            {"kind": "dense", "in_features": 12, "out_features": SIZE * SIZE},
        ),
        output_classes=SIZE * SIZE,
    ),
    TrainConfig(epochs=30, batch_size=32, lr=0.1, seed=4),
)

root = Path(tempfile.mkdtemp(prefix="dpxlab-demo-"))
store = CaseStore(root / "store")
pipe = Pipeline(
    classifier,
    gate,
    store,
    PipelineConfig(ldp_params=LdpParams(epsilon=80.0, cell_size=3), kappa=0.15),
)

print("1. an out-of-distribution query is refused at the gate")
ood = ood_uniform_images(1, size=SIZE, seed=2)[0]
record = pipe.run_case(ood, seed=0)
print(f"   status={record.status}  gate mse={record.gate.mse:.3f} (threshold {record.gate.threshold})")
print(f"   label released: {record.label}")
print(f"   protected-model queries so far: {pipe.model_forward_count}")

print("\n2. an in-distribution query is served label-only")
probe = make_synthetic_images(1, size=SIZE, n_classes=3, seed=77)[0][0]
record = pipe.run_case(probe, seed=1)
print(f"   status={record.status}  label={record.label}")
for c in record.candidates:
    word = "eliminated" if c.eliminated else "kept"
    print(f"   candidate {c.explainer_id:22s} ssim={c.ssim_score:.3f}  {word}")
print(f"   ranked survivors: {list(record.top_k)}")

print("\n3. nothing leaves the store before review")
try:
    release_artifact(store, record.case_id)
except Exception as exc:
    print(f"   release refused: {exc}")

print("\n4. after approval the label and surviving maps are handed out")
review_decide(store, record.case_id, "approve")
artifact = release_artifact(store, record.case_id, out_dir=root / "released")
print(f"   released label {artifact.label} with maps {sorted(artifact.explanations)}")
print(f"   bundle on disk: {sorted(p.name for p in (root / 'released').iterdir())}")

print(f"\ncase log: {store.log_path}")
