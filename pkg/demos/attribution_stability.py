"""How much does DP-SGD training move a model's explanations?

Trains one non-private and one private classifier on the same synthetic
tabular data, explains both on the same evaluation points, and scores the
explanation pairs: sign disagreement (DS, in percent) and the rank-overlap
score (PIS, a tau in [-1, 1] over the shared positive support).  Ends with
the accept/eliminate verdict the report machinery applies.

Run:  python3 demos/attribution_stability.py
"""

import numpy as np

from dpxlab import MetricConfig, compute_attribution, evaluate_localization, evaluate_pair
from dpxlab.nn import NetworkSpec, TrainConfig, make_blobs, predict_label, train

SEED = 7
EPSILON = 1.0

x, y = make_blobs(700, n_features=24, n_classes=3, seed=SEED, spread=3.0)
x_train, y_train = x[:600], y[:600]
x_eval = x[600:650]

spec = NetworkSpec(
    input_shape=(24,),
    layers=(
        {"kind": "dense", "in_features": 24, "out_features": 32},
        {"kind": "relu"},
        {"kind": "dense", "in_features": 32, "out_features": 3},
    ),
    output_classes=3,
)

print(f"training baseline and dp (epsilon={EPSILON}) models on the same data")
baseline = train(x_train, y_train, spec, TrainConfig(epochs=12, batch_size=64, lr=0.05, seed=SEED))
private = train(
    x_train,
    y_train,
    spec,
    TrainConfig(epochs=12, batch_size=64, lr=0.05, seed=SEED, mode="dp", epsilon=EPSILON),
)
print(f"  dp noise multiplier sigma = {private.provenance['sigma']:.3f}")

# Explain every evaluation point on the class the baseline predicts, so the
# two maps answer the same question.
pairs = []
for i, xi in enumerate(x_eval):
    label = predict_label(baseline, xi)
    if label != predict_label(private, xi):
        continue  # the policy only scores matched predictions
    a = compute_attribution(baseline, xi, label, "saliency")
    b = compute_attribution(private, xi, label, "saliency")
    pairs.append(evaluate_pair(a.values, b.values))

ds_values = [p.ds for p in pairs]
pis_values = [p.pis for p in pairs if p.pis is not None]
print(f"\nscored {len(pairs)} matched-prediction pairs")
print(f"  DS  mean {np.mean(ds_values):6.2f}%   worst {max(ds_values):6.2f}%")
print(f"  PIS mean {np.mean(pis_values):6.3f}   worst {min(pis_values):6.3f}")

verdict = evaluate_localization(pairs, MetricConfig())
print("\nexplainer-level verdict")
print(f"  ds_pass_fraction = {verdict.ds_pass_fraction:.2f}")
print(f"  pis_avg          = {verdict.pis_avg:.3f}")
print(f"  eliminated       = {verdict.eliminated}")
print(f"  localization ok  = {verdict.la_satisfied}")
