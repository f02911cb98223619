"""Where inside the network does privacy noise land?

Compares hidden-layer representations of a non-private and a DP model with
kernel tools: an HSIC independence test (are the two layers related at all?),
CKA alignment per layer, the label-deconfounded variant, and the cluster
medians used to summarize deep stacks.

Run:  python3 demos/representation_shift.py
"""

import numpy as np

from dpxlab import aggregate_layer_similarity, cka, dcka, hsic_gamma_test
from dpxlab.nn import NetworkSpec, TrainConfig, forward_with_activations, make_blobs, train

x, y = make_blobs(800, n_features=24, n_classes=3, seed=3, spread=3.0)
x_train, y_train = x[:640], y[:640]
x_probe, y_probe = x[640:740], y[640:740]

spec = NetworkSpec(
    input_shape=(24,),
    layers=(
        {"kind": "dense", "in_features": 24, "out_features": 32},
        {"kind": "relu"},
        {"kind": "dense", "in_features": 32, "out_features": 16},
        {"kind": "relu"},
        {"kind": "dense", "in_features": 16, "out_features": 3},
    ),
    output_classes=3,
)
cfg = dict(epochs=12, batch_size=64, lr=0.05, seed=3)
baseline = train(x_train, y_train, spec, TrainConfig(**cfg))
private = train(x_train, y_train, spec, TrainConfig(**cfg, mode="dp", epsilon=1.0))


def activations(model):
    stacks = {}
    for xi in x_probe:
        _, acts = forward_with_activations(model, xi)
        for layer_id, values in acts:
            stacks.setdefault(layer_id, []).append(np.ravel(values))
    return {k: np.stack(v) for k, v in stacks.items()}


acts_base = activations(baseline)
acts_priv = activations(private)
layer_ids = sorted(acts_base)

print("per-layer comparison, baseline vs dp epsilon=1.0")
print(f"{'layer':>8} {'hsic p':>10} {'cka':>8} {'dcka':>8}")
one_hot = np.eye(3)[y_probe]
per_layer = []
for depth, layer_id in enumerate(layer_ids):
    a, b = acts_base[layer_id], acts_priv[layer_id]
    test = hsic_gamma_test(a, b)
    plain = cka(a, b)
    # partial out the label signal both models share
    deconf = dcka(a, b, one_hot)
    per_layer.append((depth, plain))
    print(f"{layer_id:>8} {test.p_value:10.2e} {plain:8.3f} {deconf:8.3f}")

medians = aggregate_layer_similarity(per_layer, n_clusters=2)
print("\ndepth-cluster medians (shallow, deep):")
for cluster_idx, median in medians:
    print(f"  cluster {cluster_idx}: median cka {median:.3f}")
