"""From-scratch networks with exact per-example gradients, DP-SGD, and accounting."""

from .accountant import (
    DEFAULT_ORDERS,
    accountant_epsilon,
    epsilon_from_rdp,
    rdp_subsampled_gaussian,
    sigma_for_epsilon,
)
from .data import make_blobs, make_synthetic_images, ood_uniform_images
from .network import (
    ModelSnapshot,
    NetworkSpec,
    forward,
    forward_with_activations,
    init_weights,
    input_gradient,
    layer_sensitivity,
    load_snapshot,
    predict_label,
    save_snapshot,
)
from .training import (
    TrainConfig,
    ae_reconstruction_error,
    dp_sgd_step,
    evaluate_accuracy,
    sgd_step,
    train,
    train_autoencoder,
)

__all__ = [
    "DEFAULT_ORDERS",
    "ModelSnapshot",
    "NetworkSpec",
    "TrainConfig",
    "accountant_epsilon",
    "ae_reconstruction_error",
    "dp_sgd_step",
    "epsilon_from_rdp",
    "evaluate_accuracy",
    "forward",
    "forward_with_activations",
    "init_weights",
    "input_gradient",
    "layer_sensitivity",
    "load_snapshot",
    "make_blobs",
    "make_synthetic_images",
    "ood_uniform_images",
    "predict_label",
    "rdp_subsampled_gaussian",
    "save_snapshot",
    "sgd_step",
    "sigma_for_epsilon",
    "train",
    "train_autoencoder",
]
