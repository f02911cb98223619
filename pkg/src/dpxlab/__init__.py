"""dpxlab: audit toolkit for differentially private models.

Library layout:

* ``tensorio``    binary tensor container + experiment manifest
* ``metrics``     attribution stability metrics and the accept/eliminate policy
* ``repsim``      kernel similarity of layer representations (HSIC test, CKA)
* ``nn``          from-scratch networks, DP-SGD training, privacy accountant
* ``explainers``  gradient and game-theoretic attribution methods
* ``ldp``         local-DP heatmap release and the SSIM utility gate
* ``pipeline``    anomaly gate, label-only serving, human review states
* ``report``      CSV/JSON audit reports from a workspace manifest

The names re-exported here are the stable surface; everything else should be
imported from its submodule.
"""

__version__ = "0.1.0"

from . import errors
from .explainers import EXPLAINER_IDS, AttributionMap, compute_attribution
from .experiments import ExperimentConfig, ExperimentResult, run_experiment
from .ldp import (
    LdpExplanation,
    LdpParams,
    elimination_test,
    ldp_apply,
    pixelize,
    quantize_heatmap,
    ssim,
    to_heatmap,
)
from .metrics import (
    LocalizationResult,
    MetricConfig,
    PairEvaluation,
    agreement,
    disagreement_score,
    evaluate_localization,
    evaluate_pair,
    kendall_tau,
    pis,
)
from .pipeline import (
    CaseRecord,
    CaseStore,
    Pipeline,
    PipelineConfig,
    ReleasedArtifact,
    release_artifact,
    review_decide,
)
from .report import ReportPaths, generate_report
from .repsim import (
    IndependenceResult,
    aggregate_layer_similarity,
    cka,
    dcka,
    hsic_gamma_test,
)
from .tensorio import (
    Manifest,
    ManifestEntry,
    load_manifest,
    read_tensor,
    save_manifest,
    write_tensor,
)

__all__ = [
    "AttributionMap",
    "CaseRecord",
    "CaseStore",
    "EXPLAINER_IDS",
    "ExperimentConfig",
    "ExperimentResult",
    "IndependenceResult",
    "LdpExplanation",
    "LdpParams",
    "LocalizationResult",
    "Manifest",
    "ManifestEntry",
    "MetricConfig",
    "PairEvaluation",
    "Pipeline",
    "PipelineConfig",
    "ReleasedArtifact",
    "ReportPaths",
    "__version__",
    "aggregate_layer_similarity",
    "agreement",
    "cka",
    "compute_attribution",
    "dcka",
    "disagreement_score",
    "elimination_test",
    "errors",
    "evaluate_localization",
    "evaluate_pair",
    "generate_report",
    "hsic_gamma_test",
    "kendall_tau",
    "ldp_apply",
    "load_manifest",
    "pis",
    "pixelize",
    "quantize_heatmap",
    "read_tensor",
    "release_artifact",
    "review_decide",
    "run_experiment",
    "save_manifest",
    "ssim",
    "to_heatmap",
    "write_tensor",
]
