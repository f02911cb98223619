"""Bridge from torch models to the audit toolkit's file formats.

The toolkit trains and audits its own small networks; this package extracts
the same kinds of artifacts (per-layer activations, logit sensitivities,
attribution maps, hard predictions) from external torch models and writes
them in the shared container + manifest formats, so full-scale models can be
analyzed by the same downstream metrics.  The two packages communicate only
through those files.
"""

from .container import parse_tensor, read_tensor, tensor_bytes, write_tensor
from .errors import (
    BridgeError,
    ConfigError,
    CorruptError,
    FormatError,
    StateError,
    UnsupportedError,
)
from .explainers import EXPLAINER_IDS, IncompatibleExplainer, attribute
from .export import (
    BridgeManifest,
    ExportJob,
    export_activations,
    export_all,
    export_attributions,
    export_sensitivities,
)
from .models import LoadedModel, available_layers, load_model, registry_names, save_bundle

__all__ = [
    "BridgeError",
    "BridgeManifest",
    "ConfigError",
    "CorruptError",
    "EXPLAINER_IDS",
    "ExportJob",
    "FormatError",
    "IncompatibleExplainer",
    "LoadedModel",
    "StateError",
    "UnsupportedError",
    "attribute",
    "available_layers",
    "export_activations",
    "export_all",
    "export_attributions",
    "export_sensitivities",
    "load_model",
    "parse_tensor",
    "read_tensor",
    "registry_names",
    "save_bundle",
    "tensor_bytes",
    "write_tensor",
]
