"""Exception taxonomy shared across the toolkit.

Every failure mode callers are expected to handle gets its own class so that
batch drivers and the CLI can map errors to stable machine-readable codes.
"""


class DpxlabError(Exception):
    """Base class for all toolkit errors."""

    code = "error"


class FormatError(DpxlabError):
    """Byte stream is not a tensor container (bad magic)."""

    code = "format"


class UnsupportedError(DpxlabError):
    """Container version or dtype code this build does not understand."""

    code = "unsupported"


class CorruptError(DpxlabError):
    """Container is structurally valid but its content is damaged."""

    code = "corrupt"


class ManifestError(DpxlabError):
    """Experiment manifest failed validation; message names the entry."""

    code = "manifest"


class ShapeError(DpxlabError):
    """Operands have incompatible shapes."""

    code = "shape"


class UndefinedError(DpxlabError):
    """The requested statistic is undefined for this input."""

    code = "undefined"


class ConfigError(DpxlabError):
    """Invalid configuration value or an unsatisfiable setting."""

    code = "config"


class DegenerateKernelError(DpxlabError):
    """Kernel bandwidth collapsed (all pairwise distances zero)."""

    code = "degenerate_kernel"


class ScaleError(DpxlabError):
    """Problem size exceeds what an exact method can enumerate."""

    code = "scale"


class StateError(DpxlabError):
    """Operation not allowed in the record's current review state."""

    code = "state"


class NotFoundError(DpxlabError):
    """No record with the given id."""

    code = "not_found"


class ReportInputError(DpxlabError):
    """Report inputs are incomplete; message lists the missing entries."""

    code = "report_input"
