"""Exception hierarchy shared across the package.

Argument misuse raises plain ValueError; these classes mark failures that
map onto distinct CLI exit codes (config=2, data=3, training=4).
"""


class RfclassError(Exception):
    """Base class for rfclass failures."""


class ConfigError(RfclassError):
    """Invalid or inconsistent pipeline configuration."""


class IngestError(RfclassError):
    """Malformed input data; the message names the offending line/column."""


class PipelineError(RfclassError):
    """A data-preparation stage cannot proceed (e.g. everything pruned)."""


class FitError(PipelineError):
    """A transform cannot be fitted (e.g. constant feature)."""


class TrainingError(RfclassError):
    """Model training failed or produced an invalid ensemble."""
