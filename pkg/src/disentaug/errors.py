"""Exception hierarchy shared across the toolkit.

Every toolkit error carries a short machine-parsable category so the CLI
can report failures as ``error:<category>: <message>`` on one line.
"""


class ToolkitError(Exception):
    category = "internal"


class ConfigError(ToolkitError):
    category = "config"


class DataError(ToolkitError):
    """Malformed or inconsistent input data (files, labels, splits)."""

    category = "data"


class ShapeError(ToolkitError):
    category = "shape"


class CheckpointError(ToolkitError):
    category = "checkpoint"


class DegenerateInputError(ToolkitError):
    """Input is structurally valid but makes the requested quantity undefined."""

    category = "degenerate-input"


class NonFiniteLossError(ToolkitError):
    category = "non-finite-loss"
