"""Error taxonomy shared across the pipeline.

The CLI maps these onto distinct exit codes, so library code should
raise the most specific class that applies instead of bare ValueError.
"""


class ConfigError(ValueError):
    """Malformed or inconsistent configuration input."""


class InvalidParameterError(ValueError):
    """Parameter outside its documented domain."""


class NumericalDegeneracyError(RuntimeError):
    """Singular or non positive definite matrix where SPD is required."""


class FileFormatError(OSError):
    """File exists but its content does not match the expected format."""
