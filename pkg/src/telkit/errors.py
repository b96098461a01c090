"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: usage problems exit 1, data problems
(bad files, bad manifests, bad configs) exit 2, numerical failures exit 3.
"""


class TelkitError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(TelkitError):
    """Operands with incompatible shapes; message names both shapes."""


class NumericalError(TelkitError):
    """A NaN/Inf showed up where only finite values are allowed."""


class GraphError(TelkitError):
    """Autodiff misuse: non-scalar loss, double backward, disconnected loss."""


class ConfigError(TelkitError):
    """Inconsistent or unparseable configuration."""


class DataError(TelkitError):
    """Bad input data: missing files, malformed manifests, empty datasets."""


class AudioDecodeError(DataError):
    """A WAV file could not be decoded; message carries the path."""


class CheckpointError(DataError):
    """Corrupt, truncated, or incompatible checkpoint file."""


class NoValidTriplets(TelkitError):
    """Raised by mining when the batch cannot structurally form any triplet
    (no class has two members, or there is no second class).  Distinct from
    an empty mining result, which just means every candidate already
    satisfies the margin."""
