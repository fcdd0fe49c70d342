"""Exception taxonomy shared across the package.

The CLI maps these onto disjoint exit codes, so every raise site should
pick the class that matches the failure category, not a bare ValueError.
"""


class RcnnLabError(Exception):
    """Base class for all package errors."""


class ShapeError(RcnnLabError):
    """Tensor dimensions disagree with an operation's contract."""


class ContractError(RcnnLabError):
    """A non-shape precondition was violated (empty axis, zero length, ...)."""


class ConfigError(RcnnLabError):
    """Invalid model spec, training config, or CLI flag combination."""


class DataError(RcnnLabError):
    """Malformed input data: bad token ids, labels, files, or file contents."""


class CheckpointError(RcnnLabError):
    """Checkpoint file is corrupt, truncated, or from an unknown version."""


class NumericError(RcnnLabError):
    """Training produced a non-finite value and was aborted."""


class GradCheckError(RcnnLabError):
    """Finite-difference verification could not be completed."""
