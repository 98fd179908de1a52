"""Exception hierarchy. Every error carries a short machine code used by the CLI."""


class ContractError(ValueError):
    """A documented precondition was violated."""

    code = "CONTRACT"


class DimensionError(ContractError):
    """Tensor extents do not line up."""

    code = "DIM"


class RetrievalError(ContractError):
    """Memory lookup could not be satisfied (e.g. empty bank)."""

    code = "RETRIEVAL"


class FormatError(ContractError):
    """A binary container file is malformed."""

    code = "FORMAT"


class ConfigError(ContractError):
    """Unknown or ill-typed configuration key."""

    code = "CONFIG"


class TrainingDiverged(RuntimeError):
    """A training loss became non-finite."""

    code = "DIVERGED"


class IOFailure(ContractError):
    """An input file is missing or unreadable, or an output cannot be written."""

    code = "IO"
