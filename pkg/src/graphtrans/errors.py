class ContractError(ValueError):
    """A documented precondition was violated."""


class DimensionError(ContractError):
    """Operand shapes are incompatible."""


class SizeGuardError(ContractError):
    """Input too large for an exhaustive routine."""
