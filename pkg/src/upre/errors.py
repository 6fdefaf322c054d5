"""Exception types shared across the package.

The CLI maps these onto stable exit codes: config problems exit 2, IO
problems exit 3, version/corruption problems exit 4, verification
failures exit 1.
"""


class UpreError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(UpreError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(UpreError, ValueError):
    """Input outside a function's mathematical domain (zero vector, empty logits...)."""


class InputError(UpreError, ValueError):
    """Malformed caller input (unknown category, empty text, bad box...)."""


class ConfigError(UpreError, ValueError):
    """Invalid or inconsistent configuration."""


class StateError(UpreError, RuntimeError):
    """Operation attempted in an invalid state (missing grad, missing params...)."""


class ContractError(UpreError, RuntimeError):
    """An internal contract was violated (non-scalar objective, bad eps...)."""


class VersionError(UpreError, RuntimeError):
    """Serialized blob is corrupt or from an incompatible format version."""
