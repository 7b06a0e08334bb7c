"""Exception types shared across the package."""


class MappingError(Exception):
    """Base class for all somap errors."""


class InvalidInputError(MappingError, ValueError):
    """An operation received arguments outside its domain."""


class ResourceLimitError(MappingError):
    """A guard against materializing something too large fired."""


class GenerationError(MappingError):
    """Procedural environment generation could not satisfy its spec."""


class ConfigMismatchError(InvalidInputError):
    """Two maps with different grid configurations were combined."""
