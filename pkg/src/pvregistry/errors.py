"""Exception hierarchy shared by all pipeline stages."""


class PvRegistryError(Exception):
    """Base class for data and input errors (CLI exit code 1)."""


class DegeneratePolygon(PvRegistryError, ValueError):
    pass


class InvalidGeometry(PvRegistryError, ValueError):
    pass


class ParseError(PvRegistryError, ValueError):
    pass


class SchemaError(PvRegistryError, ValueError):
    pass


class RangeError(PvRegistryError, ValueError):
    pass


class EmptyDataset(PvRegistryError, ValueError):
    pass


class LengthMismatch(PvRegistryError, ValueError):
    pass


class ZeroTruth(PvRegistryError, ValueError):
    pass


class GridMismatch(PvRegistryError, ValueError):
    pass


class TiltOutOfRange(PvRegistryError, ValueError):
    pass


class NonPositiveCapacity(PvRegistryError, ValueError):
    pass


class EmptyMatch(PvRegistryError, ValueError):
    pass


class SpecError(PvRegistryError, ValueError):
    pass


class InvariantViolation(Exception):
    """Internal consistency check failed (CLI exit code 2)."""
