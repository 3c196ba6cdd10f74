"""Error kinds raised across the engine.

Every class also derives from ``ValueError`` so existing ``except ValueError``
handlers keep catching them.
"""


class DwcapsError(ValueError):
    """Base class of every error raised by dwcaps_engine."""


class InvalidShapeError(DwcapsError):
    pass


class InvalidRangeError(DwcapsError):
    pass


class ShapeError(DwcapsError):
    pass


class AxisError(DwcapsError):
    pass


class ContractError(DwcapsError):
    pass


class GeometryError(DwcapsError):
    pass


class DomainError(DwcapsError):
    pass


class LabelError(DwcapsError):
    pass


class BuildError(DwcapsError):
    pass


class FormatError(DwcapsError):
    pass


class DatasetError(DwcapsError):
    pass


class SplitError(DwcapsError):
    pass


class CheckpointError(DwcapsError):
    pass


class DivergenceError(DwcapsError):
    """Training produced a non-finite loss."""


class UsageError(DwcapsError):
    """Bad command-line input; the CLI exits with status 1."""
