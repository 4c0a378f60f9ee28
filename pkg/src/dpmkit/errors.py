"""Exception taxonomy shared across the package.

Plain argument mistakes (bad shapes, negative sigma, empty masks) raise
ValueError; everything that reflects a property of the *data* gets a
dedicated class below so callers can tell usage bugs from domain failures.
"""


class DpmError(Exception):
    """Base class for all domain errors raised by dpmkit."""


class InsufficientDataError(DpmError):
    """Too few usable samples for the requested estimate."""


class InsufficientStaticStructureError(InsufficientDataError):
    """Camera motion requested but no static pixels survive masking."""


class DegenerateGeometryError(DpmError):
    """Input geometry is rank deficient (collinear / coincident points)."""


class DegenerateInputError(DpmError):
    """A normalizer is zero (all-zero cloud, zero median depth, ...)."""


class EmptyTargetError(DpmError):
    """Matching requested against a map with no valid pixels."""


class SceneSpecError(DpmError):
    """Scene description failed validation; message names the field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ArchiveError(DpmError):
    """Container file is malformed; message names the failing entry."""


class UnsupportedVersionError(ArchiveError):
    """Container declares a format version this build cannot read."""
