"""Exception types shared across the toolkit."""


class MapMatchError(Exception):
    """Base class for all toolkit errors."""


class ParseError(MapMatchError):
    """A file could not be parsed into the expected structure."""


class ValidationError(MapMatchError):
    """Parsed data violates a structural invariant."""


class UnknownEdge(MapMatchError):
    """An edge id does not exist in the road network."""


class ExplosionGuard(MapMatchError):
    """Route enumeration exceeded the configured cap."""


class InsufficientPoints(MapMatchError):
    """A segment carries fewer generated points than the selection minimum."""


class DegenerateBounds(MapMatchError):
    """Normalization bounds collapse to a single value on some axis."""


class TooLong(MapMatchError):
    """Input sequence exceeds the model's maximum length."""


class LabelOutOfRange(MapMatchError):
    """A training label falls outside the valid class range."""


class EmptyMask(MapMatchError):
    """Fine-tuning was requested with no trainable components."""


class NoCandidates(MapMatchError):
    """A trajectory point has no road candidate within the search radius."""

    def __init__(self, point_index: int):
        super().__init__(f"no candidate edge within radius for point {point_index}")
        self.point_index = point_index


class LengthMismatch(MapMatchError):
    """Two sequences that must have equal length do not."""


class ReferenceTooShort(MapMatchError):
    """The reference sequence is shorter than the maximum n-gram order."""


class NoCapture(MapMatchError):
    """Attention analysis requested but no attention records were captured."""


class JoinError(MapMatchError):
    """Prediction and truth sets do not cover the same trajectory ids."""

    def __init__(self, missing: list[str]):
        super().__init__(f"trajectory ids missing from join: {sorted(missing)}")
        self.missing = sorted(missing)


class VersionError(MapMatchError):
    """A checkpoint file has an unknown format version or corrupt header."""
