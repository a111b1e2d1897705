"""Exception hierarchy. Every structured failure raises a subclass of HistomapError."""


class HistomapError(Exception):
    """Base class for all errors raised by this package."""


class MorphologyError(HistomapError):
    """Degenerate contour: fewer than 3 vertices or zero perimeter."""


class ParseError(HistomapError):
    """Malformed or truncated input document."""


class SchemaError(HistomapError):
    """Structurally valid document with content outside the schema."""

    def __init__(self, message, record_id=None):
        super().__init__(message)
        self.record_id = record_id


class SerializationError(HistomapError):
    """Value that cannot be represented in the canonical output format."""


class TaggingError(HistomapError):
    """Cell centroid outside the slide bounds."""

    def __init__(self, message, cell_id=None):
        super().__init__(message)
        self.cell_id = cell_id


class NoTargetError(HistomapError):
    """Rectangle search invoked with an empty target list."""


class DistanceUndefined(HistomapError):
    """No eligible source cell exists for a distance feature."""


class ParameterError(HistomapError):
    """Invalid numeric parameter."""


class GenerationError(HistomapError):
    """Synthetic slide config that cannot be realized."""


class SelectionError(HistomapError):
    """Feature selection on degenerate input (single class, all-constant matrix)."""


class StratificationError(HistomapError):
    """Cross-validation split whose training part lacks a class."""


class TrainError(HistomapError):
    """Classifier training on degenerate labels."""


class MetricError(HistomapError):
    """Metric computation on incompatible inputs."""


class AssemblyError(HistomapError):
    """Feature vector that does not satisfy the registry contract."""
