"""Exception types shared across the package."""


class DocFocusError(ValueError):
    """Base class for all package-specific errors."""


class CapacityExceeded(DocFocusError):
    """Requested content does not fit the page or header band."""


class SpanTooShort(DocFocusError):
    """Token sequence shorter than the minimum corruption window."""


class MalformedSample(DocFocusError):
    """Span-corruption sample violates the sentinel layout rules."""


class ShapeError(DocFocusError):
    """Tensor shape incompatible with the operation."""


class MaskError(DocFocusError):
    """Attention mask leaves no attendable positions."""


class ConfigError(DocFocusError):
    """Invalid or inconsistent configuration."""


class StageError(DocFocusError):
    """Checkpoint stage does not satisfy the pipeline ordering."""


class EmptyTarget(DocFocusError):
    """Loss requested on an empty target sequence."""


class EmptyEval(DocFocusError):
    """Metric requested on an empty record list."""
