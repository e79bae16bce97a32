"""Exception hierarchy shared by every module."""


class FingerprintError(Exception):
    """Base class for all errors raised by weightprint."""


class FormatError(FingerprintError, ValueError):
    """A container or vocabulary file does not follow the on-disk format."""


class ValidationError(FingerprintError, ValueError):
    """An object violates a structural invariant (shape, finiteness, ranges)."""


class VocabError(ValidationError):
    """A vocabulary map is not a bijection onto 0..V-1."""


class DegenerateKernelError(FingerprintError, ArithmeticError):
    """A kernel self-similarity is non-positive, so the alignment is undefined."""


class ComparisonError(FingerprintError):
    """Two bundles cannot be compared (empty shared vocabulary, all layers degenerate)."""
