"""Exception types shared across the package."""


class GlyphLearnError(Exception):
    """Base class for all package errors."""


class ShapeError(GlyphLearnError, ValueError):
    """Operands have incompatible shapes."""


class ContractError(GlyphLearnError, ValueError):
    """An operation was called outside its documented contract."""


class DataError(GlyphLearnError, ValueError):
    """Input data is missing, malformed, or empty (CLI exit code 3)."""


class NumericalError(GlyphLearnError, ArithmeticError):
    """A numerical routine produced non-finite or unusable values (CLI exit code 4)."""
