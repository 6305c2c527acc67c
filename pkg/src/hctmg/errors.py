"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes or extents are incompatible."""


class NumericError(ArithmeticError):
    """NaN or Inf reached an operation boundary, or training diverged."""


class DegenerateRowError(ValueError):
    """A softmax row has no unmasked position to normalize over."""


class ContractError(RuntimeError):
    """An operation was called outside its contract (e.g. non-scalar backward root)."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class DataError(ValueError):
    """Dataset contents violate an invariant (e.g. empty modality sequence)."""


class FormatError(ValueError):
    """A file does not match the documented on-disk format."""


class DataWarning(UserWarning):
    """Suspicious but non-fatal data condition (e.g. labels out of range)."""
