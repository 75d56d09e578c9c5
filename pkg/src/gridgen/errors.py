"""Exception hierarchy shared across the package."""


class GridgenError(Exception):
    """Base class for all package errors."""


class ShapeError(GridgenError):
    """Array dimensions violate a divisibility or compatibility contract."""


class VocabError(GridgenError):
    """A token index is out of range for the codebook or model vocabulary."""


class FitError(GridgenError):
    """Codebook fitting is infeasible for the given corpus."""


class ConfigError(GridgenError):
    """A configuration value is inconsistent or out of range."""


class FormatError(GridgenError):
    """A file does not conform to its binary or text format."""


class SizeError(GridgenError):
    """An enumeration request exceeds the brute-force size bounds."""
