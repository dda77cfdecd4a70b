"""Error taxonomy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4. Everything else is a programming error and propagates.
"""

from __future__ import annotations


class OskitError(Exception):
    """Base class for toolkit errors."""


class ConfigError(OskitError):
    """Malformed or unknown configuration input."""


class DataError(OskitError):
    """Missing, malformed, or inconsistent data files or arrays."""


class NumericError(OskitError):
    """Numerical failure (non-finite loss, non-convergence, degeneracy)."""
