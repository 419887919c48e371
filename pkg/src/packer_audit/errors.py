"""Exception hierarchy shared across the package.

CLI exit codes: ConfigError -> 2, IoFailure -> 3, GateFailedError -> 4,
InsufficientPoolError -> 5.
"""

from __future__ import annotations


class PackerAuditError(Exception):
    """Base class for all package errors."""


class ConfigError(PackerAuditError):
    """Invalid configuration, spec file, or argument combination."""


class IoFailure(PackerAuditError):
    """File could not be read or written."""


# --- PE parsing ---

class PeParseError(PackerAuditError):
    """Base class for structural PE parse failures."""


class MalformedDosError(PeParseError):
    """Missing or wrong MZ magic, or file too small for a DOS header."""


class MalformedPeError(PeParseError):
    """Bad PE signature or truncated COFF/optional headers."""


class SectionOutOfBoundsError(PeParseError):
    """A section's raw data range falls outside the file."""


class OffsetOutOfRangeError(PackerAuditError):
    """Queried file offset is outside [0, file_length)."""


class EmptyInputError(PackerAuditError):
    """An operation requiring at least one byte received none."""


# --- forging ---

class LayoutOverflowError(PackerAuditError):
    """Planted content does not fit the configured section sizes."""


# --- featurization ---

class EmptyCorpusError(PackerAuditError):
    """Catalog construction over an empty corpus."""


class CatalogMismatchError(PackerAuditError):
    """Feature vector refers to names outside its catalog."""


class UnknownFeatureError(PackerAuditError):
    """Feature name not present in the catalog."""


# --- dataset composition ---

class InsufficientPoolError(PackerAuditError):
    """A category pool is smaller than the per-iteration requirement."""


# --- classifier / distillation ---

class DegenerateLabelsError(PackerAuditError):
    """Training set contains a single class."""


class DegenerateSampleError(PackerAuditError):
    """Distillation sample is empty or otherwise unusable."""


class MissingPredictionError(PackerAuditError):
    """External prediction table has no entry for a queried sample id."""


class EmptyHoldoutError(PackerAuditError):
    """Fidelity evaluation received an empty holdout."""


class GateFailedError(PackerAuditError):
    """Black-box held-out accuracy fell below the required gate."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class MissingVerdictError(PackerAuditError):
    """A ranked feature has no taxonomy verdict."""
