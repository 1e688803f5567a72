"""Exception hierarchy.

Three broad families map onto CLI exit codes: usage errors (1), data errors
(2), and numerical failures (3).  Everything raised by this package derives
from GbsgError so callers can catch one type at the boundary.
"""


class GbsgError(Exception):
    exit_code = 2


class UsageError(GbsgError):
    exit_code = 1


class DataError(GbsgError):
    exit_code = 2


class NumericalError(GbsgError):
    exit_code = 3


# --- volume / label file format -------------------------------------------

class FormatError(DataError):
    pass


class MagicMismatch(FormatError):
    pass


class TruncatedFile(FormatError):
    pass


class NonFiniteData(FormatError):
    pass


class InvalidDims(FormatError):
    pass


class WrongDtype(FormatError):
    pass


class LabelOverflow(FormatError):
    pass


class IoFailure(DataError):
    pass


# --- pairing / manifest -----------------------------------------------------

class DimsMismatch(DataError):
    pass


class SpacingMismatch(DataError):
    pass


class ManifestError(DataError):
    pass


class HeaderMismatch(ManifestError):
    pass


class UnknownGroup(ManifestError):
    pass


class UnknownSex(ManifestError):
    pass


class DuplicateId(ManifestError):
    pass


class UnparsableAge(ManifestError):
    pass


class MissingFile(ManifestError):
    pass


# --- grading ----------------------------------------------------------------

class OutOfBounds(DataError):
    pass


class RadiusMismatch(DataError):
    pass


class EmptyCandidateSet(NumericalError):
    pass


class EmptyNeighborhood(NumericalError):
    pass


# --- graph ------------------------------------------------------------------

class StructureTooSmall(DataError):
    pass


class TooFewStructures(DataError):
    pass


class NotNormalized(DataError):
    pass


class CanonicalOrderMismatch(DataError):
    pass


# --- feature selection / classification -------------------------------------

class TooFewSubjects(DataError):
    pass


class ConstantAges(DataError):
    pass


class NoFeatureSelected(NumericalError):
    pass


class EmptyMask(DataError):
    pass


class SingleClass(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


# --- config / synth ----------------------------------------------------------

class ConfigError(DataError):
    pass


class OverlappingStructures(DataError):
    pass
