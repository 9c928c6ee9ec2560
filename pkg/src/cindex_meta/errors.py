"""Exception hierarchy.

Every error raised on purpose by the package derives from
:class:`CIndexMetaError`, so callers (the CLI and the simulation harness) can
catch one type and still report the specific condition by class name.
"""


class CIndexMetaError(Exception):
    """Base class for all package errors."""

    @property
    def name(self) -> str:
        return type(self).__name__


# survival
class InvalidSample(CIndexMetaError, ValueError):
    pass


class EmptySample(InvalidSample):
    pass


class TiedTimes(InvalidSample):
    pass


class NoComparablePairs(CIndexMetaError):
    pass


class CensoringPresent(CIndexMetaError):
    pass


class ZeroCensoringSurvival(CIndexMetaError):
    pass


class AllResamplesFailed(CIndexMetaError):
    pass


# transforms
class DomainViolation(CIndexMetaError, ValueError):
    pass


# meta
class DegenerateDesign(CIndexMetaError):
    pass


class NonConvergence(CIndexMetaError):
    pass


class InsufficientStudies(CIndexMetaError):
    pass


class NotConverged(CIndexMetaError):
    pass


# io / cli / sim
class InputFormatError(CIndexMetaError, ValueError):
    pass


class ConfigError(CIndexMetaError, ValueError):
    pass
