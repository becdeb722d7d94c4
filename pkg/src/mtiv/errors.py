"""Exception hierarchy shared by every module."""


class MtivError(Exception):
    """Base class for all library errors."""


class ConfigError(MtivError):
    """Invalid configuration (CLI exit code 2)."""


class DataError(MtivError):
    """Invalid or insufficient data (CLI exit code 4)."""


class IdentificationError(MtivError):
    """An identification assumption fails (CLI exit code 3)."""


# core
class EmptySample(DataError):
    pass


class NonFinite(DataError):
    pass


class TauOutOfRange(MtivError, ValueError):
    pass


class LengthMismatch(MtivError, ValueError):
    pass


class DegenerateSupport(DataError):
    pass


class TreatmentMismatch(MtivError, ValueError):
    pass


class RangeEscape(MtivError, ValueError):
    pass


MapRangeEscape = RangeEscape


class NotStrictlyIncreasing(MtivError, ValueError):
    pass


# dgp
class ConfigInvalid(ConfigError):
    pass


class UnknownPreset(ConfigError):
    pass


class NoLatentData(DataError):
    pass


# compliers
class EmptyCell(DataError):
    def __init__(self, z, t=None, message=None):
        self.z = z
        self.t = t
        if message is None:
            where = f"z={z}" if t is None else f"(t={t}, z={z})"
            message = f"empty cell {where}"
        super().__init__(message)


class WeakPair(IdentificationError):
    pass


# counterfactual
class DomainEmpty(IdentificationError):
    pass


class NoSolutionOnGrid(IdentificationError):
    def __init__(self, message, best=None, residuals=None):
        super().__init__(message)
        self.best = best
        self.residuals = residuals


class AssumptionThreeViolated(IdentificationError):
    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class MonotoneBracketViolation(IdentificationError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# effects
class SignTreatmentMismatch(IdentificationError):
    pass


class NoEligiblePair(IdentificationError):
    pass


class TauOutsideWindow(MtivError, ValueError):
    pass


# diagnostics
class NotSquare(MtivError, ValueError):
    pass


class TooFewSamples(DataError):
    pass


# oracle
class GridTooLarge(MtivError, ValueError):
    pass


class OutsideSupport(MtivError, ValueError):
    pass
