"""Exception hierarchy shared by all modules."""


class RefractorError(ValueError):
    """Base class for every error raised by this package."""


class RimProximity(RefractorError):
    pass


class NonVisible(RefractorError):
    pass


class NoIntersection(RefractorError):
    pass


class DegenerateFoci(RefractorError):
    pass


class GradientTooLarge(RefractorError):
    pass


class TotalInternal(RefractorError):
    pass


class NoHit(RefractorError):
    pass


class TangentialHit(RefractorError):
    pass


class OutsideReceiverGrid(RefractorError):
    pass


class VariantUnsupported(RefractorError):
    pass


class NonUnique(RefractorError):
    pass


class DistanceViolation(RefractorError):
    pass


class SpanViolation(RefractorError):
    pass


class BalanceViolation(RefractorError):
    pass


class Stalled(RefractorError):
    """The semiaxis iteration stopped short of the tolerance.

    ``a`` and ``flux`` hold the last iterate when the solver provides them;
    ``capped`` lists underfed targets already at their extremal semiaxis.
    """

    def __init__(self, message, a=None, flux=None, capped=(), sweeps=0):
        super().__init__(message)
        self.a = a
        self.flux = flux
        self.capped = list(capped)
        self.sweeps = sweeps


class DivisionByZeroDensity(RefractorError):
    pass


class SeedRequired(RefractorError):
    pass


class ConfigError(RefractorError):
    pass
