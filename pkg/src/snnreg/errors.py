"""Exception types raised by the estimation pipeline."""


class IdentificationError(ValueError):
    """First-stage inputs cannot identify an index direction."""


class SeparationError(RuntimeError):
    """Probit likelihood diverges because the classes are perfectly separated."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap without converging."""


class BandwidthError(RuntimeError):
    """Cross-validation could not score any candidate bandwidth."""


class EstimationError(RuntimeError):
    """A second-stage estimate could not be formed (singular blocks, empty arms)."""
