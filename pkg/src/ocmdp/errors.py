"""Exception hierarchy shared by all submodules."""


class OcmdpError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(OcmdpError, ValueError):
    pass


class ModelValidationError(OcmdpError, ValueError):
    pass


class ChainError(OcmdpError):
    """Stationary distribution could not be determined (reducible or periodic chain)."""


class NotUnichainError(OcmdpError):
    def __init__(self, message, witness=None):
        super().__init__(message)
        # sequence of pure policies (one action index per state) whose product has a zero entry
        self.witness = witness


class ConvergenceError(OcmdpError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class SequencingError(OcmdpError):
    """Functions consumed out of order with respect to the slot decision."""


class ConfigurationError(OcmdpError, ValueError):
    pass


class ScenarioError(OcmdpError):
    pass


class LpNumericalError(OcmdpError):
    pass


class InvariantViolation(OcmdpError):
    def __init__(self, message, slot=None, name=None, witness=None):
        super().__init__(message)
        self.slot = slot
        self.name = name
        self.witness = witness
