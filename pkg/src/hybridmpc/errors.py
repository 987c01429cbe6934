"""Exception hierarchy shared across the toolkit."""


class HybridMpcError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(HybridMpcError):
    """A scenario/grid configuration is malformed or inconsistent."""


class SimulationUnstableError(HybridMpcError):
    """The simulated plant left its validity envelope."""


class JointLimitError(SimulationUnstableError):
    """A joint angle left the |q| <= pi envelope.

    Raised instead of clamping: silently clamping would mask exactly the
    instabilities the experiments are meant to expose.
    """


class IntegrationDivergedError(SimulationUnstableError):
    """The integrator produced a non-finite state."""


class TrainingDivergedError(HybridMpcError):
    """Network training hit a non-finite loss or parameter."""
