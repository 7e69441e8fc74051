"""Exception hierarchy shared by all modules."""


class AoischedError(Exception):
    """Base class for every error raised by this package."""


class NonStationaryError(AoischedError, ValueError):
    """An autoregressive model that neither is stationary nor has a single unit root."""


class ChannelError(AoischedError, ValueError):
    """Invalid channel description (PMF, transition matrix, ergodicity)."""


class WaitingCapExceeded(AoischedError, RuntimeError):
    """The threshold test never fires within the hard waiting cap."""

    def __init__(self, delta: int, state: int, beta: float, cap: int):
        self.delta = delta
        self.state = state
        self.beta = beta
        self.cap = cap
        super().__init__(
            f"waiting time from delta={delta}, state={state} exceeds cap {cap} "
            f"for beta={beta!r}; delta_max or nu_max is too small for this curve"
        )


class BracketError(AoischedError, RuntimeError):
    """Bisection endpoints do not straddle a root."""


class EnumerationLimitError(AoischedError, ValueError):
    """Too many buffer mappings to enumerate."""


class NotConvergedError(AoischedError, RuntimeError):
    """Relative value iteration did not reach the span tolerance."""

    def __init__(self, iterations: int, residual: float):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"relative value iteration not converged after {iterations} "
            f"iterations (span residual {residual:.3e})"
        )


class ConfigError(AoischedError, ValueError):
    """Configuration validation failure; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class ArtifactMismatchError(AoischedError, ValueError):
    """Policy artifact was produced from a different configuration."""
