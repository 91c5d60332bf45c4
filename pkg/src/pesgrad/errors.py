"""Exception types raised across the package."""


class PesError(Exception):
    """Base class for all errors raised by pesgrad."""


class HorizonError(PesError, ValueError):
    def __init__(self, step_index, K, T):
        self.step_index = step_index
        self.K = K
        self.T = T
        super().__init__(
            f"unroll of K={K} steps from step_index={step_index} overflows horizon T={T}"
        )


class NonFiniteLossError(PesError, FloatingPointError):
    """A per-step loss came back NaN or infinite (usually a divergent inner problem)."""

    def __init__(self, step_index, particle=None, value=float("nan")):
        self.step_index = step_index
        self.particle = particle
        self.value = value
        where = f"step {step_index}"
        if particle is not None:
            where += f", particle {particle}"
        super().__init__(f"non-finite loss {value!r} at {where}")


class UnsupportedCapabilityError(PesError, NotImplementedError):
    """The system does not provide the Jacobians an estimator needs."""


class ConfigError(PesError, ValueError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class IdxFormatError(PesError, ValueError):
    pass


class NonFiniteGradientError(PesError, FloatingPointError):
    """An optimizer was handed a gradient with NaN or infinite entries."""
