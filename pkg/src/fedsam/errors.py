"""Exception types shared across the package."""


class FedSamError(Exception):
    """Base class for all package-specific errors."""


class ErgodicityError(FedSamError):
    """Chain is not (detectably) irreducible and aperiodic."""


class CoverageError(FedSamError):
    """Behavior policy puts zero mass where the target policy does not."""


class GenerationError(FedSamError):
    """Random instance generation failed after the allowed redraws."""


class DivergenceError(FedSamError):
    """A parameter became non-finite during a run.

    Carries the step index and agent index where the blow-up was detected.
    """

    def __init__(self, step: int, agent: int, message: str = ""):
        self.step = step
        self.agent = agent
        detail = message or "non-finite parameter"
        super().__init__(f"{detail} at step t={step}, agent i={agent}")
