"""Exception hierarchy shared by all scenekit modules."""


class SceneKitError(Exception):
    """Base class for all scenekit errors."""


class ContractViolation(SceneKitError, ValueError):
    """An input violates a documented precondition (shape mismatch, bad range, ...)."""


class DegenerateInput(SceneKitError, ValueError):
    """Input is well-formed but carries no usable signal (empty, constant, collinear, ...)."""


class OptimizationFailure(SceneKitError, RuntimeError):
    """An iterative solver diverged or found no admissible step.

    The best state reached before failure is attached as ``best`` so callers
    can still inspect or salvage it.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ValidationError(SceneKitError, ValueError):
    """A serialized artifact (job directory, manifest, file) fails its schema."""


class UnknownJobError(SceneKitError, KeyError):
    """A job id was never submitted to this registry."""


class MissingArtifactError(SceneKitError, FileNotFoundError):
    """An upstream pipeline stage has not produced a required artifact.

    ``stage`` names the stage that has to run first.
    """

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage
