"""Exception hierarchy.

Every error carries a short ``category`` string; the CLI prints it as the
machine-parsable first token of its failure line.
"""


class SonarError(Exception):
    category = "error"


class InvalidArgument(SonarError, ValueError):
    category = "invalid-argument"


class FormatError(SonarError, ValueError):
    category = "format-error"

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedVersion(FormatError):
    category = "unsupported-version"


class InsufficientData(SonarError, ValueError):
    category = "insufficient-data"


class EmptyInput(SonarError, ValueError):
    category = "empty-input"


class TrainingError(SonarError, RuntimeError):
    category = "training-error"

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class RegistrationFailure(SonarError):
    """Consensus too small. Carries the best attempt so callers can skip the edge."""

    category = "registration-failure"

    def __init__(self, message, pose=None, inliers=None, rms=float("nan")):
        super().__init__(message)
        self.pose = pose
        self.inliers = inliers
        self.rms = rms
