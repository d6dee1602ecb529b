"""Exception hierarchy shared by all pipeline stages."""


class IipadError(Exception):
    """Base class for every error raised by the package."""


class InvalidArgumentError(IipadError, ValueError):
    pass


class InvalidStateError(IipadError):
    pass


class InputError(IipadError):
    """Missing or unreadable input data (directories, frames, manifests)."""


class InsufficientDataError(InputError):
    pass


class FormatError(InputError):
    """A binary artifact (cache, checkpoint, model) failed header validation."""


class DimensionError(InvalidArgumentError):
    pass


class TrainingDivergedError(IipadError, ArithmeticError):
    pass
