"""Exception hierarchy shared by all stages."""


class TrajcurateError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(TrajcurateError):
    """Dataset directory or file does not follow the on-disk layout."""


class ValidationError(TrajcurateError):
    """A record disagrees with its manifest or a model invariant."""

    def __init__(self, message, trajectory_id=None, field=None):
        super().__init__(message)
        self.trajectory_id = trajectory_id
        self.field = field


class DatasetIOError(TrajcurateError):
    """A binary record ended early."""

    def __init__(self, message, path=None, offset=None):
        super().__init__(message)
        self.path = path
        self.offset = offset


class IncompatibleDatasetsError(TrajcurateError):
    """Target and prior datasets cannot be used together."""


class NoDataError(TrajcurateError):
    """Nothing left to weight or sample from."""


class EmptyAugmentedError(TrajcurateError):
    """An augmented set produced zero windows."""


class ConfigurationError(TrajcurateError):
    """Invalid combination of settings detected before any work starts."""
