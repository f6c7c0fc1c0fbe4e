"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class AgpError(Exception):
    exit_code = 1


class ConfigError(AgpError):
    exit_code = 2


class DataError(AgpError):
    exit_code = 3


class IngestionError(DataError):
    def __init__(self, path, reason):
        super().__init__(f"cannot read image {path}: {reason}")
        self.path = path


class BlankImageError(DataError):
    pass


class InfeasibleError(DataError):
    pass


class NumericalError(AgpError):
    exit_code = 4

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration
