"""
Error hierarchy shared by every app.

Each class carries the exit code the management commands hand back to the
shell, so a command only has to catch ``MrcnError``.
"""


class MrcnError(Exception):
    exit_code = 1


class ConfigError(MrcnError):
    exit_code = 2

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        location = ''
        if path and line:
            location = f'{path}:{line}: '
        elif line:
            location = f'line {line}: '
        super().__init__(f'{location}{message}')


class DataError(MrcnError):
    exit_code = 3


class RasterFormatError(DataError):
    pass


class CheckpointError(DataError):
    pass


class ShapeError(DataError, ValueError):
    pass


class GraphError(MrcnError):
    exit_code = 1


class NumericError(MrcnError):
    exit_code = 4


class GradCheckFailure(MrcnError):
    exit_code = 5
