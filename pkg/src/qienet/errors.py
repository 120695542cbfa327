"""Exception hierarchy shared by every qienet module.

The CLI maps these onto exit codes, so each class carries one.
"""


class QienetError(Exception):
    exit_code = 3


class ConfigError(QienetError, ValueError):
    exit_code = 2


class DimensionError(QienetError, ValueError):
    exit_code = 2


class InputError(QienetError, ValueError):
    exit_code = 3


class StateError(QienetError, RuntimeError):
    exit_code = 3


class FormatError(QienetError, ValueError):
    exit_code = 3


class BoundsError(QienetError, IndexError):
    exit_code = 3


class GapError(QienetError, ValueError):
    exit_code = 3


class CoverageError(QienetError, ValueError):
    exit_code = 3

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = list(missing)


class UndefinedMetricError(QienetError, ValueError):
    exit_code = 3


class TrainingError(QienetError, RuntimeError):
    exit_code = 4

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
