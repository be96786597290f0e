"""Exception hierarchy shared by all modules.

``UserError`` subclasses map to exit code 2 on the command line; anything
else escaping a command is treated as an internal failure.
"""


class PoseContrastError(Exception):
    pass


class UserError(PoseContrastError):
    """Bad input supplied by the caller (file, flag, config, data)."""


class NonFiniteError(UserError, ValueError):
    pass


class GimbalLockError(PoseContrastError, ValueError):
    pass


class DegenerateDenominatorError(PoseContrastError, ArithmeticError):
    pass


class ShapeMismatchError(UserError, ValueError):
    pass


class FormatError(UserError):
    pass


class NonFiniteGradientError(PoseContrastError, FloatingPointError):
    pass


class NonFiniteLossError(PoseContrastError, FloatingPointError):
    pass


class BadClassIdError(UserError, IndexError):
    pass


class InvalidSplitError(UserError):
    pass


class DatasetTooSmallError(UserError):
    pass


class NotEnoughShotsError(UserError):
    pass


class EmptySplitError(UserError):
    pass


class UnknownParameterError(UserError, KeyError):
    pass


class ConfigError(UserError):
    pass
