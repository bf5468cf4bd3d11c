"""Exception types shared across the package."""


class RankSSDAError(Exception):
    """Base class for all package errors."""


class ConfigError(RankSSDAError, ValueError):
    pass


class ShapeError(RankSSDAError, ValueError):
    pass


class InputError(RankSSDAError, ValueError):
    pass


class NumericalError(RankSSDAError, ArithmeticError):
    pass


class ProtocolError(RankSSDAError, RuntimeError):
    """A training-protocol precondition was violated."""


class ParseError(RankSSDAError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TrainingError(RankSSDAError, RuntimeError):
    def __init__(self, message, epoch=None):
        self.epoch = epoch
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)
