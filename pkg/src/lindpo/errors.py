"""Exception types shared across the package."""


class LinDpoError(Exception):
    """Base class for all errors raised by lindpo."""


class DomainError(LinDpoError, ValueError):
    """An argument lies outside the domain of the operation."""


class SingularityError(DomainError):
    """The operation would divide by a vanishing coefficient."""


class ShapeError(LinDpoError, ValueError):
    pass


class ConfigError(LinDpoError, ValueError):
    pass


class ContractError(LinDpoError, ValueError):
    """A caller violated a documented precondition."""


class ParseError(LinDpoError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TrainingAborted(LinDpoError, RuntimeError):
    pass
