"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class KdStealError(Exception):
    exit_code = 1


class ConfigError(KdStealError, ValueError):
    exit_code = 2


class ShapeError(ConfigError):
    pass


class DomainError(ConfigError):
    pass


class FormatError(KdStealError):
    exit_code = 3


class PersistenceError(FormatError):
    pass


class NumericError(KdStealError, ArithmeticError):
    exit_code = 4

    def __init__(self, message, layer=None):
        super().__init__(message if layer is None else f"{message} (layer {layer})")
        self.layer = layer
