"""Exception hierarchy. Each family maps to one CLI exit code."""


class ShiVAEError(Exception):
    exit_code = 1


class ConfigError(ShiVAEError):
    exit_code = 2


class DataError(ShiVAEError):
    exit_code = 3


class SchemaError(DataError):
    pass


class InfeasibleMaskError(DataError):
    pass


class ResamplingError(DataError):
    pass


class IntegrityError(DataError):
    pass


class UnsupportedVersionError(DataError):
    pass


class NumericFault(ShiVAEError):
    exit_code = 4

    def __init__(self, message, diagnostics=None, last_good=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
        self.last_good = last_good
