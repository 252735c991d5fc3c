"""Exception hierarchy.

Every error carries a short ``category`` string; the CLI maps categories to
exit codes.
"""


class FermikinError(Exception):
    category = "error"


class UndefinedNormalError(FermikinError):
    category = "geometry"


class ReflectionCapError(FermikinError):
    category = "transport"


class UnresolvedSupportError(FermikinError):
    category = "collision"


class SingularGramError(FermikinError):
    category = "collision"


class NaNFieldError(FermikinError):
    category = "collision"


class NonContractionError(FermikinError):
    category = "solver"


class ContractionBoundError(NonContractionError):
    """Raised before stepping when theta * 4B exceeds the safety factor."""


class MaxIterationError(FermikinError):
    category = "solver"


class SupportViolationError(FermikinError):
    category = "diagnostics"


class ConfigError(FermikinError):
    category = "config"

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ConfigParseError(ConfigError):
    pass


class ConfigValidationError(ConfigError):
    pass


class FileShapeError(FermikinError):
    category = "io"
