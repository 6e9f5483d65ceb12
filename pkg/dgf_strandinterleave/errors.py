class StrandInterleaveError(Exception):
    """Base class of the package errors"""


class ConfigError(StrandInterleaveError, ValueError):
    """Invalid configuration, schema violation or broken precondition"""

    exit_code = 2


class CycleError(ConfigError):
    pass


class InfeasibleError(StrandInterleaveError, ValueError):
    """Divisibility or capacity constraint cannot be met"""

    exit_code = 3


class MissingProfileEntryError(StrandInterleaveError, LookupError):
    """A solo time or an overlap factor is absent from the loaded tables"""

    exit_code = 4

    def __str__(self) -> str:
        # LookupError quotes a single argument, keep the message readable
        return str(self.args[0]) if self.args else ""
