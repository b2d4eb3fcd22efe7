"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: usage/config problems exit with 2,
numeric/integration failures with 3.
"""


class MvselabError(Exception):
    """Base class for all package errors."""


class StructuralError(MvselabError):
    """Inconsistent shapes or dimensions between inputs."""


class UsageError(MvselabError):
    """Arguments outside an operation's documented domain."""


class ConfigError(UsageError):
    """Malformed or contradictory run configuration."""


class ModelError(MvselabError):
    """A coefficient callback returned a bad value; the offending input is echoed."""


class NumericError(MvselabError):
    """A non-finite intermediate appeared during evaluation."""


class IntegrationError(NumericError):
    """Time stepping blew up; carries the replica and step index."""

    def __init__(self, message, replica=None, step=None):
        super().__init__(message)
        self.replica = replica
        self.step = step


class FitError(MvselabError):
    """A curve fit was requested on data outside its domain."""
