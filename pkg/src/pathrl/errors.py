"""Error taxonomy shared across the package.

Three failure classes matter to callers: bad configuration or contract
violations, numerical blow-ups, and I/O problems. I/O failures are left as
the builtin OSError family; the other two get explicit types so the CLI can
map them to distinct exit codes.
"""


class PathrlError(Exception):
    """Base class for package-specific failures."""


class ConfigurationError(PathrlError):
    """Invalid configuration value, shape mismatch, or violated call contract."""


class NumericError(PathrlError):
    """Non-finite value where a finite one is required."""


class SimulationError(NumericError):
    """Environment state became non-finite; carries the offending env index."""

    def __init__(self, message: str, env_index: int | None = None):
        super().__init__(message)
        self.env_index = env_index
