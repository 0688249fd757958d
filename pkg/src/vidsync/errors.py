class ConfigError(Exception):
    """Bad usage or configuration (CLI exit code 1)."""


class DataError(Exception):
    """Unreadable, missing, or inconsistent input data (CLI exit code 2)."""
