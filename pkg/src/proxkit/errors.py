"""Shared exception hierarchy.

``DataError`` covers everything caused by bad input data or bad
configuration values; the CLI maps it to exit code 2. ``UsageError``
covers command-line misuse (exit code 1). Anything else escaping to the
CLI is an internal error (exit code 3).
"""


class ProxkitError(Exception):
    """Base class for all package-specific errors."""


class DataError(ProxkitError):
    """Invalid input data or semantically invalid configuration."""


class UsageError(ProxkitError):
    """Bad command-line invocation: unknown flags, keys, missing files."""
