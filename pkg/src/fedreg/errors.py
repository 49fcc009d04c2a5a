"""Exception taxonomy shared across the package.

Two broad classes matter to callers. ConfigError means the requested
parameters are unusable and nothing ran (CLI exit code 3). ProtocolAbort
means a protocol started and stopped at a typed abort point, for example
an aggregation falling below its threshold (CLI exit code 2).
"""

from __future__ import annotations


class ConfigError(ValueError):
    """Parameters or configuration rejected before any protocol ran."""


class ProtocolAbort(RuntimeError):
    """A protocol run stopped at one of its typed abort points.

    ``reason`` is a stable machine-readable code, for example
    "agg-below-threshold" or "zero-variance".
    """

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        self.detail = detail
        super().__init__(f"{reason}: {detail}" if detail else reason)


class AuthenticationError(ProtocolAbort):
    """An authenticated-channel message failed verification."""

    def __init__(self, detail: str = ""):
        super().__init__("authentication-failure", detail)
