"""Exception hierarchy shared across the package."""


class ProbeTransitError(Exception):
    """Base class for all errors raised by probetransit."""


class ConfigError(ProbeTransitError, ValueError):
    """Invalid or missing configuration (salt, scenario fields, flags)."""


class PcapError(ProbeTransitError):
    """Structured failure while reading a pcap stream."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (offset {offset})"
        super().__init__(message)


class PcapTruncatedError(PcapError):
    """A record header or body ends before its declared length."""


class ScheduleError(ProbeTransitError, ValueError):
    """Schedule, assignment or ticket files violate their invariants."""


class IntegrityError(ProbeTransitError, ValueError):
    """Per-stop vectors are mutually inconsistent (e.g. negative load)."""


class UsageError(ProbeTransitError, ValueError):
    """Caller passed arguments outside an operation's contract."""


class FormatError(ProbeTransitError, ValueError):
    """A delimited input file is missing required columns."""
