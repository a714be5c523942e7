"""UTC instants as integer epoch milliseconds, and their ISO-8601 text form."""

from datetime import date, datetime, timedelta, timezone

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
_MS = timedelta(milliseconds=1)


def parse_instant(text):
    """Parse ISO-8601 (UTC or offset-qualified) or integer epoch-ms into epoch ms.

    Naive ISO timestamps are taken to be UTC.
    """
    s = text.strip()
    if not s:
        raise ValueError("empty instant")
    if s.lstrip("-").isdigit():
        return int(s)
    if s[-1] in "zZ":
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return (dt - EPOCH) // _MS


def format_instant(ms):
    dt = EPOCH + timedelta(milliseconds=int(ms))
    return dt.strftime("%Y-%m-%dT%H:%M:%S") + f".{int(ms) % 1000:03d}Z"


def date_of(ms):
    return (EPOCH + timedelta(milliseconds=int(ms))).date()


def parse_date(text):
    return date.fromisoformat(text.strip())
