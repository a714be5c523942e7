"""Probe-request capture: pcap/radiotap decoding, MAC anonymization, sightings CSV.

Timestamps inside this module:

* ``CapturedFrame.capture_instant`` is integer epoch microseconds.
* ``Sighting.instant`` is integer epoch milliseconds.
"""

import csv
import hashlib
import io
import logging
import re
import struct
from collections import Counter
from dataclasses import dataclass

from .errors import ConfigError, FormatError, PcapError, PcapTruncatedError
from .timeutil import format_instant, parse_instant

log = logging.getLogger(__name__)

LINKTYPE_IEEE802_11 = 105
LINKTYPE_RADIOTAP = 127
SUPPORTED_LINKTYPES = (LINKTYPE_IEEE802_11, LINKTYPE_RADIOTAP)

# magic as read from the first four bytes -> (struct byte order, nanosecond resolution)
_MAGICS = {
    b"\xa1\xb2\xc3\xd4": (">", False),
    b"\xd4\xc3\xb2\xa1": ("<", False),
    b"\xa1\xb2\x3c\x4d": (">", True),
    b"\x4d\x3c\xb2\xa1": ("<", True),
}
GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16
MAX_RECORD_LEN = 262144

# Radiotap fields preceding Antenna-Signal: bit -> (alignment, size)
_RADIOTAP_FIELDS = {
    0: (8, 8),  # TSFT
    1: (1, 1),  # Flags
    2: (1, 1),  # Rate
    3: (2, 4),  # Channel (freq, flags)
    4: (1, 2),  # FHSS
    5: (1, 1),  # dBm Antenna Signal
}
ANTENNA_SIGNAL_BIT = 5

MIN_FRAME_LEN = 10
PROBE_REQUEST_MIN_LEN = 16

RSSI_ABSENT = -128
RSSI_MIN, RSSI_MAX = -128, 0

DEVICE_ID_LEN = 16


@dataclass(frozen=True, slots=True)
class CapturedFrame:
    capture_instant: int
    rssi_dbm: int | None
    frame_bytes: bytes


@dataclass(frozen=True, slots=True)
class ProbeRecord:
    mac: bytes
    capture_instant: int
    rssi_dbm: int | None


@dataclass(frozen=True, slots=True)
class Sighting:
    instant: int
    device_id: bytes
    is_local_admin: bool
    rssi_dbm: int
    sensor_id: str

    @property
    def device_hex(self):
        return self.device_id.hex()


@dataclass(frozen=True, slots=True)
class Reject:
    line: int
    reason: str


# --------------------------------------------------------------------------
# pcap


def _as_stream(data):
    if isinstance(data, (bytes, bytearray, memoryview)):
        return io.BytesIO(bytes(data))
    return data


def parse_radiotap(buf):
    """Return ``(rssi_dbm or None, header_length)`` for a radiotap-prefixed buffer.

    Raises ``ValueError`` when the header is inconsistent with the buffer.
    """
    if len(buf) < 8:
        raise ValueError("radiotap header shorter than 8 bytes")
    version, _pad, it_len = struct.unpack_from("<BBH", buf, 0)
    if version != 0:
        raise ValueError(f"unsupported radiotap version {version}")
    if it_len < 8 or it_len > len(buf):
        raise ValueError(f"radiotap length {it_len} outside frame of {len(buf)} bytes")

    present = struct.unpack_from("<I", buf, 4)[0]
    offset = 8
    word = present
    # skip chained extended-present words
    while word & 0x80000000:
        if offset + 4 > it_len:
            raise ValueError("radiotap present bitmap overruns header")
        word = struct.unpack_from("<I", buf, offset)[0]
        offset += 4

    rssi = None
    for bit in range(ANTENNA_SIGNAL_BIT + 1):
        if not present & (1 << bit):
            continue
        align, size = _RADIOTAP_FIELDS[bit]
        offset = (offset + align - 1) & ~(align - 1)
        if offset + size > it_len:
            raise ValueError(f"radiotap field {bit} overruns header")
        if bit == ANTENNA_SIGNAL_BIT:
            value = struct.unpack_from("<b", buf, offset)[0]
            rssi = value if RSSI_MIN <= value <= RSSI_MAX else None
        offset += size
    return rssi, it_len


def parse_pcap_stream(data, stats=None):
    """Yield one :class:`CapturedFrame` per pcap record, in file order.

    ``data`` is ``bytes`` or a binary file object. Records that cannot carry
    an 802.11 header (bad radiotap, fewer than 10 frame bytes) are skipped and
    counted in ``stats`` (a ``Counter``) when given. Fatal conditions raise
    :class:`PcapError`; a truncated record raises :class:`PcapTruncatedError`
    only after every complete earlier frame was yielded.
    """
    stream = _as_stream(data)
    stats = stats if stats is not None else Counter()

    header = stream.read(GLOBAL_HEADER_LEN)
    if len(header) < 4:
        raise PcapError("malformed global header: stream shorter than magic", offset=len(header))
    magic = bytes(header[:4])
    if magic not in _MAGICS:
        raise PcapError(f"bad magic 0x{magic.hex()}", offset=0)
    if len(header) < GLOBAL_HEADER_LEN:
        raise PcapError(
            f"malformed global header: {len(header)} of {GLOBAL_HEADER_LEN} bytes", offset=len(header)
        )
    order, nanos = _MAGICS[magic]
    _major, _minor, _zone, _sigfigs, _snaplen, linktype = struct.unpack(order + "HHiIII", header[4:])
    if linktype not in SUPPORTED_LINKTYPES:
        raise PcapError(f"unknown link type {linktype}", offset=20)

    rec_fmt = order + "IIII"
    offset = GLOBAL_HEADER_LEN
    while True:
        rec = stream.read(RECORD_HEADER_LEN)
        if not rec:
            return
        if len(rec) < RECORD_HEADER_LEN:
            raise PcapTruncatedError("truncated record header", offset=offset)
        ts_sec, ts_frac, incl_len, _orig_len = struct.unpack(rec_fmt, rec)
        if incl_len > MAX_RECORD_LEN:
            raise PcapError(f"record length {incl_len} exceeds {MAX_RECORD_LEN}", offset=offset)
        body = stream.read(incl_len)
        if len(body) < incl_len:
            raise PcapTruncatedError(
                f"truncated record body: {len(body)} of {incl_len} bytes", offset=offset
            )
        record_offset = offset
        offset += RECORD_HEADER_LEN + incl_len

        instant = ts_sec * 1_000_000 + (ts_frac // 1000 if nanos else ts_frac)
        if linktype == LINKTYPE_RADIOTAP:
            try:
                rssi, rt_len = parse_radiotap(body)
            except ValueError as exc:
                stats["bad_radiotap"] += 1
                log.debug("skipping record at offset %d: %s", record_offset, exc)
                continue
            frame = body[rt_len:]
        else:
            rssi, frame = None, body
        if len(frame) < MIN_FRAME_LEN:
            stats["short_frame"] += 1
            continue
        stats["frames"] += 1
        yield CapturedFrame(instant, rssi, bytes(frame))


def decode_probe_request(frame, tally=None):
    """Return a :class:`ProbeRecord` for management/probe-request frames, else None.

    A probe request too short to hold addr2 is counted under ``"malformed"``
    in ``tally``.
    """
    fb = frame.frame_bytes
    if not fb:
        return None
    fc = fb[0]
    ftype = (fc >> 2) & 0x3
    subtype = (fc >> 4) & 0xF
    if ftype != 0 or subtype != 4:
        return None
    if len(fb) < PROBE_REQUEST_MIN_LEN:
        if tally is not None:
            tally["malformed"] += 1
        return None
    return ProbeRecord(bytes(fb[10:16]), frame.capture_instant, frame.rssi_dbm)


def anonymize_mac(mac, salt):
    """Salted SHA-256 of the MAC, truncated to 16 bytes, plus the U/L bit."""
    if not salt:
        raise ConfigError("refusing to hash MAC addresses with an empty salt")
    if len(mac) != 6:
        raise ValueError(f"MAC must be 6 bytes, got {len(mac)}")
    digest = hashlib.sha256(bytes(salt) + bytes(mac)).digest()[:DEVICE_ID_LEN]
    return digest, bool(mac[0] & 0x02)


def sightings_from_pcap(data, salt, sensor_id, stats=None):
    """Decode probe requests in a pcap into anonymized sightings.

    Frames without RSSI get the ``-128`` sentinel. On a truncated record the
    sightings decoded so far are attached to the raised error as ``.partial``.
    """
    if not salt:
        raise ConfigError("refusing to hash MAC addresses with an empty salt")
    stats = stats if stats is not None else Counter()
    out = []
    try:
        for frame in parse_pcap_stream(data, stats):
            rec = decode_probe_request(frame, stats)
            if rec is None:
                continue
            device_id, local = anonymize_mac(rec.mac, salt)
            rssi = RSSI_ABSENT if rec.rssi_dbm is None else rec.rssi_dbm
            out.append(Sighting(rec.capture_instant // 1000, device_id, local, rssi, sensor_id))
    except PcapTruncatedError as exc:
        exc.partial = out
        raise
    stats["probe_requests"] += len(out)
    return out


# --------------------------------------------------------------------------
# fixture writer (used by tests and the simulator)


def build_radiotap(rssi_dbm=None, *, tsft=None, flags=0, extra_present_words=0):
    """Build a little-endian radiotap header carrying the requested fields."""
    present = 1 << 1  # Flags
    if tsft is not None:
        present |= 1 << 0
    if rssi_dbm is not None:
        present |= 1 << ANTENNA_SIGNAL_BIT
    words = [present | (0x80000000 if extra_present_words else 0)]
    for k in range(extra_present_words):
        words.append(0x80000000 if k + 1 < extra_present_words else 0)
    body = bytearray(struct.pack("<BBH", 0, 0, 0))
    for w in words:
        body += struct.pack("<I", w)
    if tsft is not None:
        while len(body) % 8:
            body.append(0)
        body += struct.pack("<Q", tsft)
    body += struct.pack("<B", flags)
    if rssi_dbm is not None:
        body += struct.pack("<b", rssi_dbm)
    struct.pack_into("<H", body, 2, len(body))
    return bytes(body)


def build_probe_request(mac, *, seq=0, ssid=b"", subtype=4, ftype=0):
    """Minimal 802.11 frame: header + SSID element. Defaults to a probe request."""
    fc0 = (subtype << 4) | (ftype << 2)
    header = struct.pack("<BBH", fc0, 0, 0)
    header += b"\xff" * 6 + bytes(mac) + b"\xff" * 6
    header += struct.pack("<H", (seq & 0xFFF) << 4)
    return header + bytes([0, len(ssid)]) + ssid


def write_pcap(records, linktype=LINKTYPE_RADIOTAP, *, byteorder="<", nanos=False):
    """Serialize ``(instant_us, rssi_or_None, frame_bytes)`` triples into pcap bytes."""
    magic = 0xA1B23C4D if nanos else 0xA1B2C3D4
    out = bytearray(struct.pack(byteorder + "IHHiIII", magic, 2, 4, 0, 0, 65535, linktype))
    for instant_us, rssi, frame in records:
        sec, usec = divmod(int(instant_us), 1_000_000)
        frac = usec * 1000 if nanos else usec
        if linktype == LINKTYPE_RADIOTAP:
            payload = build_radiotap(rssi) + bytes(frame)
        else:
            payload = bytes(frame)
        out += struct.pack(byteorder + "IIII", sec, frac, len(payload), len(payload))
        out += payload
    return bytes(out)


# --------------------------------------------------------------------------
# sightings CSV

SIGHTINGS_COLUMNS = ("instant", "mac", "rssi", "sensor_id")
_HEX32 = re.compile(r"^[0-9a-fA-F]{32}$")
_MAC = re.compile(r"^[0-9a-fA-F]{2}([:-]?)(?:[0-9a-fA-F]{2}\1){4}[0-9a-fA-F]{2}$")
_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n", ""}


def parse_mac(text):
    s = text.strip()
    if not _MAC.match(s):
        raise ValueError(f"not a MAC address: {text!r}")
    return bytes.fromhex(s.replace(":", "").replace("-", ""))


def _parse_bool(text):
    s = (text or "").strip().lower()
    if s in _TRUE:
        return True
    if s in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def ingest_sightings_csv(text, salt=None):
    """Read a sightings CSV into ``(sightings, rejects)``.

    The ``mac`` column may hold raw MACs (hashed with ``salt``) or 32-hex
    device ids, which pass through. Output is sorted by (sensor_id, instant).
    """
    stream = io.StringIO(text) if isinstance(text, str) else text
    reader = csv.DictReader(stream)
    fields = reader.fieldnames or []
    missing = [c for c in SIGHTINGS_COLUMNS if c not in fields]
    if missing:
        raise FormatError(f"sightings CSV missing required column(s): {', '.join(missing)}")
    has_local = "is_local_admin" in fields

    cache = {}
    sightings, rejects = [], []
    for row in reader:
        line = reader.line_num
        try:
            instant = parse_instant(row["instant"] or "")
            rssi = int((row["rssi"] or "").strip())
            if not RSSI_MIN <= rssi <= RSSI_MAX:
                raise ValueError(f"rssi {rssi} outside [{RSSI_MIN}, {RSSI_MAX}]")
            sensor = (row["sensor_id"] or "").strip()
            if not sensor:
                raise ValueError("empty sensor_id")
            mac_text = (row["mac"] or "").strip()
            if _HEX32.match(mac_text):
                device_id = bytes.fromhex(mac_text)
                local = _parse_bool(row.get("is_local_admin")) if has_local else False
            else:
                mac = parse_mac(mac_text)
                if not salt:
                    raise ConfigError("raw MAC addresses in input but no salt configured")
                hit = cache.get(mac)
                if hit is None:
                    hit = cache[mac] = anonymize_mac(mac, salt)
                device_id, local = hit
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            rejects.append(Reject(line, str(exc)))
            continue
        sightings.append(Sighting(instant, device_id, local, rssi, sensor))

    sightings.sort(key=lambda s: (s.sensor_id, s.instant))
    if rejects:
        log.warning("rejected %d sightings row(s); first at line %d: %s",
                    len(rejects), rejects[0].line, rejects[0].reason)
    return sightings, rejects


def write_sightings_csv(sightings, fh):
    """Write anonymized sightings; the mac column carries the 32-hex device id."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SIGHTINGS_COLUMNS + ("is_local_admin",))
    for s in sightings:
        w.writerow([format_instant(s.instant), s.device_id.hex(), s.rssi_dbm, s.sensor_id,
                    "true" if s.is_local_admin else "false"])
