import io
import random
import struct
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from probetransit.capture import (
    CapturedFrame,
    Reject,
    anonymize_mac,
    build_probe_request,
    build_radiotap,
    decode_probe_request,
    ingest_sightings_csv,
    parse_pcap_stream,
    parse_radiotap,
    sightings_from_pcap,
    write_pcap,
    write_sightings_csv,
)
from probetransit.errors import ConfigError, FormatError, PcapError, PcapTruncatedError

SALT = b"unit-test-salt"
MAC = bytes.fromhex("aabbccddeeff")


def hand_built_pcap():
    """Little-endian pcap, linktype 127, one radiotap+probe-request record, assembled field by field."""
    glob = bytes.fromhex("d4c3b2a1") + bytes.fromhex("0200") + bytes.fromhex("0400")
    glob += b"\x00" * 4 + b"\x00" * 4 + bytes.fromhex("ffff0000") + bytes.fromhex("7f000000")
    # radiotap: version 0, pad, len 18, present = TSFT|Flags|AntSignal (0x23);
    # TSFT at 8..16, flags at 16, signal at 17
    radiotap = bytes([0, 0]) + struct.pack("<H", 18) + struct.pack("<I", 0x23)
    radiotap += struct.pack("<Q", 123456789) + bytes([0x10]) + struct.pack("<b", -61)
    assert len(radiotap) == 18
    frame = bytes([0x40, 0x00, 0x00, 0x00]) + b"\xff" * 6 + MAC + b"\xff" * 6 + b"\x10\x00"
    frame += b"\x00\x04test"
    body = radiotap + frame
    rec = struct.pack("<IIII", 1577865600, 250000, len(body), len(body)) + body
    return glob + rec


def test_hand_built_fixture_yields_one_frame():
    frames = list(parse_pcap_stream(hand_built_pcap()))
    assert len(frames) == 1
    f = frames[0]
    assert f.rssi_dbm == -61
    assert f.capture_instant == 1577865600 * 1_000_000 + 250000
    assert f.frame_bytes[:1] == b"\x40"
    rec = decode_probe_request(f)
    assert rec.mac == MAC
    assert rec.rssi_dbm == -61


def test_header_only_is_empty():
    header = hand_built_pcap()[:24]
    assert list(parse_pcap_stream(header)) == []


def test_bad_magic():
    with pytest.raises(PcapError, match="bad magic") as exc:
        list(parse_pcap_stream(b"\x00\x00\x00\x00" + b"\x00" * 20))
    assert exc.value.offset == 0


def test_short_global_header_names_offset():
    with pytest.raises(PcapError, match="offset 10"):
        list(parse_pcap_stream(hand_built_pcap()[:10]))


def test_unknown_linktype_named():
    data = bytearray(hand_built_pcap()[:24])
    data[20:24] = struct.pack("<I", 1)
    with pytest.raises(PcapError, match="unknown link type 1"):
        list(parse_pcap_stream(bytes(data)))


def test_truncated_record_after_complete_frames():
    one = hand_built_pcap()
    data = one + one[24:][:-5]
    got = []
    with pytest.raises(PcapTruncatedError):
        for f in parse_pcap_stream(data):
            got.append(f)
    assert len(got) == 1


def test_truncated_record_partial_sightings_attached():
    one = hand_built_pcap()
    with pytest.raises(PcapTruncatedError) as exc:
        sightings_from_pcap(one + one[24:30], SALT, "bus01")
    assert len(exc.value.partial) == 1


@pytest.mark.parametrize("order", ["<", ">"])
@pytest.mark.parametrize("nanos", [False, True])
def test_both_byte_orders_and_resolutions(order, nanos):
    frame = build_probe_request(MAC)
    data = write_pcap([(1_600_000_000_123_456, -70, frame)], byteorder=order, nanos=nanos)
    (f,) = parse_pcap_stream(data)
    assert f.capture_instant == 1_600_000_000_123_456
    assert f.rssi_dbm == -70


def test_linktype_105_has_no_rssi():
    data = write_pcap([(5_000_000, None, build_probe_request(MAC))], linktype=105)
    (f,) = parse_pcap_stream(data)
    assert f.rssi_dbm is None
    (s,) = sightings_from_pcap(data, SALT, "bus01")
    assert s.rssi_dbm == -128


def test_radiotap_extended_bitmaps_and_alignment():
    rt = build_radiotap(-44, tsft=99, extra_present_words=2)
    rssi, length = parse_radiotap(rt + b"\x40")
    assert rssi == -44
    assert length == len(rt)
    # three present words (12 bytes) + TSFT aligned to 16
    assert struct.unpack_from("<Q", rt, 16)[0] == 99


def test_radiotap_channel_field_alignment():
    # present: Flags(1) | Channel(3) | AntSignal(5); flags at 8, channel aligned to 10, signal at 14
    rt = bytes([0, 0]) + struct.pack("<H", 15) + struct.pack("<I", 0b101010)
    rt += bytes([0x00, 0xAA]) + struct.pack("<HH", 2437, 0x00A0) + struct.pack("<b", -77)
    assert parse_radiotap(rt) == (-77, 15)


def test_positive_signal_is_absent():
    assert parse_radiotap(build_radiotap(0))[0] == 0
    rt = bytearray(build_radiotap(-1))
    rt[-1] = 5
    assert parse_radiotap(bytes(rt))[0] is None


def test_bad_radiotap_is_skipped_and_counted():
    good = write_pcap([(1, -50, build_probe_request(MAC))])
    data = bytearray(good)
    data[24 + 16] = 1  # radiotap version 1
    stats = Counter()
    assert list(parse_pcap_stream(bytes(data), stats)) == []
    assert stats["bad_radiotap"] == 1


def test_decode_probe_request_fixture_mac():
    frame = CapturedFrame(0, -50, build_probe_request(MAC))
    assert decode_probe_request(frame).mac == MAC


def test_beacon_is_absent():
    frame = CapturedFrame(0, -50, build_probe_request(MAC, subtype=8))
    assert decode_probe_request(frame) is None


def test_truncated_probe_request_tallied():
    tally = Counter()
    frame = CapturedFrame(0, -50, build_probe_request(MAC)[:12])
    assert decode_probe_request(frame, tally) is None
    assert tally["malformed"] == 1


def test_all_64_type_subtype_combinations():
    hits = []
    for ftype in range(4):
        for subtype in range(16):
            frame = CapturedFrame(0, -40, build_probe_request(MAC, ftype=ftype, subtype=subtype))
            rec = decode_probe_request(frame)
            if rec is not None:
                hits.append((ftype, subtype))
    assert hits == [(0, 4)]


def test_anonymize_deterministic_and_ul_bit():
    assert anonymize_mac(MAC, SALT) == anonymize_mac(MAC, SALT)
    assert len(anonymize_mac(MAC, SALT)[0]) == 16
    assert anonymize_mac(bytes.fromhex("daa119000001"), SALT)[1] is True
    assert anonymize_mac(bytes.fromhex("001122334455"), SALT)[1] is False


def test_anonymize_is_salted_sha256_prefix():
    import hashlib

    assert anonymize_mac(MAC, SALT)[0] == hashlib.sha256(SALT + MAC).digest()[:16]


def test_empty_salt_refused():
    with pytest.raises(ConfigError):
        anonymize_mac(MAC, b"")


def test_no_collisions_across_salts():
    rng = random.Random(7)
    macs = {rng.randbytes(6) for _ in range(100_000)}
    ids = set()
    for salt in (b"salt-one", b"salt-two"):
        for m in macs:
            ids.add(anonymize_mac(m, salt)[0])
    assert len(ids) == 2 * len(macs)


def test_raw_mac_never_in_outputs():
    data = write_pcap([(1_000_000 * k, -50, build_probe_request(MAC, ssid=b"x")) for k in range(5)])
    sightings = sightings_from_pcap(data, SALT, "bus01")
    buf = io.StringIO()
    write_sightings_csv(sightings, buf)
    text = buf.getvalue().lower()
    assert MAC.hex() not in text and MAC.hex(":") not in text
    for s in sightings:
        assert MAC not in s.device_id


probe_lists = st.lists(
    st.tuples(
        st.binary(min_size=6, max_size=6),
        st.integers(min_value=0, max_value=2**32 - 1).map(lambda s: s * 1_000_000),
        st.integers(min_value=0, max_value=999_999),
        st.integers(min_value=-128, max_value=0),
    ),
    max_size=20,
)


@given(probe_lists, st.sampled_from(["<", ">"]), st.booleans())
@settings(max_examples=200, deadline=None)
def test_pcap_round_trip_bit_exact(probes, order, nanos):
    recs = [(sec + usec, rssi, build_probe_request(mac)) for mac, sec, usec, rssi in probes]
    data = write_pcap(recs, byteorder=order, nanos=nanos)
    back = [decode_probe_request(f) for f in parse_pcap_stream(data)]
    assert [(r.mac, r.capture_instant, r.rssi_dbm) for r in back] == \
        [(mac, sec + usec, rssi) for mac, sec, usec, rssi in probes]


# --------------------------------------------------------------------------
# CSV


CSV3 = """instant,mac,rssi,sensor_id
2020-01-06T07:00:02.500Z,aa:bb:cc:dd:ee:ff,-60,bus02
2020-01-06T07:00:01.000Z,00:11:22:33:44:55,-70,bus01
1578294000000,da:a1:19:00:00:01,-50,bus01
"""


def test_ingest_three_rows_sorted():
    sightings, rejects = ingest_sightings_csv(CSV3, SALT)
    assert rejects == []
    assert [(s.sensor_id, s.instant) for s in sightings] == [
        ("bus01", 1578294000000), ("bus01", 1578294001000), ("bus02", 1578294002500)]
    assert sightings[0].is_local_admin is True
    assert sightings[0].device_id == anonymize_mac(bytes.fromhex("daa119000001"), SALT)[0]


def test_ingest_rejects_out_of_range_rssi():
    text = CSV3 + "2020-01-06T07:00:03.000Z,aa:bb:cc:dd:ee:ff,+10,bus01\n"
    sightings, rejects = ingest_sightings_csv(text, SALT)
    assert len(sightings) == 3
    assert rejects[0].line == 5
    assert "rssi" in rejects[0].reason


def test_ingest_rejects_garbage_and_continues():
    text = CSV3 + "not-a-time,aa:bb:cc:dd:ee:ff,-10,bus01\n2020-01-06T07:00:03Z,zz,-10,bus01\n"
    sightings, rejects = ingest_sightings_csv(text, SALT)
    assert len(sightings) == 3
    assert [r.line for r in rejects] == [5, 6]
    assert all(isinstance(r, Reject) for r in rejects)


def test_ingest_missing_column_fatal():
    with pytest.raises(FormatError, match="rssi"):
        ingest_sightings_csv("instant,mac,sensor_id\n", SALT)


def test_ingest_raw_mac_without_salt_fatal():
    with pytest.raises(ConfigError):
        ingest_sightings_csv(CSV3, None)


def test_raw_and_prehashed_files_agree():
    raw, _ = ingest_sightings_csv(CSV3, SALT)
    buf = io.StringIO()
    write_sightings_csv(raw, buf)
    hashed, rejects = ingest_sightings_csv(buf.getvalue(), None)
    assert rejects == []
    assert Counter(s.device_id for s in raw) == Counter(s.device_id for s in hashed)
    assert hashed == raw


def test_fuzz_short_inputs_raise_structured_errors():
    rng = random.Random(3)
    for _ in range(2000):
        blob = rng.randbytes(rng.randrange(0, 64))
        try:
            list(parse_pcap_stream(blob))
        except PcapError:
            pass
