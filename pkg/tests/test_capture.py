"""Lane classification and pcap parsing."""
from __future__ import annotations

import struct

import pytest

from fwdrift.capture import (
    Direction,
    DeviceDayCapture,
    PacketRecord,
    PcapFormatError,
    ProtocolLane,
    classify_lane,
    parse_capture,
)
from fwdrift.fixtures import fixture_profiles
from fwdrift.synth import BASE_EPOCH, device_ip, device_mac, synth_day, write_pcap

# Hand-applied rule table: (ip_proto, src_port, dst_port, payload) -> lane.
CLASSIFIER_CASES = [
    (6, 50000, 443, b"", ProtocolLane.TLS),
    (6, 443, 50000, b"", ProtocolLane.TLS),
    (6, 50000, 8443, b"", ProtocolLane.TLS),
    (6, 50000, 9000, b"\x16\x03\x03", ProtocolLane.TLS),
    (6, 50000, 80, b"GET / HTTP/1.1", ProtocolLane.HTTP),
    (6, 50000, 80, b"OCSP-request", ProtocolLane.OCSP),
    (6, 50000, 53, b"", ProtocolLane.DNS),
    (6, 50000, 5060, b"", ProtocolLane.SIP),
    (6, 50000, 8080, b"", ProtocolLane.TCP),
    (17, 50000, 53, b"", ProtocolLane.DNS),
    (17, 50000, 123, b"", ProtocolLane.NTP),
    (17, 5353, 5353, b"", ProtocolLane.MDNS),
    (17, 50000, 1900, b"", ProtocolLane.SSDP),
    (17, 50000, 5061, b"", ProtocolLane.SIP),
    (17, 50000, 443, b"", ProtocolLane.QUIC),
    (17, 50000, 9999, b"", ProtocolLane.UDP),
    (1, None, None, b"", ProtocolLane.ICMP),
    (2, None, None, b"", ProtocolLane.IGMP),
    (47, None, None, b"", None),  # GRE: no lane, dropped
]


@pytest.mark.parametrize("proto,sport,dport,payload,expected", CLASSIFIER_CASES)
def test_classify_lane_rule_table(proto, sport, dport, payload, expected):
    assert classify_lane(proto, sport, dport, payload) == expected


def test_classify_lane_is_pure():
    args = (6, 49152, 443, b"\x16")
    assert classify_lane(*args) == classify_lane(*args) == ProtocolLane.TLS


def test_lane_ordinals_fixed():
    names = ["TCP", "HTTP", "OCSP", "TLS", "UDP", "DNS", "NTP", "MDNS", "SSDP", "SIP", "QUIC", "ICMP", "IGMP"]
    assert [lane.name for lane in sorted(ProtocolLane)] == names
    assert len(ProtocolLane) == 13


def test_packet_record_invariants():
    with pytest.raises(ValueError):
        PacketRecord(86400.0, Direction.FROM_DEVICE, 60, 1, 2, ProtocolLane.TCP)
    with pytest.raises(ValueError):
        PacketRecord(0.0, Direction.FROM_DEVICE, 0, 1, 2, ProtocolLane.TCP)
    with pytest.raises(ValueError):  # ICMP carries no ports
        PacketRecord(0.0, Direction.FROM_DEVICE, 60, 1, 2, ProtocolLane.ICMP)
    with pytest.raises(ValueError):  # TCP must carry ports
        PacketRecord(0.0, Direction.FROM_DEVICE, 60, None, None, ProtocolLane.TCP)


def _minimal_pcap(times, device_is_src=True):
    """One TCP packet to port 8081 per timestamp, device MAC 02:aa.., day epoch aligned."""
    dev = bytes.fromhex("02aa00000001")
    other = bytes.fromhex("02bb00000002")
    out = struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1)
    for t in times:
        src, dst = (dev, other) if device_is_src else (other, dev)
        ip = struct.pack("!BBHHHBBH4s4s", 0x45, 0, 40 + 6, 0, 0, 64, 6, 0, b"\x0a\x00\x00\x02", b"\x0a\x00\x00\x03")
        tcp = struct.pack("!HHIIBBHHH", 49152, 8081, 0, 0, 5 << 4, 0x18, 8192, 0, 0)
        frame = dst + src + struct.pack("!H", 0x0800) + ip + tcp + b"zzzzzz"
        sec = BASE_EPOCH + int(t)
        usec = round((t - int(t)) * 1e6)
        out += struct.pack("<IIII", sec, usec, len(frame), len(frame)) + frame
    return out


def test_parse_keeps_only_analysis_window():
    # packets at 00:01, 05:59, 06:01 -> boundary excludes the last one
    data = _minimal_pcap([60.0, 21540.0, 21660.0])
    cap = parse_capture(data, "02:aa:00:00:00:01")
    assert len(cap.packets) == 2
    assert [p.timestamp for p in cap.packets] == [60.0, 21540.0]


def test_parse_no_matching_device_is_empty():
    data = _minimal_pcap([60.0])
    cap = parse_capture(data, "02:cc:00:00:00:09")
    assert cap.packets == []


def test_parse_direction_attribution():
    outb = parse_capture(_minimal_pcap([10.0], device_is_src=True), "02:aa:00:00:00:01")
    inb = parse_capture(_minimal_pcap([10.0], device_is_src=False), "02:aa:00:00:00:01")
    assert outb.packets[0].direction is Direction.FROM_DEVICE
    assert inb.packets[0].direction is Direction.TO_DEVICE


def test_parse_by_ipv4_selector():
    cap = parse_capture(_minimal_pcap([10.0]), "10.0.0.2")
    assert len(cap.packets) == 1
    assert cap.packets[0].direction is Direction.FROM_DEVICE


def test_malformed_magic_raises():
    with pytest.raises(PcapFormatError):
        parse_capture(b"\x00" * 48, "10.0.0.2")


def test_truncated_record_raises():
    data = _minimal_pcap([10.0])
    with pytest.raises(PcapFormatError):
        parse_capture(data[:-4], "10.0.0.2")


def test_reparse_is_deterministic(tmp_path):
    profile = fixture_profiles()[0]
    capture, _ = synth_day(profile, 1, seed=11)
    path = tmp_path / "d.pcap"
    write_pcap(capture, path)
    a = parse_capture(path, device_mac(profile.device_id), device_id=profile.device_id)
    b = parse_capture(path, device_mac(profile.device_id), device_id=profile.device_id)
    assert a.packets == b.packets


def test_parse_matches_emission_log(tmp_path):
    """Synthetic generator's own log is the parsing oracle."""
    profile = fixture_profiles()[1]
    capture, emissions = synth_day(profile, 2, seed=13)
    assert len(capture.packets) == len(emissions)
    path = tmp_path / "x.pcap"
    write_pcap(capture, path)
    parsed = parse_capture(path, device_mac(profile.device_id), device_id=profile.device_id)
    by_ip = parse_capture(path, device_ip(profile.device_id), device_id=profile.device_id)
    assert len(parsed.packets) == len(emissions)
    for got, want in zip(parsed.packets, emissions):
        assert got.timestamp == want.t_us / 1_000_000
        assert got.lane == want.lane
        assert got.direction == want.direction
        assert got.size == want.size
        assert got.src_port == want.src_port
        assert got.dst_port == want.dst_port
    assert parsed.packets == by_ip.packets


def test_device_day_capture_rejects_unsorted():
    p1 = PacketRecord(5.0, Direction.FROM_DEVICE, 60, 1, 2, ProtocolLane.TCP)
    p2 = PacketRecord(4.0, Direction.FROM_DEVICE, 60, 1, 2, ProtocolLane.TCP)
    with pytest.raises(ValueError):
        DeviceDayCapture("d", 1, [p1, p2])
