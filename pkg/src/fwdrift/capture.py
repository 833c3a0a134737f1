"""Packet capture ingestion: classic pcap parsing, device attribution, protocol lanes.

A capture file is reduced to the handful of per-packet fields the rest of the
pipeline consumes: a timestamp relative to capture-day midnight, the packet's
direction with respect to the monitored device, its original frame length,
transport ports (when the protocol has any) and a protocol lane.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import BinaryIO, Optional, Union

DAY_SECONDS = 86_400
ANALYSIS_SECONDS = 21_600  # per-day analysis window: 00:00 - 06:00


class ProtocolLane(IntEnum):
    """The 13 protocol rows of a fingerprint image, in fixed row order."""

    TCP = 0
    HTTP = 1
    OCSP = 2
    TLS = 3
    UDP = 4
    DNS = 5
    NTP = 6
    MDNS = 7
    SSDP = 8
    SIP = 9
    QUIC = 10
    ICMP = 11
    IGMP = 12


LANE_COUNT = len(ProtocolLane)


class Direction(Enum):
    FROM_DEVICE = "from_device"
    TO_DEVICE = "to_device"


@dataclass(frozen=True)
class PacketRecord:
    """One captured packet, reduced to the fields the feature extractor reads."""

    timestamp: float  # seconds since capture-day midnight
    direction: Direction
    size: int  # original frame length in bytes
    src_port: Optional[int]
    dst_port: Optional[int]
    lane: ProtocolLane

    def __post_init__(self) -> None:
        if not 0 <= self.timestamp < DAY_SECONDS:
            raise ValueError(f"timestamp {self.timestamp} outside [0, 86400)")
        if self.size <= 0:
            raise ValueError("packet size must be positive")
        portless = self.lane in (ProtocolLane.ICMP, ProtocolLane.IGMP)
        has_ports = self.src_port is not None and self.dst_port is not None
        if portless and has_ports:
            raise ValueError(f"{self.lane.name} packets carry no transport ports")
        if not portless and not has_ports:
            raise ValueError(f"{self.lane.name} packets must carry both ports")

    @property
    def device_port(self) -> Optional[int]:
        """Port on the device side of the exchange."""
        if self.src_port is None:
            return None
        return self.src_port if self.direction is Direction.FROM_DEVICE else self.dst_port

    @property
    def remote_port(self) -> Optional[int]:
        if self.src_port is None:
            return None
        return self.dst_port if self.direction is Direction.FROM_DEVICE else self.src_port


@dataclass
class DeviceDayCapture:
    """All packets for one device within one day's 00:00-06:00 analysis window."""

    device_id: str
    day_index: int
    packets: list[PacketRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        for prev, cur in zip(self.packets, self.packets[1:]):
            if cur.timestamp < prev.timestamp:
                raise ValueError("packets must be sorted by timestamp")
        for pkt in self.packets:
            if pkt.timestamp >= ANALYSIS_SECONDS:
                raise ValueError("packet outside the 00:00-06:00 analysis window")


class PcapFormatError(ValueError):
    """Raised when a capture file is not a readable classic pcap."""


# Classic pcap magics: (byte order, ticks per second) per variant.
_PCAP_MAGICS = {
    0xA1B2C3D4: ("<", 1_000_000),
    0xA1B23C4D: ("<", 1_000_000_000),
}
_ETHERTYPE_IPV4 = 0x0800
_ETHERTYPE_IPV6 = 0x86DD
_IPPROTO_ICMP = 1
_IPPROTO_IGMP = 2
_IPPROTO_TCP = 6
_IPPROTO_UDP = 17
# IPv6 extension headers we skip over to reach the transport header.
_IPV6_EXTENSIONS = {0, 43, 60}

_TLS_PORTS = (443, 8443)
_SIP_PORTS = (5060, 5061)
_OCSP_MARKER = b"OCSP"


def classify_lane(
    ip_proto: int,
    src_port: Optional[int],
    dst_port: Optional[int],
    payload: bytes = b"",
    assume_ocsp_ports: tuple[int, ...] = (),
) -> Optional[ProtocolLane]:
    """Assign a protocol lane from header fields alone.

    Purely a function of its inputs; precedence is fixed:
      * ICMP and IGMP by IP protocol number;
      * TCP: port 80 is OCSP when the payload starts with the OCSP request
        marker (or the port is in ``assume_ocsp_ports``), otherwise HTTP;
        then TLS (443/8443 or a 0x16 record byte), DNS (53), SIP (5060-5061),
        and finally the generic TCP lane;
      * UDP: DNS (53), NTP (123), mDNS (5353), SSDP (1900), SIP (5060-5061),
        QUIC (443), and finally the generic UDP lane.

    Returns None for IP protocols outside the lane set; callers drop those.
    """
    if ip_proto == _IPPROTO_ICMP:
        return ProtocolLane.ICMP
    if ip_proto == _IPPROTO_IGMP:
        return ProtocolLane.IGMP

    ports = tuple(p for p in (src_port, dst_port) if p is not None)

    if ip_proto == _IPPROTO_TCP:
        if 80 in ports or any(p in assume_ocsp_ports for p in ports):
            if payload.startswith(_OCSP_MARKER) or any(
                p in assume_ocsp_ports for p in ports
            ):
                return ProtocolLane.OCSP
            return ProtocolLane.HTTP
        if any(p in _TLS_PORTS for p in ports) or payload[:1] == b"\x16":
            return ProtocolLane.TLS
        if 53 in ports:
            return ProtocolLane.DNS
        if any(p in _SIP_PORTS for p in ports):
            return ProtocolLane.SIP
        return ProtocolLane.TCP

    if ip_proto == _IPPROTO_UDP:
        if 53 in ports:
            return ProtocolLane.DNS
        if 123 in ports:
            return ProtocolLane.NTP
        if 5353 in ports:
            return ProtocolLane.MDNS
        if 1900 in ports:
            return ProtocolLane.SSDP
        if any(p in _SIP_PORTS for p in ports):
            return ProtocolLane.SIP
        if 443 in ports:
            return ProtocolLane.QUIC
        return ProtocolLane.UDP

    return None


def _parse_selector(selector: str) -> tuple[str, bytes]:
    """Parse a device selector: MAC 'aa:bb:cc:dd:ee:ff' or IPv4 dotted quad."""
    if ":" in selector:
        parts = selector.split(":")
        if len(parts) != 6:
            raise ValueError(f"malformed MAC selector: {selector!r}")
        return "mac", bytes(int(p, 16) for p in parts)
    parts = selector.split(".")
    if len(parts) != 4 or not all(p.isdigit() and 0 <= int(p) <= 255 for p in parts):
        raise ValueError(f"malformed device selector: {selector!r}")
    return "ip", bytes(int(p) for p in parts)


def _transport_fields(
    ip_proto: int, transport: bytes
) -> tuple[Optional[int], Optional[int], bytes]:
    """Extract (src_port, dst_port, payload) from the transport header onwards."""
    if ip_proto == _IPPROTO_TCP:
        if len(transport) < 20:
            return None, None, b""
        sport, dport = struct.unpack_from("!HH", transport, 0)
        offset = (transport[12] >> 4) * 4
        return sport, dport, transport[offset:]
    if ip_proto == _IPPROTO_UDP:
        if len(transport) < 8:
            return None, None, b""
        sport, dport = struct.unpack_from("!HH", transport, 0)
        return sport, dport, transport[8:]
    return None, None, transport


def parse_capture(
    capture: Union[str, Path, bytes, BinaryIO],
    device_selector: str,
    device_id: Optional[str] = None,
    day_index: int = 1,
    assume_ocsp_ports: tuple[int, ...] = (),
) -> DeviceDayCapture:
    """Parse a classic pcap and keep the selected device's 00:00-06:00 packets.

    ``device_selector`` is a MAC address or IPv4 address; packets where the
    device is the source become FromDevice, destination ToDevice, and all
    others are dropped. Capture-day midnight is derived (in UTC) from the
    first record in the file. Packets at or after 06:00 are discarded.
    Matching zero packets is a valid, empty capture.
    """
    if isinstance(capture, (str, Path)):
        data = Path(capture).read_bytes()
    elif isinstance(capture, bytes):
        data = capture
    else:
        data = capture.read()

    if len(data) < 24:
        raise PcapFormatError("truncated pcap global header")
    magic_le = struct.unpack_from("<I", data, 0)[0]
    magic_be = struct.unpack_from(">I", data, 0)[0]
    if magic_le in _PCAP_MAGICS:
        order, ticks = _PCAP_MAGICS[magic_le]
    elif magic_be in _PCAP_MAGICS:
        order, ticks = _PCAP_MAGICS[magic_be]
        order = ">"
    else:
        raise PcapFormatError(f"unrecognized pcap magic: 0x{magic_le:08x}")
    link_type = struct.unpack_from(order + "I", data, 20)[0]
    if link_type != 1:
        raise PcapFormatError(f"unsupported link type {link_type} (Ethernet only)")

    kind, needle = _parse_selector(device_selector)
    rec_hdr = struct.Struct(order + "IIII")
    offset = 24
    midnight_ticks: Optional[int] = None
    packets: list[PacketRecord] = []

    while offset + rec_hdr.size <= len(data):
        ts_sec, ts_frac, incl_len, orig_len = rec_hdr.unpack_from(data, offset)
        offset += rec_hdr.size
        if offset + incl_len > len(data):
            raise PcapFormatError("truncated pcap record")
        frame = data[offset : offset + incl_len]
        offset += incl_len

        if midnight_ticks is None:
            midnight_ticks = (ts_sec // DAY_SECONDS) * DAY_SECONDS * ticks
        rel_ticks = (ts_sec * ticks + ts_frac) - midnight_ticks
        timestamp = rel_ticks / ticks
        if not 0 <= timestamp < ANALYSIS_SECONDS:
            continue

        if len(frame) < 14:
            continue
        ethertype = struct.unpack_from("!H", frame, 12)[0]
        network = frame[14:]

        if ethertype == _ETHERTYPE_IPV4:
            if len(network) < 20:
                continue
            ihl = (network[0] & 0x0F) * 4
            ip_proto = network[9]
            src_addr, dst_addr = network[12:16], network[16:20]
            transport = network[ihl:]
        elif ethertype == _ETHERTYPE_IPV6:
            if len(network) < 40:
                continue
            ip_proto = network[6]
            src_addr, dst_addr = network[8:24], network[24:40]
            transport = network[40:]
            while ip_proto in _IPV6_EXTENSIONS and len(transport) >= 8:
                ext_len = (transport[1] + 1) * 8
                ip_proto = transport[0]
                transport = transport[ext_len:]
        else:
            continue

        if kind == "mac":
            src_id, dst_id = frame[6:12], frame[0:6]
        else:
            src_id, dst_id = src_addr, dst_addr
        if src_id == needle:
            direction = Direction.FROM_DEVICE
        elif dst_id == needle:
            direction = Direction.TO_DEVICE
        else:
            continue

        src_port, dst_port, payload = _transport_fields(ip_proto, transport)
        lane = classify_lane(ip_proto, src_port, dst_port, payload, assume_ocsp_ports)
        if lane is None:
            continue
        if lane in (ProtocolLane.ICMP, ProtocolLane.IGMP):
            src_port = dst_port = None
        packets.append(
            PacketRecord(
                timestamp=timestamp,
                direction=direction,
                size=orig_len,
                src_port=src_port,
                dst_port=dst_port,
                lane=lane,
            )
        )

    packets.sort(key=lambda p: p.timestamp)
    return DeviceDayCapture(
        device_id=device_id if device_id is not None else device_selector,
        day_index=day_index,
        packets=packets,
    )
