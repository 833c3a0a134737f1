"""Synthetic traffic lab: periodic per-lane beacons, version perturbations,
and a classic-pcap writer, so the whole pipeline can run without real captures.

Devices do the same thing periodically: each beacon emits (bursts of) packets
at ``phase + k * period`` with bounded jitter. Every packet is also written to
an emission log carrying its ground-truth lane, which downstream tests use as
the parsing oracle.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .capture import ANALYSIS_SECONDS, DAY_SECONDS, DeviceDayCapture, Direction, PacketRecord, ProtocolLane

MICROS = 1_000_000
FRAME_MIN = 40
FRAME_MAX = 1514
# Synthetic capture epoch: 2024-01-01 00:00:00 UTC (a multiple of 86400).
BASE_EPOCH = 1_704_067_200

_DEFAULT_REMOTE_PORT = {
    ProtocolLane.TCP: 8081,
    ProtocolLane.HTTP: 80,
    ProtocolLane.OCSP: 80,
    ProtocolLane.TLS: 443,
    ProtocolLane.UDP: 9999,
    ProtocolLane.DNS: 53,
    ProtocolLane.NTP: 123,
    ProtocolLane.MDNS: 5353,
    ProtocolLane.SSDP: 1900,
    ProtocolLane.SIP: 5060,
    ProtocolLane.QUIC: 443,
}
_TCP_LANES = {ProtocolLane.TCP, ProtocolLane.HTTP, ProtocolLane.OCSP, ProtocolLane.TLS}
_PORTLESS_LANES = {ProtocolLane.ICMP, ProtocolLane.IGMP}
_PAYLOAD_MARKER = {
    ProtocolLane.HTTP: b"GET / HTTP/1.1\r\n",
    ProtocolLane.OCSP: b"OCSP",
    ProtocolLane.TLS: b"\x16\x03\x03",
}


@dataclass(frozen=True)
class BeaconSpec:
    """One periodic emitter on one protocol lane."""

    lane: ProtocolLane
    period_s: float
    jitter_s: float = 0.0
    phase_s: float = 0.0
    size_mean: float = 120.0
    size_sd: float = 0.0
    size_min: int = 60
    size_max: int = FRAME_MAX
    client_fraction: float = 1.0  # probability a packet leaves the device
    device_port: Union[int, tuple[int, int]] = (49152, 49407)
    remote_port: Optional[int] = None
    burst_n: int = 1
    burst_gap_s: float = 0.25

    def __post_init__(self) -> None:
        if self.period_s <= 0:
            raise ValueError("beacon period must be positive")
        if not FRAME_MIN <= self.size_min <= self.size_mean <= self.size_max <= FRAME_MAX:
            raise ValueError("beacon sizes must satisfy 40 <= min <= mean <= max <= 1514")
        if self.burst_n < 1:
            raise ValueError("burst_n must be at least 1")

    @property
    def effective_remote_port(self) -> Optional[int]:
        if self.lane in _PORTLESS_LANES:
            return None
        if self.remote_port is not None:
            return self.remote_port
        return _DEFAULT_REMOTE_PORT[self.lane]


@dataclass(frozen=True)
class DeviceProfile:
    device_id: str
    beacons: tuple[BeaconSpec, ...]
    seed: int = 0
    # Optional quiet periods: no traffic at or after this many seconds.
    quiet_after_s: Optional[float] = None
    quiet_after_by_day: dict[int, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.beacons:
            raise ValueError("a device profile needs at least one beacon")

    @property
    def lane_set(self) -> frozenset[ProtocolLane]:
        return frozenset(b.lane for b in self.beacons)

    def traffic_limit(self, day_index: int) -> float:
        if day_index in self.quiet_after_by_day:
            return self.quiet_after_by_day[day_index]
        if self.quiet_after_s is not None:
            return self.quiet_after_s
        return float(ANALYSIS_SECONDS)


class PerturbationKind(Enum):
    NONE = "none"
    SUBTLE = "subtle"
    LARGE = "large"


@dataclass(frozen=True)
class VersionPerturbation:
    """A firmware-version edit to a profile.

    None leaves the profile untouched (no on-wire difference). Subtle is a
    single edit that keeps the lane set: scale one beacon's period by at most
    25%, shift one size mean by at most 25%, or drop one beacon whose lane is
    still covered. Large adds or removes at least one lane.
    """

    kind: PerturbationKind
    edits: tuple[dict, ...] = ()


def apply_perturbation(profile: DeviceProfile, perturbation: VersionPerturbation) -> DeviceProfile:
    """Return the perturbed profile; the original is never modified."""
    beacons = list(profile.beacons)
    for edit in perturbation.edits:
        op = edit["op"]
        if op == "add_beacon":
            spec = edit["beacon"]
            beacons.append(spec if isinstance(spec, BeaconSpec) else beacon_from_dict(spec))
        elif op == "drop_beacon":
            del beacons[edit["index"]]
        elif op == "scale_period":
            i = edit["index"]
            beacons[i] = replace(beacons[i], period_s=beacons[i].period_s * edit["factor"])
        elif op == "adjust_size":
            i = edit["index"]
            b = beacons[i]
            mean = min(max(b.size_mean + edit["delta"], float(b.size_min)), float(b.size_max))
            beacons[i] = replace(b, size_mean=mean)
        else:
            raise ValueError(f"unknown perturbation op {op!r}")
    result = replace(profile, beacons=tuple(beacons))

    kind = perturbation.kind
    if kind is PerturbationKind.NONE:
        if perturbation.edits:
            raise ValueError("a None perturbation carries no edits")
    elif kind is PerturbationKind.SUBTLE:
        if len(perturbation.edits) != 1:
            raise ValueError("a Subtle perturbation is a single edit")
        edit = perturbation.edits[0]
        if edit["op"] == "add_beacon":
            raise ValueError("a Subtle perturbation cannot add beacons")
        if edit["op"] == "scale_period" and abs(edit["factor"] - 1.0) > 0.25:
            raise ValueError("Subtle period change is limited to 25%")
        if edit["op"] == "adjust_size":
            original = profile.beacons[edit["index"]]
            if abs(edit["delta"]) > 0.25 * original.size_mean:
                raise ValueError("Subtle size change is limited to 25%")
        if result.lane_set != profile.lane_set:
            raise ValueError("a Subtle perturbation must keep the lane set")
    elif kind is PerturbationKind.LARGE:
        if result.lane_set == profile.lane_set:
            raise ValueError("a Large perturbation must add or remove a lane")
    return result


@dataclass(frozen=True)
class EmissionRecord:
    """Ground truth for one emitted packet (timestamps in whole microseconds)."""

    t_us: int
    lane: ProtocolLane
    direction: Direction
    size: int
    src_port: Optional[int]
    dst_port: Optional[int]


def _frame_floor(lane: ProtocolLane) -> int:
    l4 = 20 if lane in _TCP_LANES else 8
    return 14 + 20 + l4 + len(_PAYLOAD_MARKER.get(lane, b""))


def synth_day(
    profile: DeviceProfile, day_index: int, seed: int
) -> tuple[DeviceDayCapture, list[EmissionRecord]]:
    """Generate one device-day of traffic, fully determined by its inputs.

    Beacon k fires at ``phase + k * period + jitter * u`` with u drawn
    uniformly from [-1, 1]; emissions falling outside the day's active span
    are discarded.
    """
    emissions: list[EmissionRecord] = []
    limit = min(profile.traffic_limit(day_index), float(ANALYSIS_SECONDS))
    for b_idx, beacon in enumerate(profile.beacons):
        rng = np.random.default_rng([seed, profile.seed, day_index, b_idx])
        remote_port = beacon.effective_remote_port
        k = 0
        while beacon.phase_s + k * beacon.period_s < ANALYSIS_SECONDS:
            base = beacon.phase_s + k * beacon.period_s
            if beacon.jitter_s > 0:
                base += beacon.jitter_s * rng.uniform(-1.0, 1.0)
            k += 1
            for j in range(beacon.burst_n):
                t = base + j * beacon.burst_gap_s
                size = float(rng.normal(beacon.size_mean, beacon.size_sd))
                outbound = bool(rng.random() < beacon.client_fraction)
                if isinstance(beacon.device_port, int):
                    device_port = beacon.device_port
                else:
                    lo, hi = beacon.device_port
                    device_port = int(rng.integers(lo, hi + 1))
                if not 0.0 <= t < limit:
                    continue
                size = int(round(size))
                size = max(size, beacon.size_min, _frame_floor(beacon.lane))
                size = min(size, beacon.size_max)
                if beacon.lane in _PORTLESS_LANES:
                    src_port = dst_port = None
                elif outbound:
                    src_port, dst_port = device_port, remote_port
                else:
                    src_port, dst_port = remote_port, device_port
                emissions.append(
                    EmissionRecord(
                        t_us=round(t * MICROS),
                        lane=beacon.lane,
                        direction=Direction.FROM_DEVICE if outbound else Direction.TO_DEVICE,
                        size=size,
                        src_port=src_port,
                        dst_port=dst_port,
                    )
                )
    emissions.sort(key=lambda e: e.t_us)
    packets = [
        PacketRecord(
            timestamp=e.t_us / MICROS,
            direction=e.direction,
            size=e.size,
            src_port=e.src_port,
            dst_port=e.dst_port,
            lane=e.lane,
        )
        for e in emissions
    ]
    return DeviceDayCapture(profile.device_id, day_index, packets), emissions


def device_mac(device_id: str) -> str:
    digest = hashlib.sha256(device_id.encode()).digest()
    return ":".join(f"{b:02x}" for b in (0x02,) + tuple(digest[:5]))


def device_ip(device_id: str) -> str:
    digest = hashlib.sha256(device_id.encode()).digest()
    return f"10.0.{digest[5] % 200 + 10}.{digest[6] % 200 + 10}"


_GATEWAY_MAC = "02:ff:00:00:00:01"
_REMOTE_IP = {
    ProtocolLane.MDNS: "224.0.0.251",
    ProtocolLane.SSDP: "239.255.255.250",
    ProtocolLane.IGMP: "224.0.0.22",
    ProtocolLane.ICMP: "10.0.0.1",
}


def _mac_bytes(mac: str) -> bytes:
    return bytes(int(p, 16) for p in mac.split(":"))


def _ip_bytes(ip: str) -> bytes:
    return bytes(int(p) for p in ip.split("."))


def _ip_checksum(header: bytes) -> int:
    total = sum(struct.unpack(f"!{len(header) // 2}H", header))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _build_frame(packet: PacketRecord, device_id: str) -> bytes:
    lane = packet.lane
    outbound = packet.direction is Direction.FROM_DEVICE
    dev_mac, gw_mac = _mac_bytes(device_mac(device_id)), _mac_bytes(_GATEWAY_MAC)
    dev_ip = _ip_bytes(device_ip(device_id))
    remote_ip = _ip_bytes(_REMOTE_IP.get(lane, f"198.51.100.{int(lane) + 1}"))
    src_mac, dst_mac = (dev_mac, gw_mac) if outbound else (gw_mac, dev_mac)
    src_ip, dst_ip = (dev_ip, remote_ip) if outbound else (remote_ip, dev_ip)

    if lane in _TCP_LANES:
        proto, l4_len = 6, 20
    elif lane in _PORTLESS_LANES:
        proto = 1 if lane is ProtocolLane.ICMP else 2
        l4_len = 8
    else:
        proto, l4_len = 17, 8

    marker = _PAYLOAD_MARKER.get(lane, b"")
    payload_len = packet.size - (14 + 20 + l4_len)
    if payload_len < len(marker):
        raise ValueError(f"packet of {packet.size} bytes cannot carry the {lane.name} payload")
    payload = marker + b"\x00" * (payload_len - len(marker))

    if proto == 6:
        l4 = struct.pack(
            "!HHIIBBHHH", packet.src_port, packet.dst_port, 0, 0, 5 << 4, 0x18, 8192, 0, 0
        )
    elif proto == 17:
        l4 = struct.pack("!HHHH", packet.src_port, packet.dst_port, 8 + payload_len, 0)
    elif proto == 1:
        l4 = struct.pack("!BBHHH", 8 if outbound else 0, 0, 0, 1, 1)
    else:
        l4 = struct.pack("!BBH", 0x16, 0, 0) + _ip_bytes("224.0.0.22")

    total_len = 20 + l4_len + payload_len
    ip_wo_csum = struct.pack(
        "!BBHHHBBH4s4s", 0x45, 0, total_len, 0, 0x4000, 64, proto, 0, src_ip, dst_ip
    )
    csum = _ip_checksum(ip_wo_csum)
    ip = struct.pack(
        "!BBHHHBBH4s4s", 0x45, 0, total_len, 0, 0x4000, 64, proto, csum, src_ip, dst_ip
    )
    return dst_mac + src_mac + struct.pack("!H", 0x0800) + ip + l4 + payload


def write_pcap(capture: DeviceDayCapture, path: Path) -> Path:
    """Write a classic microsecond pcap that parse_capture can fully recover."""
    day_epoch = BASE_EPOCH + (capture.day_index - 1) * DAY_SECONDS
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1))
        for packet in capture.packets:
            t_us = round(packet.timestamp * MICROS)
            frame = _build_frame(packet, capture.device_id)
            fh.write(
                struct.pack(
                    "<IIII",
                    day_epoch + t_us // MICROS,
                    t_us % MICROS,
                    len(frame),
                    packet.size,
                )
            )
            fh.write(frame)
    return path


def write_emission_log(emissions: Sequence[EmissionRecord], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for e in emissions:
            fh.write(
                json.dumps(
                    {
                        "t_us": e.t_us,
                        "lane": e.lane.name,
                        "direction": e.direction.value,
                        "size": e.size,
                        "src_port": e.src_port,
                        "dst_port": e.dst_port,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    return path


def read_emission_log(path: Path) -> list[EmissionRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            records.append(
                EmissionRecord(
                    t_us=rec["t_us"],
                    lane=ProtocolLane[rec["lane"]],
                    direction=Direction(rec["direction"]),
                    size=rec["size"],
                    src_port=rec["src_port"],
                    dst_port=rec["dst_port"],
                )
            )
    return records


def beacon_from_dict(data: dict) -> BeaconSpec:
    data = dict(data)
    data["lane"] = ProtocolLane[data["lane"]]
    if isinstance(data.get("device_port"), list):
        data["device_port"] = tuple(data["device_port"])
    return BeaconSpec(**data)


def profile_to_dict(profile: DeviceProfile) -> dict:
    data = asdict(profile)
    for beacon in data["beacons"]:
        beacon["lane"] = ProtocolLane(beacon["lane"]).name
    data["beacons"] = list(data["beacons"])
    data["quiet_after_by_day"] = {str(k): v for k, v in profile.quiet_after_by_day.items()}
    return data


def profile_from_dict(data: dict) -> DeviceProfile:
    return DeviceProfile(
        device_id=data["device_id"],
        beacons=tuple(beacon_from_dict(b) for b in data["beacons"]),
        seed=data.get("seed", 0),
        quiet_after_s=data.get("quiet_after_s"),
        quiet_after_by_day={int(k): v for k, v in data.get("quiet_after_by_day", {}).items()},
    )


def perturbation_to_dict(p: VersionPerturbation) -> dict:
    edits = []
    for edit in p.edits:
        edit = dict(edit)
        if isinstance(edit.get("beacon"), BeaconSpec) or isinstance(edit.get("beacon"), dict):
            beacon = edit["beacon"]
            if isinstance(beacon, BeaconSpec):
                beacon = asdict(beacon)
                beacon["lane"] = BeaconSpec(**{**beacon, "lane": ProtocolLane(beacon["lane"])}).lane.name
            edit["beacon"] = beacon
        edits.append(edit)
    return {"kind": p.kind.value, "edits": edits}


def perturbation_from_dict(data: dict) -> VersionPerturbation:
    return VersionPerturbation(
        kind=PerturbationKind(data["kind"]),
        edits=tuple(data.get("edits", ())),
    )
