"""Windowed flow statistics: 30 overlapping windows x 13 lanes x 53 features."""
from __future__ import annotations

import csv
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .capture import ANALYSIS_SECONDS, LANE_COUNT, DeviceDayCapture, Direction, PacketRecord

WINDOW_COUNT = 30
WINDOW_STRIDE = 720.0  # seconds between window starts (20% overlap on 900 s)
WINDOW_WIDTH = 900.0

_DIRECTIONS_CSB = ("client", "server", "both")
_PACKET_STATS = (
    "count",
    "mean_size",
    "max_size",
    "min_size",
    "size_range",
    "median_size",
    "mean_bps",
)
_TIMING_STATS = ("sum_gap", "max_gap", "min_gap", "mean_gap", "median_gap", "gap_range")
_PORT_STATS = ("max_port", "min_port", "port_range", "mean_port", "median_port")

FEATURE_COLUMNS: tuple[str, ...] = (
    ("client_packet_ratio", "mean_pps_client", "mean_pps_server", "mean_pps_both")
    + tuple(f"{stat}_{d}" for stat in _PACKET_STATS for d in _DIRECTIONS_CSB)
    + tuple(f"{stat}_{d}" for stat in _TIMING_STATS for d in _DIRECTIONS_CSB)
    + tuple(f"{stat}_{d}" for stat in _PORT_STATS for d in ("client", "server"))
)
FEATURE_COUNT = len(FEATURE_COLUMNS)  # 53

# Column spans of the four normalization groups on the image X axis.
CROSS_GROUP = slice(0, 4)
PACKET_GROUP = slice(4, 25)
TIMING_GROUP = slice(25, 43)
PORT_GROUP = slice(43, 53)


@dataclass(frozen=True)
class WindowPlan:
    index: int
    start: float
    end: float

    @property
    def length(self) -> float:
        return self.end - self.start


def plan_windows() -> list[WindowPlan]:
    """The 30 per-day windows: 900 s wide, 720 s stride, last truncated at 06:00."""
    windows = []
    for i in range(WINDOW_COUNT):
        start = i * WINDOW_STRIDE
        end = min(start + WINDOW_WIDTH, float(ANALYSIS_SECONDS))
        windows.append(WindowPlan(index=i, start=start, end=end))
    return windows


def _median(values: Sequence[float]) -> float:
    ordered = sorted(values)
    n = len(ordered)
    mid = n // 2
    if n % 2:
        return float(ordered[mid])
    return (ordered[mid - 1] + ordered[mid]) / 2.0


def _size_block(packets: Sequence[PacketRecord], effective: float) -> dict[str, float]:
    if not packets:
        return {stat: 0.0 for stat in _PACKET_STATS}
    sizes = [float(p.size) for p in packets]
    return {
        "count": float(len(sizes)),
        "mean_size": sum(sizes) / len(sizes),
        "max_size": max(sizes),
        "min_size": min(sizes),
        "size_range": max(sizes) - min(sizes),
        "median_size": _median(sizes),
        "mean_bps": sum(sizes) / effective,
    }


def _gap_block(packets: Sequence[PacketRecord]) -> dict[str, float]:
    if len(packets) < 2:
        return {stat: 0.0 for stat in _TIMING_STATS}
    gaps = [b.timestamp - a.timestamp for a, b in zip(packets, packets[1:])]
    return {
        "sum_gap": sum(gaps),
        "max_gap": max(gaps),
        "min_gap": min(gaps),
        "mean_gap": sum(gaps) / len(gaps),
        "median_gap": _median(gaps),
        "gap_range": max(gaps) - min(gaps),
    }


def _port_block(ports: Sequence[int]) -> dict[str, float]:
    if not ports:
        return {stat: 0.0 for stat in _PORT_STATS}
    vals = [float(p) for p in ports]
    return {
        "max_port": max(vals),
        "min_port": min(vals),
        "port_range": max(vals) - min(vals),
        "mean_port": sum(vals) / len(vals),
        "median_port": _median(vals),
    }


def compute_lane_stats(packets: Sequence[PacketRecord], window: WindowPlan) -> np.ndarray:
    """The 53-feature vector for one lane in one window.

    ``packets`` must be sorted by timestamp and restricted to the window and
    lane. Rates divide by the effective window length so the truncated final
    window is not deflated. Empty input yields all zeros; gap statistics
    require at least two packets in the direction subset.
    """
    effective = window.length
    client = [p for p in packets if p.direction is Direction.FROM_DEVICE]
    server = [p for p in packets if p.direction is Direction.TO_DEVICE]
    both = list(packets)

    total = len(both)
    values: list[float] = [
        len(client) / total if total else 0.0,
        len(client) / effective,
        len(server) / effective,
        total / effective,
    ]

    subsets = (client, server, both)
    size_blocks = [_size_block(s, effective) for s in subsets]
    for stat in _PACKET_STATS:
        values.extend(block[stat] for block in size_blocks)

    gap_blocks = [_gap_block(s) for s in subsets]
    for stat in _TIMING_STATS:
        values.extend(block[stat] for block in gap_blocks)

    with_ports = [p for p in both if p.src_port is not None]
    device_ports = _port_block([p.device_port for p in with_ports])
    remote_ports = _port_block([p.remote_port for p in with_ports])
    for stat in _PORT_STATS:
        values.append(device_ports[stat])
        values.append(remote_ports[stat])

    return np.asarray(values, dtype=np.float64)


@dataclass
class DeviceDayStats:
    """Per-window, per-lane feature vectors for one device-day."""

    device_id: str
    day_index: int
    values: np.ndarray  # (30, 13, 53) float64

    def __post_init__(self) -> None:
        expected = (WINDOW_COUNT, LANE_COUNT, FEATURE_COUNT)
        if self.values.shape != expected:
            raise ValueError(f"stats shape {self.values.shape} != {expected}")


def compute_device_day(capture: DeviceDayCapture) -> DeviceDayStats:
    """Slice a capture into the 30 windows and compute per-lane statistics.

    A packet contributes to every window whose interval contains its
    timestamp; the 180 s overlap regions therefore feed two windows.
    """
    stamps = [p.timestamp for p in capture.packets]
    values = np.zeros((WINDOW_COUNT, LANE_COUNT, FEATURE_COUNT), dtype=np.float64)
    for window in plan_windows():
        lo = bisect_left(stamps, window.start)
        hi = bisect_right(stamps, window.end)
        in_window = [p for p in capture.packets[lo:hi] if window.start <= p.timestamp < window.end]
        by_lane: dict[int, list[PacketRecord]] = {}
        for pkt in in_window:
            by_lane.setdefault(int(pkt.lane), []).append(pkt)
        for lane, lane_packets in by_lane.items():
            values[window.index, lane] = compute_lane_stats(lane_packets, window)
    return DeviceDayStats(capture.device_id, capture.day_index, values)


def write_stats_csv(stats: DeviceDayStats, path: Path) -> None:
    """Dump one device-day as CSV: 30x13 rows, fixed feature column order."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("window", "lane") + FEATURE_COLUMNS)
        for w in range(WINDOW_COUNT):
            for lane in range(LANE_COUNT):
                row = [w, lane] + [repr(float(v)) for v in stats.values[w, lane]]
                writer.writerow(row)


def read_stats_csv(path: Path, device_id: str, day_index: int) -> DeviceDayStats:
    values = np.zeros((WINDOW_COUNT, LANE_COUNT, FEATURE_COUNT), dtype=np.float64)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[2:]) != FEATURE_COLUMNS:
            raise ValueError(f"unexpected stats columns in {path}")
        for row in reader:
            w, lane = int(row[0]), int(row[1])
            values[w, lane] = [float(v) for v in row[2:]]
    return DeviceDayStats(device_id, day_index, values)
