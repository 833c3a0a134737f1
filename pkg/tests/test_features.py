"""Window planning and the 53-feature statistics against a naive oracle."""
from __future__ import annotations

import random
import statistics

import numpy as np
import pytest

from fwdrift.capture import Direction, PacketRecord, ProtocolLane
from fwdrift.features import (
    FEATURE_COLUMNS,
    FEATURE_COUNT,
    WINDOW_COUNT,
    DeviceDayStats,
    compute_device_day,
    compute_lane_stats,
    plan_windows,
    read_stats_csv,
    write_stats_csv,
)
from fwdrift.capture import DeviceDayCapture

COL = {name: i for i, name in enumerate(FEATURE_COLUMNS)}


def naive_lane_stats(packets, window):
    """Independent recomputation of every feature, statistics-module based."""
    length = window.end - window.start
    client = [p for p in packets if p.direction is Direction.FROM_DEVICE]
    server = [p for p in packets if p.direction is Direction.TO_DEVICE]
    both = list(packets)
    out = {}
    out["client_packet_ratio"] = len(client) / len(both) if both else 0.0
    out["mean_pps_client"] = len(client) / length
    out["mean_pps_server"] = len(server) / length
    out["mean_pps_both"] = len(both) / length
    for name, subset in (("client", client), ("server", server), ("both", both)):
        sizes = [p.size for p in subset]
        if sizes:
            out[f"count_{name}"] = len(sizes)
            out[f"mean_size_{name}"] = statistics.mean(sizes)
            out[f"max_size_{name}"] = max(sizes)
            out[f"min_size_{name}"] = min(sizes)
            out[f"size_range_{name}"] = max(sizes) - min(sizes)
            out[f"median_size_{name}"] = statistics.median(sizes)
            out[f"mean_bps_{name}"] = sum(sizes) / length
        else:
            for stat in ("count", "mean_size", "max_size", "min_size", "size_range", "median_size", "mean_bps"):
                out[f"{stat}_{name}"] = 0.0
        gaps = [b.timestamp - a.timestamp for a, b in zip(subset, subset[1:])]
        if gaps:
            out[f"sum_gap_{name}"] = sum(gaps)
            out[f"max_gap_{name}"] = max(gaps)
            out[f"min_gap_{name}"] = min(gaps)
            out[f"mean_gap_{name}"] = statistics.mean(gaps)
            out[f"median_gap_{name}"] = statistics.median(gaps)
            out[f"gap_range_{name}"] = max(gaps) - min(gaps)
        else:
            for stat in ("sum_gap", "max_gap", "min_gap", "mean_gap", "median_gap", "gap_range"):
                out[f"{stat}_{name}"] = 0.0
    with_ports = [p for p in both if p.src_port is not None]
    for name, values in (
        ("client", [p.src_port if p.direction is Direction.FROM_DEVICE else p.dst_port for p in with_ports]),
        ("server", [p.dst_port if p.direction is Direction.FROM_DEVICE else p.src_port for p in with_ports]),
    ):
        if values:
            out[f"max_port_{name}"] = max(values)
            out[f"min_port_{name}"] = min(values)
            out[f"port_range_{name}"] = max(values) - min(values)
            out[f"mean_port_{name}"] = statistics.mean(values)
            out[f"median_port_{name}"] = statistics.median(values)
        else:
            for stat in ("max_port", "min_port", "port_range", "mean_port", "median_port"):
                out[f"{stat}_{name}"] = 0.0
    return [out[name] for name in FEATURE_COLUMNS]


def random_window_packets(rng, window, lane=ProtocolLane.TLS, n=None):
    n = rng.randint(0, 40) if n is None else n
    stamps = sorted(rng.uniform(window.start, window.end - 1e-6) for _ in range(n))
    packets = []
    for t in stamps:
        direction = Direction.FROM_DEVICE if rng.random() < 0.6 else Direction.TO_DEVICE
        portless = lane in (ProtocolLane.ICMP, ProtocolLane.IGMP)
        packets.append(
            PacketRecord(
                timestamp=t,
                direction=direction,
                size=rng.randint(40, 1514),
                src_port=None if portless else rng.randint(0, 65535),
                dst_port=None if portless else rng.randint(0, 65535),
                lane=lane,
            )
        )
    return packets


def test_window_plan_matches_published_slots():
    windows = plan_windows()
    assert len(windows) == WINDOW_COUNT == 30
    assert (windows[0].start, windows[0].end) == (0.0, 900.0)  # 00:00 - 00:15
    assert (windows[2].start, windows[2].end) == (1440.0, 2340.0)  # 00:24 - 00:39
    # 29 * 720 = 20880; a full 900 s window would overrun 06:00, so truncated
    assert (windows[29].start, windows[29].end) == (20880.0, 21600.0)


def test_window_plan_coverage_and_overlap():
    windows = plan_windows()
    assert windows[0].start == 0.0 and windows[-1].end == 21600.0
    for a, b in zip(windows, windows[1:]):
        assert b.start - a.start == 720.0
        assert a.end - b.start == 180.0  # the 20% overlap
        assert b.start < a.end


def test_feature_layout():
    assert FEATURE_COUNT == 53
    assert FEATURE_COLUMNS[:4] == (
        "client_packet_ratio", "mean_pps_client", "mean_pps_server", "mean_pps_both",
    )
    assert len([c for c in FEATURE_COLUMNS if "size" in c or c.startswith("count") or "bps" in c]) == 21
    assert len([c for c in FEATURE_COLUMNS if "gap" in c]) == 18
    assert len([c for c in FEATURE_COLUMNS if "port" in c]) == 10


def test_lane_stats_worked_example():
    # sizes 60/120/60 from the device over the 900 s window
    window = plan_windows()[0]
    packets = [
        PacketRecord(10.0, Direction.FROM_DEVICE, 60, 49152, 443, ProtocolLane.TLS),
        PacketRecord(20.0, Direction.FROM_DEVICE, 120, 49152, 443, ProtocolLane.TLS),
        PacketRecord(30.0, Direction.FROM_DEVICE, 60, 49152, 443, ProtocolLane.TLS),
    ]
    v = compute_lane_stats(packets, window)
    assert v[COL["count_client"]] == 3
    assert v[COL["mean_size_client"]] == 80
    assert v[COL["max_size_client"]] == 120
    assert v[COL["min_size_client"]] == 60
    assert v[COL["size_range_client"]] == 60
    assert v[COL["median_size_client"]] == 60
    assert v[COL["mean_pps_client"]] == 3 / 900


def test_lane_stats_empty_window_is_all_zero():
    assert (compute_lane_stats([], plan_windows()[0]) == 0).all()


def test_lane_stats_two_packet_gaps():
    window = plan_windows()[0]
    packets = [
        PacketRecord(10.0, Direction.FROM_DEVICE, 60, 1000, 443, ProtocolLane.TLS),
        PacketRecord(70.0, Direction.FROM_DEVICE, 60, 1000, 443, ProtocolLane.TLS),
    ]
    v = compute_lane_stats(packets, window)
    for stat in ("sum_gap", "max_gap", "min_gap", "mean_gap", "median_gap"):
        assert v[COL[f"{stat}_client"]] == 60
    assert v[COL["gap_range_client"]] == 0


def test_single_packet_has_zero_gaps():
    window = plan_windows()[0]
    v = compute_lane_stats(
        [PacketRecord(5.0, Direction.TO_DEVICE, 99, 443, 50000, ProtocolLane.TLS)], window
    )
    assert v[COL["count_server"]] == 1
    assert v[COL["mean_size_server"]] == 99
    for stat in ("sum_gap", "max_gap", "min_gap", "mean_gap", "median_gap", "gap_range"):
        assert v[COL[f"{stat}_server"]] == 0


def test_port_columns_use_device_and_remote_sides():
    window = plan_windows()[0]
    packets = [
        # outbound: device port 1000, remote 443
        PacketRecord(1.0, Direction.FROM_DEVICE, 60, 1000, 443, ProtocolLane.TLS),
        # inbound: remote 443 -> device 1000
        PacketRecord(2.0, Direction.TO_DEVICE, 60, 443, 1000, ProtocolLane.TLS),
    ]
    v = compute_lane_stats(packets, window)
    assert v[COL["mean_port_client"]] == 1000
    assert v[COL["mean_port_server"]] == 443
    assert v[COL["port_range_client"]] == 0


def test_lane_stats_against_oracle_200_windows():
    rng = random.Random(1234)
    windows = plan_windows()
    for trial in range(200):
        window = windows[rng.randrange(30)]
        packets = random_window_packets(rng, window)
        got = compute_lane_stats(packets, window)
        want = naive_lane_stats(packets, window)
        np.testing.assert_allclose(got, want, rtol=1e-9, atol=0)


def test_sorted_permutation_invariance():
    rng = random.Random(77)
    window = plan_windows()[3]
    packets = random_window_packets(rng, window, n=25)
    shuffled = packets[:]
    rng.shuffle(shuffled)
    shuffled.sort(key=lambda p: p.timestamp)
    np.testing.assert_array_equal(
        compute_lane_stats(packets, window), compute_lane_stats(shuffled, window)
    )


def test_client_ratio_bounded():
    rng = random.Random(9)
    window = plan_windows()[0]
    for _ in range(50):
        packets = random_window_packets(rng, window)
        v = compute_lane_stats(packets, window)
        assert 0.0 <= v[COL["client_packet_ratio"]] <= 1.0


def _capture_with(packets):
    return DeviceDayCapture("dev", 1, sorted(packets, key=lambda p: p.timestamp))


def test_overlap_membership():
    mk = lambda t: PacketRecord(t, Direction.FROM_DEVICE, 60, 1, 8081, ProtocolLane.TCP)
    stats = compute_device_day(_capture_with([mk(850.0), mk(300.0)]))
    lane = int(ProtocolLane.TCP)
    # t=850 is inside windows 0 [0,900) and 1 [720,1620); t=300 only window 0
    assert stats.values[0, lane, COL["count_client"]] == 2
    assert stats.values[1, lane, COL["count_client"]] == 1
    assert stats.values[2, lane, COL["count_client"]] == 0


def test_drifting_burst_stays_within_one_window():
    # a 6-packet burst anywhere in [1680, 1920] sits inside window 2 [1440, 2340)
    for shift in (-120.0, 0.0, 120.0):
        t0 = 1800.0 + shift
        packets = [
            PacketRecord(t0 + i, Direction.FROM_DEVICE, 60, 1, 443, ProtocolLane.TLS)
            for i in range(6)
        ]
        stats = compute_device_day(_capture_with(packets))
        assert stats.values[2, int(ProtocolLane.TLS), COL["count_client"]] == 6


def test_stats_csv_round_trip(tmp_path):
    rng = random.Random(5)
    packets = []
    for lane in (ProtocolLane.TLS, ProtocolLane.ICMP):
        for w in range(0, 30, 3):
            packets.extend(random_window_packets(rng, plan_windows()[w], lane=lane, n=4))
    stats = compute_device_day(_capture_with(packets))
    path = tmp_path / "stats.csv"
    write_stats_csv(stats, path)
    back = read_stats_csv(path, "dev", 1)
    np.testing.assert_array_equal(stats.values, back.values)


def test_device_day_stats_shape_enforced():
    with pytest.raises(ValueError):
        DeviceDayStats("d", 1, np.zeros((29, 13, 53)))
