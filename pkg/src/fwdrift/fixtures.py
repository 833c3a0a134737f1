"""The shipped 12-device synthetic lab and corpus generation.

Devices 1-7 of each day run the base profile; from day 8 onward three
designated devices run a perturbed profile: one with no on-wire difference,
one with a subtle single-beacon change, and one that gains a whole protocol
lane. Device lane sets are distinct so fingerprints stay separable.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .capture import ProtocolLane as L
from .synth import (
    BeaconSpec,
    DeviceProfile,
    PerturbationKind,
    VersionPerturbation,
    apply_perturbation,
    device_ip,
    device_mac,
    profile_to_dict,
    synth_day,
    write_emission_log,
    write_pcap,
)

CHANGE_DAY = 8  # first day on the new firmware version


def fixture_profiles() -> list[DeviceProfile]:
    return [
        DeviceProfile(
            "plug-alpha",
            beacons=(
                BeaconSpec(L.TLS, period_s=300, jitter_s=5, phase_s=12, size_mean=150, size_sd=20, size_min=90, size_max=400, client_fraction=0.6),
                BeaconSpec(L.DNS, period_s=600, jitter_s=10, phase_s=33, size_mean=90, size_sd=8, size_min=70, size_max=160, client_fraction=0.5),
                BeaconSpec(L.ICMP, period_s=450, jitter_s=5, phase_s=71, size_mean=70, size_min=60, size_max=90),
            ),
            seed=101,
        ),
        DeviceProfile(
            "bulb-lumen",
            beacons=(
                BeaconSpec(L.UDP, period_s=120, jitter_s=15, phase_s=9, size_mean=110, size_sd=15, size_min=80, size_max=300, client_fraction=0.7),
                BeaconSpec(L.MDNS, period_s=480, jitter_s=35, phase_s=50, size_mean=160, size_sd=30, size_min=100, size_max=500),
                BeaconSpec(L.TLS, period_s=600, jitter_s=35, phase_s=120, size_mean=220, size_sd=40, size_min=100, size_max=700, client_fraction=0.5),
                BeaconSpec(L.ICMP, period_s=600, jitter_s=20, phase_s=18, size_mean=74, size_min=60, size_max=90, client_fraction=1.0),
                BeaconSpec(L.ICMP, period_s=350, jitter_s=20, phase_s=140, size_mean=74, size_min=60, size_max=90, client_fraction=0.2),
            ),
            seed=102,
        ),
        DeviceProfile(
            "cam-vista",
            beacons=(
                BeaconSpec(L.TCP, period_s=200, jitter_s=6, phase_s=25, size_mean=400, size_sd=80, size_min=120, size_max=1200, client_fraction=0.55, burst_n=2, burst_gap_s=0.2),
                BeaconSpec(L.TLS, period_s=350, jitter_s=8, phase_s=90, size_mean=600, size_sd=100, size_min=200, size_max=1400, client_fraction=0.5),
                BeaconSpec(L.ICMP, period_s=700, jitter_s=10, phase_s=160, size_mean=70, size_min=60, size_max=90),
            ),
            seed=103,
        ),
        DeviceProfile(
            "plug-nova",
            beacons=(
                BeaconSpec(L.TCP, period_s=240, jitter_s=6, phase_s=15, size_mean=120, size_sd=6, size_min=100, size_max=160, client_fraction=0.5, burst_n=3, burst_gap_s=0.1),
                BeaconSpec(L.TLS, period_s=480, jitter_s=10, phase_s=77, size_mean=180, size_sd=20, size_min=120, size_max=400, client_fraction=0.5),
                BeaconSpec(L.NTP, period_s=600, jitter_s=8, phase_s=130, size_mean=90, size_min=90, size_max=90, client_fraction=0.5),
            ),
            seed=104,
        ),
        DeviceProfile(
            "hub-home",
            beacons=(
                BeaconSpec(L.HTTP, period_s=300, jitter_s=8, phase_s=40, size_mean=260, size_sd=40, size_min=140, size_max=800, client_fraction=0.5),
                BeaconSpec(L.OCSP, period_s=1200, jitter_s=30, phase_s=300, size_mean=300, size_sd=30, size_min=200, size_max=500, client_fraction=0.5),
                BeaconSpec(L.NTP, period_s=256, jitter_s=4, phase_s=66, size_mean=90, size_min=90, size_max=90, client_fraction=0.5),
            ),
            seed=105,
        ),
        DeviceProfile(
            "speaker-echo",
            beacons=(
                BeaconSpec(L.MDNS, period_s=240, jitter_s=30, phase_s=21, size_mean=180, size_sd=40, size_min=90, size_max=600, burst_n=2, burst_gap_s=0.05),
                BeaconSpec(L.SSDP, period_s=600, jitter_s=45, phase_s=105, size_mean=320, size_sd=30, size_min=250, size_max=450, burst_n=3, burst_gap_s=0.12),
                BeaconSpec(L.QUIC, period_s=150, jitter_s=25, phase_s=58, size_mean=500, size_sd=150, size_min=100, size_max=1350, client_fraction=0.5),
            ),
            seed=106,
        ),
        DeviceProfile(
            "door-sentry",
            beacons=(
                BeaconSpec(L.SIP, period_s=90, jitter_s=12, phase_s=7, size_mean=540, size_sd=20, size_min=480, size_max=620, client_fraction=0.5),
                BeaconSpec(L.DNS, period_s=450, jitter_s=30, phase_s=88, size_mean=86, size_sd=6, size_min=70, size_max=140, client_fraction=0.5),
                BeaconSpec(L.TLS, period_s=600, jitter_s=35, phase_s=190, size_mean=300, size_sd=60, size_min=150, size_max=800, client_fraction=0.5),
            ),
            seed=107,
        ),
        DeviceProfile(
            "sense-motion",
            beacons=(
                BeaconSpec(L.IGMP, period_s=500, jitter_s=10, phase_s=44, size_mean=60, size_min=60, size_max=90),
                BeaconSpec(L.MDNS, period_s=220, jitter_s=6, phase_s=16, size_mean=140, size_sd=25, size_min=90, size_max=350),
                BeaconSpec(L.UDP, period_s=340, jitter_s=8, phase_s=98, size_mean=96, size_sd=10, size_min=70, size_max=180, client_fraction=0.65),
            ),
            seed=108,
        ),
        DeviceProfile(
            "switch-core",
            beacons=(
                BeaconSpec(L.HTTP, period_s=280, jitter_s=7, phase_s=31, size_mean=420, size_sd=60, size_min=200, size_max=900, client_fraction=0.5),
                BeaconSpec(L.NTP, period_s=512, jitter_s=6, phase_s=120, size_mean=90, size_min=90, size_max=90, client_fraction=0.5),
                BeaconSpec(L.IGMP, period_s=640, jitter_s=10, phase_s=208, size_mean=60, size_min=60, size_max=90),
            ),
            seed=109,
            # Sleeps early on day 3, leaving 28 usable windows that day.
            quiet_after_by_day={3: 20160.0},
        ),
        DeviceProfile(
            "bridge-zmote",
            beacons=(
                BeaconSpec(L.TLS, period_s=240, jitter_s=6, phase_s=12, size_mean=200, size_sd=30, size_min=120, size_max=500, client_fraction=0.5),
                BeaconSpec(L.DNS, period_s=560, jitter_s=12, phase_s=95, size_mean=88, size_sd=8, size_min=70, size_max=150, client_fraction=0.5),
            ),
            seed=110,
            # Only talks in the first 22 windows of any day.
            quiet_after_s=15840.0,
        ),
        DeviceProfile(
            "tv-cast",
            beacons=(
                BeaconSpec(L.QUIC, period_s=100, jitter_s=4, phase_s=6, size_mean=900, size_sd=200, size_min=300, size_max=1450, client_fraction=0.5, burst_n=4, burst_gap_s=0.08),
                BeaconSpec(L.TCP, period_s=500, jitter_s=10, phase_s=170, size_mean=340, size_sd=50, size_min=150, size_max=900, client_fraction=0.5),
                BeaconSpec(L.HTTP, period_s=720, jitter_s=15, phase_s=260, size_mean=280, size_sd=40, size_min=160, size_max=600, client_fraction=0.5),
            ),
            seed=111,
        ),
        DeviceProfile(
            "fridge-frost",
            beacons=(
                BeaconSpec(L.UDP, period_s=360, jitter_s=8, phase_s=27, size_mean=150, size_sd=20, size_min=100, size_max=300, client_fraction=0.7),
                BeaconSpec(L.NTP, period_s=512, jitter_s=5, phase_s=140, size_mean=90, size_min=90, size_max=90, client_fraction=0.5),
                BeaconSpec(L.SSDP, period_s=660, jitter_s=12, phase_s=230, size_mean=310, size_sd=25, size_min=250, size_max=420),
                BeaconSpec(L.ICMP, period_s=450, jitter_s=8, phase_s=60, size_mean=70, size_min=60, size_max=90, client_fraction=0.0),
            ),
            seed=112,
        ),
    ]


def fixture_perturbations() -> dict[str, VersionPerturbation]:
    """The three designated version changers: invisible, subtle, large."""
    return {
        # New firmware with no on-wire difference at all.
        "plug-nova": VersionPerturbation(PerturbationKind.NONE),
        # The bulb stops pinging the gateway but still receives pings.
        "bulb-lumen": VersionPerturbation(
            PerturbationKind.SUBTLE, edits=({"op": "drop_beacon", "index": 3},)
        ),
        # The camera starts speaking a loud UDP telemetry protocol, stops
        # pinging entirely, and its TCP/TLS volume drops at the same time.
        "cam-vista": VersionPerturbation(
            PerturbationKind.LARGE,
            edits=(
                {
                    "op": "add_beacon",
                    "beacon": BeaconSpec(
                        L.UDP, period_s=45, jitter_s=3, phase_s=11,
                        size_mean=420, size_sd=40, size_min=200, size_max=900,
                        burst_n=2, burst_gap_s=0.3,
                    ),
                },
                {"op": "drop_beacon", "index": 2},
                {"op": "adjust_size", "index": 0, "delta": -220.0},
                {"op": "scale_period", "index": 1, "factor": 2.0},
            ),
        ),
    }


@dataclass
class CorpusManifest:
    seed: int
    days: int
    change_day: int
    devices: list[dict]

    @property
    def changed_devices(self) -> list[str]:
        return [d["device_id"] for d in self.devices if d["perturbation"] is not None]

    def perturbation_kind(self, device_id: str) -> Optional[str]:
        for d in self.devices:
            if d["device_id"] == device_id:
                return d["perturbation"]
        raise KeyError(device_id)


def generate_corpus(
    root: Path,
    seed: int,
    days: int = 11,
    devices: Optional[Sequence[str]] = None,
) -> CorpusManifest:
    """Synthesize pcaps and emission logs for the fixture lab under ``root``."""
    root = Path(root)
    profiles = fixture_profiles()
    if devices is not None:
        wanted = set(devices)
        profiles = [p for p in profiles if p.device_id in wanted]
        missing = wanted - {p.device_id for p in profiles}
        if missing:
            raise ValueError(f"unknown fixture devices: {sorted(missing)}")
    perturbations = fixture_perturbations()

    manifest_devices = []
    for profile in profiles:
        perturbation = perturbations.get(profile.device_id)
        perturbed = (
            apply_perturbation(profile, perturbation) if perturbation is not None else profile
        )
        for day in range(1, days + 1):
            active = perturbed if (perturbation is not None and day >= CHANGE_DAY) else profile
            capture, emissions = synth_day(active, day, seed)
            stem = f"{profile.device_id}-day{day:02d}"
            write_pcap(capture, root / "pcaps" / f"{stem}.pcap")
            write_emission_log(emissions, root / "logs" / f"{stem}.jsonl")
        manifest_devices.append(
            {
                "device_id": profile.device_id,
                "mac": device_mac(profile.device_id),
                "ip": device_ip(profile.device_id),
                "perturbation": perturbation.kind.value if perturbation else None,
            }
        )

    (root / "profiles.json").write_text(
        json.dumps([profile_to_dict(p) for p in profiles], sort_keys=True, indent=2) + "\n"
    )
    manifest = CorpusManifest(seed=seed, days=days, change_day=CHANGE_DAY, devices=manifest_devices)
    (root / "corpus.json").write_text(
        json.dumps(
            {
                "seed": manifest.seed,
                "days": manifest.days,
                "change_day": manifest.change_day,
                "devices": manifest.devices,
            },
            sort_keys=True,
            indent=2,
        )
        + "\n"
    )
    return manifest


def load_corpus_manifest(root: Path) -> CorpusManifest:
    data = json.loads((Path(root) / "corpus.json").read_text())
    return CorpusManifest(
        seed=data["seed"],
        days=data["days"],
        change_day=data["change_day"],
        devices=data["devices"],
    )
