"""Labeled image pairs for training, validation and the two test experiments.

Anchors are always day 1. Training targets day 2, validation day 3, the
stable-version experiment days 4-7 and the version-change experiment days
8-11. Similar pairs are the full anchor x target cross product; dissimilar
pairs are sampled (with replacement) from other devices, the same number per
device as its similar pairs, so both labels stay balanced per anchor device.
"""
from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .images import FingerprintImage, ImageStore, IndexEntry

logger = logging.getLogger(__name__)

TRAIN_TARGET_DAY = 2
VALIDATION_TARGET_DAY = 3
STABLE_TEST_DAYS = (4, 5, 6, 7)
CHANGE_TEST_DAYS = (8, 9, 10, 11)


class PairLabel(IntEnum):
    SIMILAR = 0
    DISSIMILAR = 1


class Split(Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST_STABLE = "test_stable"
    TEST_CHANGE = "test_change"


@dataclass(frozen=True)
class ImagePair:
    left: FingerprintImage
    right: FingerprintImage
    label: PairLabel
    split: Split

    @property
    def provenance(self) -> tuple[tuple[str, int, int], tuple[str, int, int]]:
        return (self.left.key, self.right.key)


@dataclass
class PairSet:
    split: Split
    pairs: list[ImagePair]
    seed: int
    # (anchor device, target day) -> {"similar": n, "dissimilar": m}
    counts: dict[tuple[str, int], dict[str, int]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.pairs)


class PairingError(ValueError):
    pass


def gen_similar_pairs(
    anchor_day: Sequence[FingerprintImage],
    target_day: Sequence[FingerprintImage],
    split: Split,
    label: PairLabel = PairLabel.SIMILAR,
) -> list[ImagePair]:
    """Full cross product of one device's anchor-day and target-day images."""
    if not anchor_day or not target_day:
        device = anchor_day[0].device_id if anchor_day else (
            target_day[0].device_id if target_day else "?"
        )
        logger.warning("no images to pair for device %s (%s)", device, split.value)
        return []
    devices = {img.device_id for img in anchor_day} | {img.device_id for img in target_day}
    if len(devices) != 1:
        raise PairingError(f"same-device pairing got devices {sorted(devices)}")
    return [
        ImagePair(a, b, label, split) for a in anchor_day for b in target_day
    ]


def gen_dissimilar_pairs(
    anchor_day: Sequence[FingerprintImage],
    pool: Mapping[str, Sequence[FingerprintImage]],
    n: int,
    rng: np.random.Generator,
    split: Split,
) -> list[ImagePair]:
    """n negatives: pick a foreign device uniformly, then one of its images.

    Sampling is with replacement; anchors cycle through the anchor-day images
    so every anchor image contributes equally.
    """
    anchor_device = anchor_day[0].device_id if anchor_day else "?"
    foreign = sorted(d for d in pool if d != anchor_device and len(pool[d]) > 0)
    if not foreign:
        raise PairingError(f"no foreign images available for device {anchor_device}")
    pairs = []
    for i in range(n):
        left = anchor_day[i % len(anchor_day)]
        device = foreign[int(rng.integers(len(foreign)))]
        images = pool[device]
        right = images[int(rng.integers(len(images)))]
        pairs.append(ImagePair(left, right, PairLabel.DISSIMILAR, split))
    return pairs


def _device_rng(seed: int, device_id: str, stream: int) -> np.random.Generator:
    # Per-device derived seed keeps parallel generation deterministic.
    return np.random.default_rng([seed ^ zlib.crc32(device_id.encode()), stream])


class ImageCorpus:
    """Non-degenerate images grouped by device and day, loaded lazily."""

    def __init__(self, store: ImageStore, entries: Optional[Sequence[IndexEntry]] = None):
        self.store = store
        if entries is None:
            entries = store.load_index()
        self._by_device_day: dict[str, dict[int, list[IndexEntry]]] = {}
        for entry in entries:
            if entry.degenerate:
                continue
            self._by_device_day.setdefault(entry.device_id, {}).setdefault(
                entry.day, []
            ).append(entry)
        for days in self._by_device_day.values():
            for lst in days.values():
                lst.sort(key=lambda e: e.window)
        self._cache: dict[str, FingerprintImage] = {}

    @property
    def devices(self) -> list[str]:
        return sorted(self._by_device_day)

    def days(self, device_id: str) -> list[int]:
        return sorted(self._by_device_day.get(device_id, {}))

    def images(self, device_id: str, day: int) -> list[FingerprintImage]:
        entries = self._by_device_day.get(device_id, {}).get(day, [])
        out = []
        for entry in entries:
            if entry.path not in self._cache:
                self._cache[entry.path] = self.store.load(entry.path)
            out.append(self._cache[entry.path])
        return out


def build_splits(
    corpus: ImageCorpus,
    seed: int,
    change_devices: Optional[Sequence[str]] = None,
) -> dict[Split, PairSet]:
    """Assemble the four pair sets from an image corpus over days 1-11.

    Devices missing a split's required day are excluded from that split with
    a warning. ``change_devices`` limits the version-change split to devices
    whose firmware actually changed; None means every device with test days.
    Changing the seed re-draws only the dissimilar pairs.
    """
    sets = {split: PairSet(split, [], seed) for split in Split}
    change_set = set(change_devices) if change_devices is not None else None

    for device in corpus.devices:
        anchors = corpus.images(device, 1)
        if not anchors:
            logger.warning("device %s has no day-1 images; excluded everywhere", device)
            continue

        for split, target_day in (
            (Split.TRAIN, TRAIN_TARGET_DAY),
            (Split.VALIDATION, VALIDATION_TARGET_DAY),
        ):
            targets = corpus.images(device, target_day)
            if not targets:
                logger.warning(
                    "device %s missing day %d; excluded from %s",
                    device, target_day, split.value,
                )
                continue
            similar = gen_similar_pairs(anchors, targets, split)
            pool = {
                other: corpus.images(other, target_day)
                for other in corpus.devices
                if other != device
            }
            rng = _device_rng(seed, device, stream=target_day)
            dissimilar = gen_dissimilar_pairs(anchors, pool, len(similar), rng, split)
            sets[split].pairs.extend(similar)
            sets[split].pairs.extend(dissimilar)
            sets[split].counts[(device, target_day)] = {
                "similar": len(similar),
                "dissimilar": len(dissimilar),
            }

        for day in STABLE_TEST_DAYS:
            targets = corpus.images(device, day)
            if not targets:
                logger.warning("device %s missing day %d; excluded from test_stable", device, day)
                continue
            similar = gen_similar_pairs(anchors, targets, Split.TEST_STABLE)
            sets[Split.TEST_STABLE].pairs.extend(similar)
            sets[Split.TEST_STABLE].counts[(device, day)] = {
                "similar": len(similar), "dissimilar": 0,
            }

        if change_set is not None and device not in change_set:
            continue
        for day in CHANGE_TEST_DAYS:
            targets = corpus.images(device, day)
            if not targets:
                logger.warning("device %s missing day %d; excluded from test_change", device, day)
                continue
            # Ground truth for these days is a version change, so the pairs
            # are labeled dissimilar regardless of how the model scores them.
            changed = gen_similar_pairs(
                anchors, targets, Split.TEST_CHANGE, label=PairLabel.DISSIMILAR
            )
            sets[Split.TEST_CHANGE].pairs.extend(changed)
            sets[Split.TEST_CHANGE].counts[(device, day)] = {
                "similar": 0, "dissimilar": len(changed),
            }

    return sets


def save_pairset(pairset: PairSet, store: ImageStore, path: Path) -> None:
    """Persist pairs as JSON lines referencing image paths in the store."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for pair in pairset.pairs:
            record = {
                "left_path": store.relative_path(*pair.left.key),
                "right_path": store.relative_path(*pair.right.key),
                "label": int(pair.label),
                "split": pair.split.value,
                "provenance": {
                    "left": list(pair.left.key),
                    "right": list(pair.right.key),
                },
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_pairset(path: Path, store: ImageStore, split: Split, seed: int) -> PairSet:
    cache: dict[str, FingerprintImage] = {}

    def _load(rel: str) -> FingerprintImage:
        if rel not in cache:
            cache[rel] = store.load(rel)
        return cache[rel]

    pairs = []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            pairs.append(
                ImagePair(
                    left=_load(rec["left_path"]),
                    right=_load(rec["right_path"]),
                    label=PairLabel(rec["label"]),
                    split=Split(rec["split"]),
                )
            )
    return PairSet(split, pairs, seed)
