"""Greyscale fingerprint images: rendering, cleaning, and the on-disk store."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
from PIL import Image

from .capture import LANE_COUNT
from .features import (
    CROSS_GROUP,
    FEATURE_COUNT,
    PACKET_GROUP,
    PORT_GROUP,
    TIMING_GROUP,
    DeviceDayStats,
)

IMAGE_HEIGHT = LANE_COUNT  # 13 protocol rows
IMAGE_WIDTH = FEATURE_COUNT  # 53 feature columns
PORT_SCALE = 65535.0


@dataclass(frozen=True)
class FingerprintImage:
    device_id: str
    day_index: int
    window_index: int
    pixels: np.ndarray  # uint8, (13, 53)

    def __post_init__(self) -> None:
        if self.pixels.shape != (IMAGE_HEIGHT, IMAGE_WIDTH):
            raise ValueError(f"image shape {self.pixels.shape} != (13, 53)")
        if self.pixels.dtype != np.uint8:
            raise ValueError("pixels must be uint8")

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.device_id, self.day_index, self.window_index)


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def _minmax_scale(block: np.ndarray, axis: Optional[int]) -> np.ndarray:
    """Min-max scale to 0..255; a constant block (or row) maps to 0."""
    lo = block.min(axis=axis, keepdims=axis is not None)
    hi = block.max(axis=axis, keepdims=axis is not None)
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    scaled = _round_half_up((block - lo) / safe * 255.0)
    return np.where(span > 0, scaled, 0.0)


def render_image(
    window_values: np.ndarray, device_id: str, day_index: int, window_index: int
) -> FingerprintImage:
    """Render one window's (13, 53) statistics as an 8-bit greyscale image.

    Normalization groups: the 4 cross-protocol columns scale over the whole
    13x4 block; the packet and timing groups scale per protocol row within
    their columns; the port columns use the fixed /65535 scale. Values are
    rounded half-up; constant blocks or rows render black.
    """
    if window_values.shape != (IMAGE_HEIGHT, IMAGE_WIDTH):
        raise ValueError(f"stats shape {window_values.shape} != (13, 53)")
    pixels = np.zeros((IMAGE_HEIGHT, IMAGE_WIDTH), dtype=np.float64)
    pixels[:, CROSS_GROUP] = _minmax_scale(window_values[:, CROSS_GROUP], axis=None)
    pixels[:, PACKET_GROUP] = _minmax_scale(window_values[:, PACKET_GROUP], axis=1)
    pixels[:, TIMING_GROUP] = _minmax_scale(window_values[:, TIMING_GROUP], axis=1)
    pixels[:, PORT_GROUP] = _round_half_up(window_values[:, PORT_GROUP] / PORT_SCALE * 255.0)
    pixels = np.clip(pixels, 0, 255)
    return FingerprintImage(device_id, day_index, window_index, pixels.astype(np.uint8))


def render_device_day(stats: DeviceDayStats) -> list[FingerprintImage]:
    return [
        render_image(stats.values[w], stats.device_id, stats.day_index, w)
        for w in range(stats.values.shape[0])
    ]


def is_degenerate(image: FingerprintImage) -> bool:
    """True iff the image holds no information: fully black or fully white."""
    return bool((image.pixels == 0).all() or (image.pixels == 255).all())


@dataclass(frozen=True)
class IndexEntry:
    device_id: str
    day: int
    window: int
    path: str  # relative to the store root
    degenerate: bool


class ImageStore:
    """PNG-backed image store: <root>/<device>/day<NN>/w<MM>.png plus index."""

    INDEX_NAME = "index.jsonl"

    def __init__(self, root: Path) -> None:
        self.root = Path(root)

    def relative_path(self, device_id: str, day: int, window: int) -> str:
        return f"{device_id}/day{day:02d}/w{window:02d}.png"

    def store(self, image: FingerprintImage) -> Path:
        """Write one image atomically; concurrent writers hit distinct paths."""
        path = self.root / self.relative_path(*image.key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".png.tmp")
        Image.fromarray(image.pixels, mode="L").save(tmp, format="PNG")
        os.replace(tmp, path)
        return path

    def load(self, path: Path | str) -> FingerprintImage:
        path = Path(path)
        if not path.is_absolute():
            path = self.root / path
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("L"), dtype=np.uint8)
        if pixels.shape != (IMAGE_HEIGHT, IMAGE_WIDTH):
            raise ValueError(f"{path}: image is {pixels.shape}, expected (13, 53)")
        device_id, day_part, window_part = path.parts[-3], path.parts[-2], path.stem
        return FingerprintImage(
            device_id=device_id,
            day_index=int(day_part.removeprefix("day")),
            window_index=int(window_part.removeprefix("w")),
            pixels=pixels,
        )

    def write_index(self, entries: Iterable[IndexEntry]) -> Path:
        path = self.root / self.INDEX_NAME
        self.root.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".jsonl.tmp")
        with open(tmp, "w") as fh:
            for e in entries:
                fh.write(json.dumps(e.__dict__, sort_keys=True) + "\n")
        os.replace(tmp, path)
        return path

    def load_index(self) -> list[IndexEntry]:
        path = self.root / self.INDEX_NAME
        entries = []
        with open(path) as fh:
            for line in fh:
                entries.append(IndexEntry(**json.loads(line)))
        return entries

    def ingest_device_day(self, images: list[FingerprintImage]) -> list[IndexEntry]:
        """Store a day's images and return their index entries (all windows)."""
        entries = []
        for image in images:
            self.store(image)
            entries.append(
                IndexEntry(
                    device_id=image.device_id,
                    day=image.day_index,
                    window=image.window_index,
                    path=self.relative_path(*image.key),
                    degenerate=is_degenerate(image),
                )
            )
        return entries
