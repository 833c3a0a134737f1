"""Twin network: one shared subnetwork embeds both images of a pair and the
Euclidean distance between the embeddings is the dissimilarity score.

Training minimizes contrastive loss over balanced pair sets with mini-batch
gradient descent, evaluating validation loss after every epoch and keeping
the weights of the best validation epoch. Given a seed, training is fully
deterministic.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .images import FingerprintImage, IMAGE_HEIGHT, IMAGE_WIDTH
from .nn import Adam, BatchNorm, Conv3x3, Dense, Flatten, MaxPool2, ReLU, Sequential
from .pairs import ImagePair, PairLabel

SCORE_THRESHOLD = 0.5

_MAGIC = b"TWNMODL1"
_FORMAT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""


class ModelFormatError(ValueError):
    """Raised when a model file fails validation on load."""


@dataclass
class TrainConfig:
    batch_size: int = 50
    max_epochs: int = 50
    margin: float = 1.0
    learning_rate: float = 1e-3
    patience: int = 5
    min_delta: float = 1e-4
    seed: int = 0
    embedding_dim: int = 64
    dtype: str = "float32"

    def __post_init__(self) -> None:
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


def default_descriptor(embedding_dim: int = 64) -> dict:
    """The 10-layer subnetwork descriptor; it fully determines tensor shapes."""
    return {
        "input": [IMAGE_HEIGHT, IMAGE_WIDTH, 1],
        "embedding_dim": embedding_dim,
        "layers": [
            {"type": "conv3x3", "out_channels": 32},
            {"type": "batchnorm"},
            {"type": "relu"},
            {"type": "conv3x3", "out_channels": 64},
            {"type": "batchnorm"},
            {"type": "relu"},
            {"type": "maxpool2"},
            {"type": "flatten"},
            {"type": "dense", "out_features": 256, "activation": "relu"},
            {"type": "dense", "out_features": embedding_dim},
        ],
    }


def build_network(descriptor: dict, rng: np.random.Generator, dtype=np.float32) -> Sequential:
    h, w, c = descriptor["input"]
    features = None
    layers = []
    specs = descriptor["layers"]
    for pos, spec in enumerate(specs):
        kind = spec["type"]
        if kind == "conv3x3":
            followed_by_bn = pos + 1 < len(specs) and specs[pos + 1]["type"] == "batchnorm"
            layers.append(Conv3x3(c, spec["out_channels"], rng, dtype, bias=not followed_by_bn))
            c = spec["out_channels"]
        elif kind == "batchnorm":
            layers.append(BatchNorm(c, dtype))
        elif kind == "relu":
            layers.append(ReLU())
        elif kind == "maxpool2":
            layers.append(MaxPool2())
            h, w = h // 2, w // 2
        elif kind == "flatten":
            layers.append(Flatten())
            features = h * w * c
        elif kind == "dense":
            layers.append(Dense(features, spec["out_features"], rng, dtype))
            features = spec["out_features"]
            if spec.get("activation") == "relu":
                layers.append(ReLU())
        else:
            raise ModelFormatError(f"unknown layer type {kind!r}")
    return Sequential(layers)


@dataclass
class TwinModel:
    net: Sequential
    descriptor: dict
    metadata: dict = field(default_factory=dict)

    @property
    def dtype(self):
        return np.dtype(self.metadata.get("dtype", "float32")).type


@dataclass(frozen=True)
class ScoreRecord:
    left: tuple[str, int, int]
    right: tuple[str, int, int]
    score: float
    predicted: PairLabel
    label: Optional[PairLabel] = None
    split: Optional[str] = None


@dataclass
class EvalResult:
    accuracy_all: float
    accuracy_similar_only: Optional[float]
    mean_loss: float
    records: list[ScoreRecord]


def contrastive_loss(distance, label, margin: float = 1.0):
    """(1-y) d^2 + y max(0, m-d)^2 over distance d and label y (1 = dissimilar)."""
    d = np.asarray(distance, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    hinge = np.maximum(margin - d, 0.0)
    out = (1.0 - y) * d * d + y * hinge * hinge
    return float(out) if out.ndim == 0 else out


def _pixels_to_input(pixels: np.ndarray, dtype) -> np.ndarray:
    return (pixels.astype(dtype) / dtype(255.0))[..., None]


def embed(model: TwinModel, image: FingerprintImage | np.ndarray) -> np.ndarray:
    """Embedding vector for one image (pixels are scaled to [0, 1] on entry)."""
    pixels = image.pixels if isinstance(image, FingerprintImage) else image
    if pixels.shape != (IMAGE_HEIGHT, IMAGE_WIDTH):
        raise ValueError(f"image shape {pixels.shape} != (13, 53)")
    x = _pixels_to_input(pixels, model.dtype)[None, ...]
    return model.net.forward(x, training=False)[0].copy()


def score(model: TwinModel, pair: ImagePair) -> ScoreRecord:
    """Euclidean embedding distance; 0 means identical-looking, >0.5 dissimilar."""
    d = float(np.linalg.norm(embed(model, pair.left) - embed(model, pair.right)))
    return ScoreRecord(
        left=pair.left.key,
        right=pair.right.key,
        score=d,
        predicted=PairLabel.DISSIMILAR if d > SCORE_THRESHOLD else PairLabel.SIMILAR,
        label=pair.label,
        split=pair.split.value,
    )


class EarlyStopping:
    """Stop after `patience` epochs without a validation-loss improvement."""

    def __init__(self, patience: int, min_delta: float = 0.0):
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, value: float) -> bool:
        if value < self.best - self.min_delta:
            self.best = value
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


def _unique_inputs(pairs: Sequence[ImagePair], dtype):
    """Deduplicated image tensor plus per-pair (left, right) index arrays."""
    index: dict[tuple[str, int, int], int] = {}
    mats = []
    li = np.empty(len(pairs), dtype=np.int64)
    ri = np.empty(len(pairs), dtype=np.int64)
    for n, pair in enumerate(pairs):
        for arr, img in ((li, pair.left), (ri, pair.right)):
            key = img.key
            if key not in index:
                index[key] = len(mats)
                mats.append(_pixels_to_input(img.pixels, dtype))
            arr[n] = index[key]
    x = np.stack(mats) if mats else np.empty((0, IMAGE_HEIGHT, IMAGE_WIDTH, 1), dtype=dtype)
    y = np.asarray([float(p.label) for p in pairs], dtype=dtype)
    return x, li, ri, y


def _embed_matrix(net: Sequential, x: np.ndarray, chunk: int = 512) -> np.ndarray:
    # The network reuses its output buffer, so each chunk must be copied out.
    return np.concatenate(
        [net.forward(x[i : i + chunk], training=False).copy() for i in range(0, len(x), chunk)]
    )


def _train_step(net: Sequential, optimizer: Adam, xl, xr, y, margin: float) -> float:
    b = len(y)
    e = net.forward(np.concatenate([xl, xr], axis=0), training=True)
    diff = e[:b] - e[b:]
    d = np.sqrt((diff * diff).sum(axis=1))
    hinge = np.maximum(margin - d, 0.0)
    loss = float(((1.0 - y) * d * d + y * hinge * hinge).mean())
    # dL/ddiff: 2*diff for similar pairs, -2*hinge*diff/d for dissimilar ones
    # (zero when d == 0: an identical dissimilar pair has no descent direction).
    ratio = np.divide(hinge, d, out=np.zeros_like(d), where=d > 0)
    coef = 2.0 * (1.0 - y) - 2.0 * y * ratio
    ddiff = ((coef / b)[:, None] * diff).astype(e.dtype)
    net.backward(np.concatenate([ddiff, -ddiff], axis=0))
    optimizer.step(net.grad_arrays())
    return loss


def train(
    config: TrainConfig,
    train_pairs: Sequence[ImagePair],
    validation_pairs: Sequence[ImagePair],
) -> TwinModel:
    """Train the twin network; returns the weights of the best validation epoch."""
    if not train_pairs or not validation_pairs:
        raise ValueError("training and validation pair sets must be non-empty")
    dtype = np.dtype(config.dtype).type
    descriptor = default_descriptor(config.embedding_dim)
    net = build_network(descriptor, np.random.default_rng([config.seed, 0]), dtype)
    shuffle_rng = np.random.default_rng([config.seed, 1])

    x_train, li, ri, y = _unique_inputs(train_pairs, dtype)
    x_val, vli, vri, vy = _unique_inputs(validation_pairs, dtype)

    optimizer = Adam(net.param_arrays(), lr=config.learning_rate)
    stopper = EarlyStopping(config.patience, config.min_delta)
    best_snapshot = net.snapshot()
    history = []
    epochs_run = 0
    stopped_early = False

    n = len(train_pairs)
    for epoch in range(1, config.max_epochs + 1):
        epochs_run = epoch
        perm = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            loss = _train_step(
                net, optimizer, x_train[li[idx]], x_train[ri[idx]], y[idx], config.margin
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"training loss became {loss} at epoch {epoch}"
                )
            epoch_loss += loss * len(idx)

        emb = _embed_matrix(net, x_val)
        val_d = np.linalg.norm(emb[vli] - emb[vri], axis=1)
        val_loss = float(np.mean(contrastive_loss(val_d, vy, config.margin)))
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(f"validation loss became {val_loss} at epoch {epoch}")
        history.append(
            {"epoch": epoch, "train_loss": epoch_loss / n, "validation_loss": val_loss}
        )
        if stopper.update(epoch, val_loss):
            best_snapshot = net.snapshot()
        if stopper.should_stop:
            stopped_early = True
            break

    net.restore(best_snapshot)
    metadata = {
        "seed": config.seed,
        "dtype": config.dtype,
        "epochs_run": epochs_run,
        "best_epoch": stopper.best_epoch,
        "best_validation_loss": stopper.best,
        "stopped_early": stopped_early,
        "optimizer": "adam",
        "learning_rate": config.learning_rate,
        "batch_size": config.batch_size,
        "margin": config.margin,
        "patience": config.patience,
        "min_delta": config.min_delta,
        "history": history,
    }
    return TwinModel(net=net, descriptor=descriptor, metadata=metadata)


def evaluate_pairs(model: TwinModel, pairs: Sequence[ImagePair], margin: float = 1.0) -> EvalResult:
    """Score every pair (embeddings cached per unique image) and summarize.

    accuracy_all uses the 0.5 threshold against the pair labels;
    accuracy_similar_only restricts to similar-labeled pairs (None if absent).
    """
    if not pairs:
        raise ValueError("cannot evaluate an empty pair set")
    x, li, ri, y = _unique_inputs(pairs, model.dtype)
    emb = _embed_matrix(model.net, x)
    d = np.linalg.norm(emb[li] - emb[ri], axis=1).astype(np.float64)
    predicted = d > SCORE_THRESHOLD
    actual = y.astype(np.float64) > 0.5
    correct = predicted == actual
    similar_mask = ~actual

    records = [
        ScoreRecord(
            left=p.left.key,
            right=p.right.key,
            score=float(d[i]),
            predicted=PairLabel.DISSIMILAR if predicted[i] else PairLabel.SIMILAR,
            label=p.label,
            split=p.split.value,
        )
        for i, p in enumerate(pairs)
    ]
    return EvalResult(
        accuracy_all=float(correct.mean()),
        accuracy_similar_only=(
            float(correct[similar_mask].mean()) if similar_mask.any() else None
        ),
        mean_loss=float(np.mean(contrastive_loss(d, y, margin))),
        records=records,
    )


def save_model(model: TwinModel, path: Path) -> Path:
    """Versioned binary: header JSON, float64 LE weight blobs, sha256 trailer."""
    tensors = model.net.named_arrays()
    header = {
        "format_version": _FORMAT_VERSION,
        "descriptor": model.descriptor,
        "metadata": model.metadata,
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in tensors],
    }
    hjson = json.dumps(header, sort_keys=True).encode()
    blob = bytearray()
    blob += _MAGIC
    blob += struct.pack("<II", _FORMAT_VERSION, len(hjson))
    blob += hjson
    for _, arr in tensors:
        blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    blob += hashlib.sha256(blob).digest()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)
    return path


def load_model(path: Path) -> TwinModel:
    data = Path(path).read_bytes()
    if len(data) < len(_MAGIC) + 8 + 32:
        raise ModelFormatError("model file is truncated")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ModelFormatError("model file checksum mismatch")
    if body[: len(_MAGIC)] != _MAGIC:
        raise ModelFormatError("not a twin-model file")
    version, hlen = struct.unpack_from("<II", body, len(_MAGIC))
    if version != _FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    off = len(_MAGIC) + 8
    header = json.loads(body[off : off + hlen])
    off += hlen

    descriptor = header["descriptor"]
    metadata = header.get("metadata", {})
    dtype = np.dtype(metadata.get("dtype", "float32")).type
    net = build_network(descriptor, np.random.default_rng(0), dtype)
    expected = net.named_arrays()
    declared = header["tensors"]
    if [(n, list(a.shape)) for n, a in expected] != [
        (t["name"], t["shape"]) for t in declared
    ]:
        raise ModelFormatError("architecture descriptor does not match tensor table")
    for name, arr in expected:
        nbytes = arr.size * 8
        if off + nbytes > len(body):
            raise ModelFormatError(f"weight blob for {name} is truncated")
        values = np.frombuffer(body, dtype="<f8", count=arr.size, offset=off)
        arr[...] = values.reshape(arr.shape).astype(arr.dtype)
        off += nbytes
    if off != len(body):
        raise ModelFormatError("trailing bytes after weight blobs")
    return TwinModel(net=net, descriptor=descriptor, metadata=metadata)
