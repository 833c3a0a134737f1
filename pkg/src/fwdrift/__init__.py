"""fwdrift: IoT firmware-version drift detection from network fingerprints.

The pipeline turns per-device packet captures into 13x53 greyscale
fingerprint images, scores image pairs with a twin neural network, and
decides per device-day whether the firmware version is stable or changed
using the Hedges' g effect size of the similarity-score distributions.
"""

__version__ = "0.1.0"

from .capture import DeviceDayCapture, Direction, PacketRecord, ProtocolLane, parse_capture
from .drift import HedgesResult, ScoreSample, change_verdict, hedges_g
from .features import compute_device_day, plan_windows
from .images import FingerprintImage, ImageStore, is_degenerate, render_image
from .pairs import ImagePair, PairLabel, Split, build_splits
from .twin import TrainConfig, TwinModel, embed, evaluate_pairs, load_model, save_model, score, train

__all__ = [
    "DeviceDayCapture",
    "Direction",
    "FingerprintImage",
    "HedgesResult",
    "ImagePair",
    "ImageStore",
    "PacketRecord",
    "PairLabel",
    "ProtocolLane",
    "ScoreSample",
    "Split",
    "TrainConfig",
    "TwinModel",
    "build_splits",
    "change_verdict",
    "compute_device_day",
    "embed",
    "evaluate_pairs",
    "hedges_g",
    "is_degenerate",
    "load_model",
    "parse_capture",
    "plan_windows",
    "render_image",
    "save_model",
    "score",
    "train",
]
