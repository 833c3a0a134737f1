"""Effect-size drift detection over per-day similarity-score distributions.

A device's baseline is its similar-pair score distribution from the training
day pair. Each candidate day is compared to that baseline with Hedges' g
(bias-corrected standardized mean difference using the pooled standard
deviation); a day is flagged as a version change when g is positive and
exceeds 0.5. Four accuracy indicators summarize a test split: per-sample
threshold accuracy, per-day majority vote, per-day mean threshold, and the
Hedges' g verdict.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .twin import SCORE_THRESHOLD, ScoreRecord

SCHEMA_VERSION = 1
EFFECT_THRESHOLD = 0.5
# Serializable stand-in for an infinite effect (zero pooled SD, unequal means).
DEGENERATE_SENTINEL = 1e9


class EffectLabel(Enum):
    VERY_SMALL = "very_small"
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"
    VERY_LARGE = "very_large"


# Midpoints between the conventional anchors 0.01, 0.2, 0.5, 0.8, 1.2.
_EFFECT_BINS = (
    (0.105, EffectLabel.VERY_SMALL),
    (0.35, EffectLabel.SMALL),
    (0.65, EffectLabel.MEDIUM),
    (1.0, EffectLabel.LARGE),
)


def effect_label(g: float) -> EffectLabel:
    magnitude = abs(g)
    for edge, label in _EFFECT_BINS:
        if magnitude < edge:
            return label
    return EffectLabel.VERY_LARGE


@dataclass(frozen=True)
class ScoreSample:
    device_id: str
    day_index: int
    scores: tuple[float, ...]

    def __post_init__(self) -> None:
        if any(s < 0 for s in self.scores):
            raise ValueError("similarity scores are nonnegative")

    @property
    def mean(self) -> float:
        return sum(self.scores) / len(self.scores)


@dataclass(frozen=True)
class HedgesResult:
    g: float
    group1_n: int
    group2_n: int
    group1_mean: float
    group2_mean: float
    pooled_sd: float
    j: float
    effect_label: EffectLabel
    degenerate: bool = False


def _sample_sd(values: Sequence[float], mean: float) -> float:
    return math.sqrt(sum((v - mean) ** 2 for v in values) / (len(values) - 1))


def hedges_g(group1: Sequence[float], group2: Sequence[float]) -> HedgesResult:
    """Hedges' g of group1 (candidate) versus group2 (baseline).

    g = (mean1 - mean2) / s_p * J with the pooled sample standard deviation
    s_p = sqrt(((n1-1) S1^2 + (n2-1) S2^2) / (n1 + n2 - 2)) and the bias
    correction J = 1 - 3 / (4 (n1 + n2) - 9). A candidate that scores more
    dissimilar than its baseline yields a positive g.

    Both groups need at least two samples. When s_p is zero: equal means give
    g = 0, unequal means give the +-1e9 sentinel; both set the degenerate flag.
    """
    n1, n2 = len(group1), len(group2)
    if n1 < 2 or n2 < 2:
        raise ValueError("hedges_g requires at least two samples per group")
    mean1 = sum(group1) / n1
    mean2 = sum(group2) / n2
    s1 = _sample_sd(group1, mean1)
    s2 = _sample_sd(group2, mean2)
    pooled = math.sqrt(((n1 - 1) * s1 * s1 + (n2 - 1) * s2 * s2) / (n1 + n2 - 2))
    j = 1.0 - 3.0 / (4.0 * (n1 + n2) - 9.0)
    if pooled == 0.0:
        diff = mean1 - mean2
        g = 0.0 if diff == 0.0 else math.copysign(DEGENERATE_SENTINEL, diff)
        degenerate = True
    else:
        g = (mean1 - mean2) / pooled * j
        degenerate = False
    return HedgesResult(
        g=g,
        group1_n=n1,
        group2_n=n2,
        group1_mean=mean1,
        group2_mean=mean2,
        pooled_sd=pooled,
        j=j,
        effect_label=effect_label(g),
        degenerate=degenerate,
    )


def change_verdict(baseline: ScoreSample, candidate: ScoreSample) -> tuple[bool, HedgesResult]:
    """True iff the candidate day's g versus the baseline exceeds +0.5.

    Negative effects of any magnitude never flag a change; the degenerate
    +sentinel does, since the candidate is then strictly above a constant
    baseline.
    """
    result = hedges_g(candidate.scores, baseline.scores)
    return result.g > EFFECT_THRESHOLD, result


@dataclass(frozen=True)
class DriftRow:
    device_id: str
    day_index: int
    n_scores: int
    below_threshold: int
    above_threshold: int
    mean_score: float
    hedges: HedgesResult
    verdict: bool
    truth_changed: Optional[bool] = None


@dataclass
class AccuracyReport:
    all_samples: float
    majority_samples: float
    majority_mean_threshold: float
    hedges_g: float
    n_days: int
    n_scores: int

    def as_dict(self) -> dict[str, float]:
        return {
            "all_samples": self.all_samples,
            "majority_samples": self.majority_samples,
            "majority_mean_threshold": self.majority_mean_threshold,
            "hedges_g": self.hedges_g,
        }


@dataclass
class DriftReport:
    rows: list[DriftRow]
    baselines: dict[str, dict]
    seed: int
    schema_version: int = SCHEMA_VERSION

    def to_json(self, path: Path) -> None:
        payload = {
            "schema_version": self.schema_version,
            "seed": self.seed,
            "baselines": self.baselines,
            "rows": [
                {
                    **{k: v for k, v in asdict(row).items() if k != "hedges"},
                    "hedges": {
                        **asdict(row.hedges),
                        "effect_label": row.hedges.effect_label.value,
                    },
                }
                for row in self.rows
            ],
        }
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")

    def to_csv(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [
                    "device_id", "day", "n_scores", "below", "above", "mean_score",
                    "hedges_g", "effect_label", "degenerate", "verdict", "truth_changed",
                ]
            )
            for row in self.rows:
                writer.writerow(
                    [
                        row.device_id, row.day_index, row.n_scores,
                        row.below_threshold, row.above_threshold,
                        repr(row.mean_score), repr(row.hedges.g),
                        row.hedges.effect_label.value, row.hedges.degenerate,
                        row.verdict, row.truth_changed,
                    ]
                )


def accuracy_metrics(
    day_samples: Sequence[ScoreSample],
    ground_truth: Mapping[tuple[str, int], bool],
    baselines: Mapping[str, ScoreSample],
    seed: int = 0,
) -> tuple[AccuracyReport, DriftReport]:
    """The four accuracy indicators over a set of scored device-days.

    ``ground_truth`` maps (device, day) to whether the firmware actually
    changed. Per day: AllSamples credits individual scores on the correct
    side of 0.5, MajoritySamples credits days whose majority of scores is
    correct (ties count as incorrect), MajorityMeanThreshold credits days
    whose mean is on the correct side, and HedgesG credits days where the
    change verdict matches the truth.
    """
    if not day_samples:
        raise ValueError("no scored days supplied")
    rows = []
    sample_correct = 0
    total_scores = 0
    majority_correct = 0
    mean_correct = 0
    hedges_correct = 0
    for sample in day_samples:
        key = (sample.device_id, sample.day_index)
        if key not in ground_truth:
            raise ValueError(f"no ground truth for device-day {key}")
        if sample.device_id not in baselines:
            raise ValueError(f"no baseline for device {sample.device_id}")
        truth = ground_truth[key]
        above = sum(1 for s in sample.scores if s > SCORE_THRESHOLD)
        below = len(sample.scores) - above
        correct_side = above if truth else below
        sample_correct += correct_side
        total_scores += len(sample.scores)
        # Majority ties are conservative: the day counts as incorrect.
        if correct_side * 2 > len(sample.scores):
            majority_correct += 1
        mean_says_changed = sample.mean > SCORE_THRESHOLD
        if mean_says_changed == truth:
            mean_correct += 1
        verdict, hedges = change_verdict(baselines[sample.device_id], sample)
        if verdict == truth:
            hedges_correct += 1
        rows.append(
            DriftRow(
                device_id=sample.device_id,
                day_index=sample.day_index,
                n_scores=len(sample.scores),
                below_threshold=below,
                above_threshold=above,
                mean_score=sample.mean,
                hedges=hedges,
                verdict=verdict,
                truth_changed=truth,
            )
        )
    n_days = len(day_samples)
    report = AccuracyReport(
        all_samples=sample_correct / total_scores,
        majority_samples=majority_correct / n_days,
        majority_mean_threshold=mean_correct / n_days,
        hedges_g=hedges_correct / n_days,
        n_days=n_days,
        n_scores=total_scores,
    )
    baseline_summary = {
        device: {
            "n": len(sample.scores),
            "mean": sample.mean,
            "sd": _sample_sd(sample.scores, sample.mean) if len(sample.scores) > 1 else 0.0,
        }
        for device, sample in baselines.items()
    }
    return report, DriftReport(rows=rows, baselines=baseline_summary, seed=seed)


def group_scores_by_day(records: Sequence[ScoreRecord]) -> list[ScoreSample]:
    """Group pair scores into per-(anchor device, target day) samples."""
    grouped: dict[tuple[str, int], list[float]] = {}
    for rec in records:
        key = (rec.left[0], rec.right[1])
        grouped.setdefault(key, []).append(rec.score)
    return [
        ScoreSample(device_id=device, day_index=day, scores=tuple(scores))
        for (device, day), scores in sorted(grouped.items())
    ]


def baselines_from_records(records: Sequence[ScoreRecord]) -> dict[str, ScoreSample]:
    """Per-device baseline distributions from training-split similar pairs."""
    grouped: dict[str, list[float]] = {}
    for rec in records:
        if rec.label is not None and int(rec.label) == 0:
            grouped.setdefault(rec.left[0], []).append(rec.score)
    return {
        device: ScoreSample(device_id=device, day_index=0, scores=tuple(scores))
        for device, scores in sorted(grouped.items())
    }
