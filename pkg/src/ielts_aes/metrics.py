"""Scoring metrics over paired predicted/gold bands: tolerance accuracy,
macro-F1 over the 19 band classes, RMSE, MAE, and the confusion matrix.

Parse-failed essays never enter the pairs; they are carried as exclusions and
reported as a separate rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bands import HALF_STEP_COUNT, BandScore

# Accuracy is tolerance-parameterized; these three are always co-reported.
ACCURACY_TOLERANCES = (0.0, 0.5, 1.0)
DEFAULT_ACCURACY_TOLERANCE = 0.5


class EmptyPairsError(ValueError):
    pass


@dataclass(frozen=True)
class ScorePair:
    essay_id: str
    predicted: BandScore
    gold: BandScore


@dataclass
class PairedScores:
    """Scored (prediction, gold) pairs plus the excluded ids with reasons."""

    pairs: list[ScorePair] = field(default_factory=list)
    excluded: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for pair in self.pairs:
            if pair.essay_id in seen:
                raise ValueError(f"duplicate essay id {pair.essay_id!r} in pairs")
            seen.add(pair.essay_id)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def n_excluded(self) -> int:
        return len(self.excluded)


def _require_pairs(pairs: PairedScores) -> None:
    if not pairs.pairs:
        raise EmptyPairsError("no scored pairs")


def accuracy(pairs: PairedScores, tolerance: float = DEFAULT_ACCURACY_TOLERANCE) -> float:
    """Fraction of pairs with |predicted - gold| <= tolerance (in bands)."""
    _require_pairs(pairs)
    hits = sum(
        1
        for p in pairs.pairs
        if abs(p.predicted.half_steps - p.gold.half_steps) * 0.5 <= tolerance + 1e-9
    )
    return hits / len(pairs.pairs)


def macro_f1(pairs: PairedScores) -> float:
    """Unweighted mean of per-class F1 over the 19 band classes.

    Classes with neither gold nor predicted instances are skipped; classes
    that appear but have zero true positives contribute 0.
    """
    _require_pairs(pairs)
    gold_counts = [0] * HALF_STEP_COUNT
    pred_counts = [0] * HALF_STEP_COUNT
    true_positives = [0] * HALF_STEP_COUNT
    for pair in pairs.pairs:
        gold_counts[pair.gold.half_steps] += 1
        pred_counts[pair.predicted.half_steps] += 1
        if pair.gold.half_steps == pair.predicted.half_steps:
            true_positives[pair.gold.half_steps] += 1
    scores: list[float] = []
    for cls in range(HALF_STEP_COUNT):
        if gold_counts[cls] == 0 and pred_counts[cls] == 0:
            continue
        precision = true_positives[cls] / pred_counts[cls] if pred_counts[cls] else 0.0
        recall = true_positives[cls] / gold_counts[cls] if gold_counts[cls] else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        scores.append(f1)
    return sum(scores) / len(scores)


def rmse(pairs: PairedScores) -> float:
    _require_pairs(pairs)
    total = sum((p.predicted.value - p.gold.value) ** 2 for p in pairs.pairs)
    return float(np.sqrt(total / len(pairs.pairs)))


def mae(pairs: PairedScores) -> float:
    _require_pairs(pairs)
    total = sum(abs(p.predicted.value - p.gold.value) for p in pairs.pairs)
    return total / len(pairs.pairs)


def confusion(pairs: PairedScores) -> np.ndarray:
    """19x19 count matrix indexed [gold half-step][predicted half-step]."""
    _require_pairs(pairs)
    matrix = np.zeros((HALF_STEP_COUNT, HALF_STEP_COUNT), dtype=np.int64)
    for pair in pairs.pairs:
        matrix[pair.gold.half_steps][pair.predicted.half_steps] += 1
    return matrix


@dataclass
class MetricsReport:
    """All metrics for one strategy's run."""

    accuracy: dict[float, float]
    macro_f1: float
    rmse: float
    mae: float
    n_scored: int
    n_excluded: int
    confusion: np.ndarray

    @property
    def parse_failure_rate(self) -> float:
        total = self.n_scored + self.n_excluded
        return self.n_excluded / total if total else 0.0

    def to_json_dict(self) -> dict:
        return {
            "accuracy": {f"{tol:.1f}": value for tol, value in sorted(self.accuracy.items())},
            "macro_f1": self.macro_f1,
            "rmse": self.rmse,
            "mae": self.mae,
            "n_scored": self.n_scored,
            "n_excluded": self.n_excluded,
            "parse_failure_rate": self.parse_failure_rate,
            "confusion": self.confusion.tolist(),
        }


def compute_metrics(pairs: PairedScores) -> MetricsReport:
    """The full metric family for one set of pairs."""
    report = MetricsReport(
        accuracy={tol: accuracy(pairs, tol) for tol in ACCURACY_TOLERANCES},
        macro_f1=macro_f1(pairs),
        rmse=rmse(pairs),
        mae=mae(pairs),
        n_scored=len(pairs.pairs),
        n_excluded=pairs.n_excluded,
        confusion=confusion(pairs),
    )
    assert report.rmse >= report.mae - 1e-12
    return report


def markdown_row(name: str, report: MetricsReport) -> str:
    """One main-results table row: Accuracy, F1, RMSE, MAE first, extras after."""
    acc = report.accuracy.get(DEFAULT_ACCURACY_TOLERANCE, 0.0)
    return (
        f"| {name} | {acc:.4f} | {report.macro_f1:.4f} | {report.rmse:.4f} "
        f"| {report.mae:.4f} | {report.accuracy.get(0.0, 0.0):.4f} "
        f"| {report.accuracy.get(1.0, 0.0):.4f} | {report.parse_failure_rate:.4f} "
        f"| {report.n_scored} |"
    )
