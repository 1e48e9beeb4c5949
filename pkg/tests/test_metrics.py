"""Metric tests against naive-loop reimplementations."""

from __future__ import annotations

import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ielts_aes.bands import HALF_STEP_COUNT, BandScore
from ielts_aes.metrics import (
    EmptyPairsError,
    PairedScores,
    ScorePair,
    accuracy,
    compute_metrics,
    confusion,
    macro_f1,
    mae,
    markdown_row,
    rmse,
)

from conftest import band


def pairs_of(*items: tuple[float, float]) -> PairedScores:
    return PairedScores(
        pairs=[
            ScorePair(essay_id=f"e{i}", predicted=band(pred), gold=band(gold))
            for i, (pred, gold) in enumerate(items)
        ]
    )


def random_pairs(rng: random.Random, n: int) -> PairedScores:
    return PairedScores(
        pairs=[
            ScorePair(
                essay_id=f"e{i}",
                predicted=BandScore(rng.randrange(HALF_STEP_COUNT)),
                gold=BandScore(rng.randrange(HALF_STEP_COUNT)),
            )
            for i in range(n)
        ]
    )


# Naive-loop oracles, deliberately structured differently from the library.


def oracle_accuracy(pairs: PairedScores, tol: float) -> float:
    hits = 0
    for p in pairs.pairs:
        if abs(p.predicted.value - p.gold.value) <= tol + 1e-9:
            hits += 1
    return hits / len(pairs.pairs)


def oracle_macro_f1(pairs: PairedScores) -> float:
    per_class = []
    for cls in range(HALF_STEP_COUNT):
        tp = fp = fn = 0
        for p in pairs.pairs:
            pred_is = p.predicted.half_steps == cls
            gold_is = p.gold.half_steps == cls
            if pred_is and gold_is:
                tp += 1
            elif pred_is:
                fp += 1
            elif gold_is:
                fn += 1
        if tp + fp + fn == 0:
            continue
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        per_class.append(
            2 * precision * recall / (precision + recall) if precision + recall else 0.0
        )
    return sum(per_class) / len(per_class)


def oracle_rmse(pairs: PairedScores) -> float:
    return math.sqrt(
        sum((p.predicted.value - p.gold.value) ** 2 for p in pairs.pairs) / len(pairs.pairs)
    )


def oracle_mae(pairs: PairedScores) -> float:
    return sum(abs(p.predicted.value - p.gold.value) for p in pairs.pairs) / len(pairs.pairs)


class TestAccuracy:
    def test_perfect(self):
        assert accuracy(pairs_of((6.0, 6.0), (7.5, 7.5)), 0.0) == 1.0

    def test_half_band_tolerance(self):
        pairs = pairs_of((6.0, 6.5), (7.0, 7.0))
        assert accuracy(pairs, 0.5) == 1.0
        assert accuracy(pairs, 0.0) == 0.5

    def test_two_band_miss(self):
        assert accuracy(pairs_of((5.0, 7.0)), 1.0) == 0.0

    def test_empty(self):
        with pytest.raises(EmptyPairsError):
            accuracy(PairedScores(), 0.5)

    @given(st.integers(min_value=1, max_value=60), st.integers(min_value=0, max_value=10_000))
    def test_monotone_in_tolerance(self, n, seed):
        pairs = random_pairs(random.Random(seed), n)
        values = [accuracy(pairs, tol) for tol in (0.0, 0.5, 1.0, 2.0)]
        assert values == sorted(values)


class TestMacroF1:
    def test_perfect_three_classes(self):
        assert macro_f1(pairs_of((5.0, 5.0), (6.0, 6.0), (7.0, 7.0))) == 1.0

    def test_hand_oracle_case(self):
        # class 6.0: P=0.5, R=1.0, F1=2/3; class 6.5: 0 -> macro = 1/3
        pairs = pairs_of((6.0, 6.0), (6.0, 6.5))
        assert macro_f1(pairs) == pytest.approx(1 / 3, abs=1e-12)

    def test_single_wrong_pair(self):
        assert macro_f1(pairs_of((5.0, 6.0))) == 0.0


class TestErrorMetrics:
    def test_identical(self):
        assert rmse(pairs_of((6.0, 6.0))) == 0.0
        assert mae(pairs_of((6.0, 6.0))) == 0.0

    def test_symmetric_half_band_errors(self):
        pairs = pairs_of((6.0, 6.5), (7.0, 6.5))
        assert mae(pairs) == pytest.approx(0.5)
        assert rmse(pairs) == pytest.approx(0.5)

    def test_single_large_error(self):
        pairs = pairs_of((5.0, 7.0))
        assert mae(pairs) == 2.0
        assert rmse(pairs) == 2.0


class TestConfusion:
    def test_single_off_diagonal(self):
        matrix = confusion(pairs_of((6.0, 6.5)))
        assert matrix[13][12] == 1
        assert matrix.sum() == 1

    def test_perfect_is_diagonal(self):
        matrix = confusion(pairs_of((5.0, 5.0), (6.5, 6.5), (6.5, 6.5)))
        assert np.all(matrix == np.diag(np.diag(matrix)))

    def test_total_and_row_sums(self):
        rng = random.Random(3)
        pairs = random_pairs(rng, 50)
        matrix = confusion(pairs)
        assert matrix.sum() == 50
        for cls in range(HALF_STEP_COUNT):
            assert matrix[cls].sum() == sum(
                1 for p in pairs.pairs if p.gold.half_steps == cls
            )


class TestOracleEquivalence:
    @pytest.mark.parametrize("seed", range(10))
    def test_random_fixture_matches_naive_loops(self, seed):
        pairs = random_pairs(random.Random(seed), 100)
        for tol in (0.0, 0.5, 1.0):
            assert accuracy(pairs, tol) == pytest.approx(oracle_accuracy(pairs, tol), abs=1e-9)
        assert macro_f1(pairs) == pytest.approx(oracle_macro_f1(pairs), abs=1e-9)
        assert rmse(pairs) == pytest.approx(oracle_rmse(pairs), abs=1e-9)
        assert mae(pairs) == pytest.approx(oracle_mae(pairs), abs=1e-9)
        assert rmse(pairs) >= mae(pairs) - 1e-12

    @given(st.integers(min_value=1, max_value=40), st.integers(min_value=0, max_value=10_000))
    def test_permutation_invariance(self, n, seed):
        rng = random.Random(seed)
        pairs = random_pairs(rng, n)
        shuffled = PairedScores(pairs=list(reversed(pairs.pairs)))
        assert accuracy(pairs, 0.5) == accuracy(shuffled, 0.5)
        assert macro_f1(pairs) == pytest.approx(macro_f1(shuffled), abs=1e-12)
        assert rmse(pairs) == pytest.approx(rmse(shuffled), abs=1e-12)
        assert mae(pairs) == pytest.approx(mae(shuffled), abs=1e-12)


class TestReportAssembly:
    def test_compute_metrics_counts(self):
        pairs = PairedScores(
            pairs=pairs_of((6.0, 6.0), (6.5, 6.0)).pairs,
            excluded=[("bad-1", "parse:invalid-json")],
        )
        report = compute_metrics(pairs)
        assert report.n_scored == 2
        assert report.n_excluded == 1
        assert report.parse_failure_rate == pytest.approx(1 / 3)
        assert report.rmse >= report.mae

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError):
            PairedScores(
                pairs=[
                    ScorePair("a", band(6.0), band(6.0)),
                    ScorePair("a", band(6.5), band(6.0)),
                ]
            )

    def test_markdown_row_table_order(self):
        pairs = pairs_of((6.5, 6.5))
        report = compute_metrics(pairs)
        row = markdown_row("demo", report)
        cells = [c.strip() for c in row.strip("|").split("|")]
        assert cells[0] == "demo"
        assert cells[1] == "1.0000"  # Accuracy
        assert cells[2] == "1.0000"  # F1
        assert cells[3] == "0.0000"  # RMSE
        assert cells[4] == "0.0000"  # MAE
