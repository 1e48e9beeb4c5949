"""Criterion-aware automated essay scoring engine and evaluation harness for
IELTS Writing Task 2."""

from .bands import (
    BandScore,
    Criterion,
    CriterionSet,
    RoundingRule,
    band_snap,
    band_validate,
    overall_from_criteria,
)
from .dataset import Essay, ingest_auxiliary, ingest_primary, regenerate_analytic, split_stats
from .gateway import Completion, GenerationRequest, OpenAIBackend, ScriptedBackend
from .metrics import PairedScores, accuracy, compute_metrics, confusion, macro_f1, mae, rmse
from .parsing import (
    parse_criterion_json,
    parse_final_band,
    parse_regeneration,
    parse_single_criterion,
    repair_json,
)
from .retrieval import HashingEmbedder, RetrievalIndex, build_index, cosine
from .runner import ExperimentConfig, run_experiment
from .strategies import ScoredResult, StrategyConfig

__version__ = "0.1.0"

__all__ = [
    "BandScore",
    "Criterion",
    "CriterionSet",
    "RoundingRule",
    "band_snap",
    "band_validate",
    "overall_from_criteria",
    "Essay",
    "ingest_primary",
    "ingest_auxiliary",
    "split_stats",
    "regenerate_analytic",
    "GenerationRequest",
    "Completion",
    "ScriptedBackend",
    "OpenAIBackend",
    "repair_json",
    "parse_final_band",
    "parse_criterion_json",
    "parse_single_criterion",
    "parse_regeneration",
    "HashingEmbedder",
    "RetrievalIndex",
    "build_index",
    "cosine",
    "PairedScores",
    "accuracy",
    "macro_f1",
    "rmse",
    "mae",
    "confusion",
    "compute_metrics",
    "StrategyConfig",
    "ScoredResult",
    "ExperimentConfig",
    "run_experiment",
    "__version__",
]
