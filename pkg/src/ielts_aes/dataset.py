"""Corpus ingestion and the analytic re-scoring pipeline.

Two corpora feed the system. The primary corpus (JSONL of
``{"id", "prompt", "essay", "band", optional "evaluation"}``) supplies the
train/test material; the auxiliary corpus (``{"id", "essay", "band", "cefr",
"feedback"}``) is ingestion-validated for exemplar browsing only and is never
merged into the splits. Split membership comes from an explicit id -> split
manifest, never from re-randomization.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .bands import (
    BandScore,
    Criterion,
    CriterionSet,
    NotHalfStepError,
    OutOfRangeError,
    band_validate,
)
from .gateway import GenerationRequest, LlmBackend
from .parsing import AnalyticEvaluation, ParseError, parse_regeneration
from .prompting import render_regeneration

log = logging.getLogger(__name__)

# Acceptance threshold for |mean(analytic) - overall| during re-generation.
# The tightest bound that still admits every mean that snaps to the target.
DEFAULT_MEAN_TOLERANCE = 0.25


class EssaySource(enum.Enum):
    PRIMARY = "primary-corpus"
    AUXILIARY = "auxiliary-corpus"


@dataclass(frozen=True)
class Essay:
    """One prompt-response pair with optional gold labels."""

    id: str
    prompt_text: str
    essay_text: str
    overall: BandScore | None = None
    analytic: CriterionSet | None = None
    feedback: str | None = None
    source: EssaySource = EssaySource.PRIMARY


@dataclass(frozen=True)
class Violation:
    """One failed validation check on a raw record."""

    kind: str  # missing-field | empty-text | not-half-step | out-of-range | bad-band | duplicate-id
    field: str
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.kind}({self.field})" + (f": {self.detail}" if self.detail else "")


@dataclass
class DatasetSplit:
    name: str
    essays: list[Essay] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.essays)

    def ids(self) -> list[str]:
        return [essay.id for essay in self.essays]

    def by_id(self) -> dict[str, Essay]:
        return {essay.id: essay for essay in self.essays}


@dataclass
class IngestResult:
    """A split plus the audit trail of what was dropped on the way in."""

    split: DatasetSplit
    raw_count: int
    dropped: list[tuple[str, list[Violation]]] = field(default_factory=list)

    @property
    def retained_count(self) -> int:
        return len(self.split)

    @property
    def dropped_count(self) -> int:
        return len(self.dropped)


def _parse_band_field(value: object) -> BandScore:
    if isinstance(value, bool) or value is None:
        raise NotHalfStepError(f"band {value!r} is not numeric")
    if isinstance(value, str):
        try:
            value = float(value.strip())
        except ValueError:
            raise NotHalfStepError(f"band {value!r} is not numeric") from None
    return band_validate(float(value))


_ANALYTIC_KEY_VARIANTS = {
    Criterion.TR: ("Task_Response", "TR_Band", "TR"),
    Criterion.CC: ("Coherence_and_Cohesion", "CC_Band", "CC"),
    Criterion.LR: ("Lexical_Resource", "LR_Band", "LR"),
    Criterion.GRA: ("Grammatical_Range_and_Accuracy", "GRA_Band", "GRA"),
}


def _parse_analytic_field(value: object) -> tuple[CriterionSet | None, str | None]:
    """Best-effort read of an attached analytic evaluation.

    Accepts the regenerated key layout (criterion objects with "Band"), flat
    band keys, or free text (kept as feedback). Unparseable structures are
    ignored rather than dropping the record: analytic labels are optional.
    """
    if isinstance(value, str):
        return None, value if value.strip() else None
    if not isinstance(value, dict):
        return None, None
    bands: dict[Criterion, BandScore] = {}
    comments: dict[Criterion, str] = {}
    for criterion, keys in _ANALYTIC_KEY_VARIANTS.items():
        for key in keys:
            if key not in value:
                continue
            entry = value[key]
            try:
                if isinstance(entry, dict):
                    bands[criterion] = _parse_band_field(entry.get("Band"))
                    comment = entry.get("Comment")
                    if comment:
                        comments[criterion] = str(comment)
                else:
                    bands[criterion] = _parse_band_field(entry)
            except (NotHalfStepError, OutOfRangeError):
                return None, None
            break
    if len(bands) != 4:
        return None, None
    feedback = value.get("General_Feedback")
    return (
        CriterionSet(
            tr=bands[Criterion.TR],
            cc=bands[Criterion.CC],
            lr=bands[Criterion.LR],
            gra=bands[Criterion.GRA],
            comments=comments,
        ),
        str(feedback) if feedback else None,
    )


def validate_record(raw: Mapping[str, object], source: EssaySource = EssaySource.PRIMARY):
    """Turn a raw record into an Essay, or enumerate every failed check.

    Returns Essay on success, else a list of Violations (never raises).
    """
    violations: list[Violation] = []
    if source is EssaySource.PRIMARY:
        required = ("id", "prompt", "essay", "band")
        text_fields = ("prompt", "essay")
    else:
        required = ("id", "essay", "band")
        text_fields = ("essay",)
    for name in required:
        if name not in raw or raw[name] is None:
            violations.append(Violation("missing-field", name))
    for name in text_fields:
        value = raw.get(name)
        if isinstance(value, str) and not value.strip():
            violations.append(Violation("empty-text", name))
    band: BandScore | None = None
    if "band" in raw and raw["band"] is not None:
        try:
            band = _parse_band_field(raw["band"])
        except OutOfRangeError as exc:
            violations.append(Violation("out-of-range", "band", str(exc)))
        except NotHalfStepError as exc:
            violations.append(Violation("not-half-step", "band", str(exc)))
    if violations:
        return violations
    analytic, extracted_feedback = _parse_analytic_field(raw.get("evaluation"))
    feedback = raw.get("feedback")
    feedback = str(feedback) if feedback else extracted_feedback
    return Essay(
        id=str(raw["id"]),
        prompt_text=str(raw.get("prompt", "")).strip(),
        essay_text=str(raw["essay"]).strip(),
        overall=band,
        analytic=analytic,
        feedback=feedback,
        source=source,
    )


def _iter_jsonl(path: str | Path) -> Iterable[tuple[int, dict | None]]:
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError:
                yield line_no, None


def _ingest(path: str | Path, source: EssaySource, split_name: str) -> IngestResult:
    split = DatasetSplit(name=split_name)
    dropped: list[tuple[str, list[Violation]]] = []
    seen_ids: set[str] = set()
    raw_count = 0
    for line_no, record in _iter_jsonl(path):
        raw_count += 1
        label = f"line {line_no}"
        if record is None:
            dropped.append((label, [Violation("missing-field", "<json>", "unparseable line")]))
            continue
        result = validate_record(record, source)
        if isinstance(result, list):
            dropped.append((str(record.get("id", label)), result))
            continue
        if result.id in seen_ids:
            log.warning("duplicate id %r at %s dropped", result.id, label)
            dropped.append((result.id, [Violation("duplicate-id", "id")]))
            continue
        seen_ids.add(result.id)
        split.essays.append(result)
    return IngestResult(split=split, raw_count=raw_count, dropped=dropped)


def ingest_primary(path: str | Path) -> IngestResult:
    """Ingest the primary corpus in source order, dropping and counting
    malformed records."""
    return _ingest(path, EssaySource.PRIMARY, split_name="all")


def ingest_auxiliary(path: str | Path) -> IngestResult:
    """Ingest the auxiliary corpus; these essays are never assigned to splits."""
    return _ingest(path, EssaySource.AUXILIARY, split_name="auxiliary")


class ManifestError(ValueError):
    pass


def load_split_manifest(path: str | Path) -> dict[str, str]:
    """Load the explicit id -> split-name mapping."""
    manifest = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(manifest, dict):
        raise ManifestError("split manifest must be an object of id -> split")
    for essay_id, split_name in manifest.items():
        if split_name not in ("train", "test"):
            raise ManifestError(f"id {essay_id!r} mapped to unknown split {split_name!r}")
    return manifest


def apply_split_manifest(
    split: DatasetSplit, manifest: Mapping[str, str]
) -> tuple[DatasetSplit, DatasetSplit]:
    """Partition ingested essays into train/test per the manifest.

    Essays absent from the manifest are left out entirely; train and test id
    sets are disjoint by construction.
    """
    train = DatasetSplit(name="train")
    test = DatasetSplit(name="test")
    for essay in split.essays:
        target = manifest.get(essay.id)
        if target == "train":
            train.essays.append(essay)
        elif target == "test":
            test.essays.append(essay)
    return train, test


class EmptySplitError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetStats:
    count: int
    scored_count: int
    avg_tokens: float
    score_range: tuple[BandScore, BandScore]
    mean_overall: float
    std_overall: float


def split_stats(split: DatasetSplit) -> DatasetStats:
    """Corpus statistics; score stats cover essays with a gold overall band,
    token counts are whitespace tokens of the essay text."""
    if not split.essays:
        raise EmptySplitError(f"split {split.name!r} is empty")
    token_counts = [len(essay.essay_text.split()) for essay in split.essays]
    scored = [essay.overall for essay in split.essays if essay.overall is not None]
    if not scored:
        raise EmptySplitError(f"split {split.name!r} has no scored essays")
    values = [band.value for band in scored]
    mean = sum(values) / len(values)
    variance = sum((v - mean) ** 2 for v in values) / len(values)
    return DatasetStats(
        count=len(split.essays),
        scored_count=len(scored),
        avg_tokens=sum(token_counts) / len(token_counts),
        score_range=(min(scored), max(scored)),
        mean_overall=mean,
        std_overall=math.sqrt(variance),
    )


@dataclass(frozen=True)
class Rejection:
    """Why a regenerated analytic evaluation was filtered out.

    causes: InvalidJson | InadmissibleBand | MeanConstraint
    """

    cause: str
    detail: str = ""
    raw_text: str = ""


def regenerate_analytic(
    essay: Essay,
    backend: LlmBackend,
    tolerance: float = DEFAULT_MEAN_TOLERANCE,
    model: str = "",
    max_tokens: int = 1024,
) -> AnalyticEvaluation | Rejection:
    """Re-score one essay's analytic criteria under the strict-JSON protocol.

    Accepts iff the response parses against the schema, every band is
    admissible, and the analytic mean stays within `tolerance` of the known
    overall band. Transport errors raise; rejections are returned.
    """
    if essay.overall is None:
        raise ValueError(f"essay {essay.id!r} has no overall band to constrain against")
    prompt = render_regeneration(essay.prompt_text, essay.essay_text, essay.overall)
    request = GenerationRequest(prompt=prompt, model=model, max_tokens=max_tokens)
    completion = backend.complete(request)
    try:
        evaluation = parse_regeneration(completion.text)
    except ParseError as exc:
        cause = "InadmissibleBand" if exc.kind == "inadmissible" else "InvalidJson"
        return Rejection(cause=cause, detail=str(exc), raw_text=completion.text)
    deviation = abs(evaluation.mean_value() - essay.overall.value)
    if deviation > tolerance + 1e-9:
        return Rejection(
            cause="MeanConstraint",
            detail=f"|mean {evaluation.mean_value()} - overall {essay.overall}| = {deviation:.3f}",
            raw_text=completion.text,
        )
    return evaluation


def evaluation_to_record(essay_id: str, evaluation: AnalyticEvaluation) -> dict:
    """Serialize an accepted evaluation with the regeneration schema's keys."""
    record: dict = {"id": essay_id}
    key_map = {
        Criterion.TR: "Task_Response",
        Criterion.CC: "Coherence_and_Cohesion",
        Criterion.LR: "Lexical_Resource",
        Criterion.GRA: "Grammatical_Range_and_Accuracy",
    }
    for criterion, key in key_map.items():
        entry = evaluation.criteria[criterion]
        payload: dict = {"Band": entry.band.value, "Comment": entry.comment}
        if criterion in (Criterion.LR, Criterion.GRA):
            payload["Mistakes"] = list(entry.mistakes)
            payload["Corrections"] = list(entry.corrections)
        record[key] = payload
    record["Overall_Band_Score"] = evaluation.overall_band.value
    record["General_Feedback"] = evaluation.general_feedback
    return record
