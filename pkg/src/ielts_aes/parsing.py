"""Deterministic parsing of raw model completions into band scores and
feedback.

Models emit float noise and decorated JSON; the repair pipeline is strictly
best-effort (it never invents keys or values) and every parse failure is a
typed error, never a silently imputed band.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .bands import BandScore, Criterion

# Bands emitted by a model are snapped onto the half-band grid within this
# tolerance ("6.49" is accepted as 6.5); anything farther off is inadmissible.
MODEL_BAND_TOL = 0.05

JOINT_KEYS = ("TR_Band", "CC_Band", "LR_Band", "GRA_Band")

REGEN_CRITERION_KEYS = {
    Criterion.TR: "Task_Response",
    Criterion.CC: "Coherence_and_Cohesion",
    Criterion.LR: "Lexical_Resource",
    Criterion.GRA: "Grammatical_Range_and_Accuracy",
}


class ParseError(ValueError):
    """Parse failure with a machine-readable variant.

    kinds: invalid-json, missing-key, inadmissible, no-band-found, list-mismatch
    """

    def __init__(self, kind: str, detail: str = ""):
        self.kind = kind
        self.detail = detail
        super().__init__(f"{kind}: {detail}" if detail else kind)


_FENCE_RE = re.compile(r"```[a-zA-Z]*\n?(.*?)```", re.DOTALL)
_TRAILING_COMMA_RE = re.compile(r",(\s*[}\]])")
_SMART_QUOTES = {"“": '"', "”": '"', "„": '"', "‘": "'", "’": "'"}
_NUMBER_RE = re.compile(r"\d+(?:\.\d+)?")
_BAND_PREFIX_RE = re.compile(r"\bBand:\s*(\d+(?:\.\d+)?)")


def _is_parseable(text: str) -> bool:
    try:
        json.loads(text)
        return True
    except (json.JSONDecodeError, ValueError):
        return False


def _extract_balanced_object(text: str) -> str:
    """Slice from the first '{' to its matching '}' (string-aware); if the
    object never closes, keep everything from the first '{' onward."""
    start = text.find("{")
    if start < 0:
        return text
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    return text[start:]


def repair_json(text: str) -> str:
    """Best-effort JSON cleanup: strip code fences, trim to the outermost
    object, drop trailing commas, normalize smart quotes.

    Already-parseable text is returned unchanged, which also makes the
    function idempotent.
    """
    if _is_parseable(text):
        return text
    fenced = _FENCE_RE.findall(text)
    if fenced:
        text = "\n".join(block.strip() for block in fenced)
        if _is_parseable(text):
            return text
    text = _extract_balanced_object(text)
    if _is_parseable(text):
        return text
    text = _TRAILING_COMMA_RE.sub(r"\1", text)
    if _is_parseable(text):
        return text
    for smart, plain in _SMART_QUOTES.items():
        text = text.replace(smart, plain)
    return text


def _load_object(text: str) -> dict:
    repaired = repair_json(text)
    try:
        data = json.loads(repaired)
    except (json.JSONDecodeError, ValueError) as exc:
        raise ParseError("invalid-json", str(exc)) from exc
    if not isinstance(data, dict):
        raise ParseError("invalid-json", f"expected an object, got {type(data).__name__}")
    return data


def band_from_model_value(value: object, where: str = "") -> BandScore:
    """Validate a model-emitted band: numeric (or numeric string), in range,
    within MODEL_BAND_TOL of a half step."""
    if isinstance(value, bool) or value is None:
        raise ParseError("inadmissible", f"{where}: {value!r} is not a number")
    if isinstance(value, str):
        try:
            value = float(value.strip())
        except ValueError:
            raise ParseError("inadmissible", f"{where}: {value!r} is not a number") from None
    if not isinstance(value, (int, float)):
        raise ParseError("inadmissible", f"{where}: {value!r} is not a number")
    x = float(value)
    if not 0.0 <= x <= 9.0:
        raise ParseError("inadmissible", f"{where}: {x} outside [0, 9]")
    half_steps = round(x * 2.0)
    if abs(x - half_steps / 2.0) > MODEL_BAND_TOL:
        raise ParseError("inadmissible", f"{where}: {x} is not a half band")
    return BandScore(int(half_steps))


@dataclass(frozen=True)
class FinalBandParse:
    band: BandScore
    warnings: tuple[str, ...] = ()


def parse_final_band(text: str) -> FinalBandParse:
    """Extract a single overall band from free-form text.

    An explicit "Band: X" marker wins; otherwise the first numeric token in
    [0, 9] that snaps onto the half-band grid is taken, with a
    MultipleCandidates warning when later tokens disagree.
    """
    marker = _BAND_PREFIX_RE.search(text)
    if marker:
        try:
            return FinalBandParse(band=band_from_model_value(marker.group(1), "Band:"))
        except ParseError:
            pass  # marker present but unusable; fall back to the token scan
    in_range: list[float] = []
    candidates: list[BandScore] = []
    for token in _NUMBER_RE.findall(text):
        x = float(token)
        if not 0.0 <= x <= 9.0:
            continue
        in_range.append(x)
        try:
            candidates.append(band_from_model_value(x, "token"))
        except ParseError:
            continue
    if not candidates:
        if in_range:
            raise ParseError("inadmissible", f"no half-band token among {in_range}")
        raise ParseError("no-band-found", "no numeric token in [0, 9]")
    warnings: tuple[str, ...] = ()
    if len({c.half_steps for c in candidates}) > 1:
        warnings = ("MultipleCandidates",)
    return FinalBandParse(band=candidates[0], warnings=warnings)


def parse_criterion_json(text: str):
    """Parse the joint four-key JSON object into a CriterionSet."""
    from .bands import CriterionSet

    data = _load_object(text)
    for key in JOINT_KEYS:
        if key not in data:
            raise ParseError("missing-key", key)
    bands = {key: band_from_model_value(data[key], key) for key in JOINT_KEYS}
    return CriterionSet(
        tr=bands["TR_Band"], cc=bands["CC_Band"], lr=bands["LR_Band"], gra=bands["GRA_Band"]
    )


def parse_single_criterion(text: str, expected: Criterion) -> tuple[BandScore, str | None]:
    """Parse a single-criterion response: "score" always required; "comment"
    required for CC/LR/GRA (the TR schema omits it)."""
    data = _load_object(text)
    if "score" not in data:
        raise ParseError("missing-key", "score")
    band = band_from_model_value(data["score"], "score")
    comment = data.get("comment")
    if comment is not None and not isinstance(comment, str):
        comment = str(comment)
    if expected is not Criterion.TR and comment is None:
        raise ParseError("missing-key", "comment")
    return band, comment


@dataclass(frozen=True)
class CriterionEvaluation:
    """One criterion's regenerated judgment."""

    band: BandScore
    comment: str = ""
    mistakes: tuple[str, ...] = ()
    corrections: tuple[str, ...] = ()


@dataclass(frozen=True)
class AnalyticEvaluation:
    """Full regenerated analytic evaluation for one essay."""

    criteria: dict[Criterion, CriterionEvaluation]
    overall_band: BandScore
    general_feedback: str = ""

    def mean_value(self) -> float:
        return sum(c.band.half_steps for c in self.criteria.values()) / 8.0

    def bands(self) -> dict[Criterion, BandScore]:
        return {crit: ev.band for crit, ev in self.criteria.items()}


def _string_list(value: object, where: str) -> tuple[str, ...]:
    if not isinstance(value, list):
        raise ParseError("invalid-json", f"{where} must be an array")
    return tuple(str(item) for item in value)


def parse_regeneration(text: str) -> AnalyticEvaluation:
    """Parse the strict-JSON analytic re-scoring response."""
    data = _load_object(text)
    criteria: dict[Criterion, CriterionEvaluation] = {}
    for criterion, key in REGEN_CRITERION_KEYS.items():
        if key not in data:
            raise ParseError("missing-key", key)
        entry = data[key]
        if not isinstance(entry, dict):
            raise ParseError("invalid-json", f"{key} must be an object")
        if "Band" not in entry:
            raise ParseError("missing-key", f"{key}.Band")
        band = band_from_model_value(entry["Band"], f"{key}.Band")
        mistakes = _string_list(entry["Mistakes"], f"{key}.Mistakes") if "Mistakes" in entry else ()
        corrections = (
            _string_list(entry["Corrections"], f"{key}.Corrections")
            if "Corrections" in entry
            else ()
        )
        if "Mistakes" in entry and "Corrections" in entry and len(mistakes) != len(corrections):
            raise ParseError(
                "list-mismatch",
                f"{key}: {len(mistakes)} mistakes vs {len(corrections)} corrections",
            )
        criteria[criterion] = CriterionEvaluation(
            band=band,
            comment=str(entry.get("Comment", "")),
            mistakes=mistakes,
            corrections=corrections,
        )
    if "Overall_Band_Score" not in data:
        raise ParseError("missing-key", "Overall_Band_Score")
    overall = band_from_model_value(data["Overall_Band_Score"], "Overall_Band_Score")
    return AnalyticEvaluation(
        criteria=criteria,
        overall_band=overall,
        general_feedback=str(data.get("General_Feedback", "")),
    )


@dataclass(frozen=True)
class ParsedOutput:
    """Tagged result of parsing one completion, with the raw text retained."""

    kind: str  # final-band | criterion-joint | single-criterion | regeneration
    raw_text: str
    band: BandScore | None = None
    criteria: object | None = None
    criterion: Criterion | None = None
    comment: str | None = None
    evaluation: AnalyticEvaluation | None = None
    warnings: tuple[str, ...] = field(default_factory=tuple)


def parse_output(kind: str, text: str, criterion: Criterion | None = None) -> ParsedOutput:
    """Dispatch to the kind-specific parser, packaging the result."""
    if kind == "final-band":
        result = parse_final_band(text)
        return ParsedOutput(kind=kind, raw_text=text, band=result.band, warnings=result.warnings)
    if kind == "criterion-joint":
        return ParsedOutput(kind=kind, raw_text=text, criteria=parse_criterion_json(text))
    if kind == "single-criterion":
        if criterion is None:
            raise ValueError("single-criterion parse needs the expected criterion")
        band, comment = parse_single_criterion(text, criterion)
        return ParsedOutput(
            kind=kind, raw_text=text, band=band, criterion=criterion, comment=comment
        )
    if kind == "regeneration":
        return ParsedOutput(kind=kind, raw_text=text, evaluation=parse_regeneration(text))
    raise ValueError(f"unknown parse kind {kind!r}")
