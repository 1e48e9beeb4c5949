"""The four scoring strategies: direct final-band prompting, joint
criterion scoring, per-criterion scoring with retrieval grounding, and the
preference-tuned joint path with retrieval.

Strategies are stateless given their config. Failures (backend or parse) are
captured on the result, never raised mid-run: a flagged result keeps its call
traces and is excluded from metrics downstream.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .bands import (
    CRITERIA,
    BandScore,
    Criterion,
    CriterionSet,
    DEFAULT_ROUNDING,
    RoundingRule,
    overall_from_criteria,
)
from .dataset import Essay
from .gateway import BackendError, Completion, GenerationRequest, LlmBackend, fingerprint
from .parsing import (
    ParseError,
    parse_criterion_json,
    parse_final_band,
    parse_single_criterion,
    repair_json,
)
from .prompting import (
    ContextBlock,
    Exemplar,
    prepend_context,
    render_criterion_joint,
    render_final_band,
    render_single_criterion,
)
from .retrieval import Embedder, RetrievalIndex

log = logging.getLogger(__name__)

STRATEGY_KINDS = (
    "final-band-prompting",
    "criterion-joint",
    "criterion-rag",
    "sft-dpo-rag",
)

STANDARD_SHOT_COUNTS = (0, 2, 4)


class StrategyConfigError(ValueError):
    pass


@dataclass
class DecodeParams:
    temperature: float = 0.0
    max_tokens: int = 512
    seed: int | None = 0


RAG_KINDS = ("criterion-rag", "sft-dpo-rag")


@dataclass
class StrategyConfig:
    """Configuration for one scoring strategy instance.

    The retrieval-grounded kinds default to the two-shot retrieval setting;
    the prompting kinds default to zero-shot.
    """

    name: str
    kind: str
    k_shots: int | None = None
    exemplar_source: str | None = None  # retrieval | fixed-list | none
    backend: str = ""
    criterion_backends: dict[str, str] = field(default_factory=dict)
    rounding: RoundingRule = DEFAULT_ROUNDING
    model: str = ""
    decode: DecodeParams = field(default_factory=DecodeParams)
    fixed_exemplar_ids: list[str] = field(default_factory=list)
    exemplar_seed: int = 0
    declared_cost_hours: float | None = None
    gpu_count: int = 1

    def __post_init__(self) -> None:
        if self.kind not in STRATEGY_KINDS:
            raise StrategyConfigError(f"unknown strategy kind {self.kind!r}")
        if self.k_shots is None:
            self.k_shots = 2 if self.kind in RAG_KINDS else 0
        if self.exemplar_source is None:
            self.exemplar_source = "retrieval" if self.kind in RAG_KINDS else "none"
        if self.k_shots < 0:
            raise StrategyConfigError("k_shots must be >= 0")
        if self.exemplar_source not in ("retrieval", "fixed-list", "none"):
            raise StrategyConfigError(f"unknown exemplar source {self.exemplar_source!r}")
        if self.kind == "criterion-rag" and self.k_shots > 0 and self.exemplar_source == "none":
            raise StrategyConfigError(
                "criterion-rag with k_shots > 0 needs an exemplar source"
            )
        if self.k_shots not in STANDARD_SHOT_COUNTS:
            log.warning(
                "strategy %s uses k_shots=%d outside the standard set %s",
                self.name,
                self.k_shots,
                STANDARD_SHOT_COUNTS,
            )

    def backend_for(self, criterion: Criterion) -> str:
        return self.criterion_backends.get(criterion.value, self.backend)

    @property
    def standard_shot_count(self) -> bool:
        return self.k_shots in STANDARD_SHOT_COUNTS


@dataclass
class CallTrace:
    """One completion call inside a scored result."""

    role: str  # final-band | criterion-joint | TR | CC | LR | GRA
    backend: str
    model: str
    fingerprint: str
    completion_text: str | None
    prompt_tokens: int = 0
    output_tokens: int = 0
    latency_s: float = 0.0
    parsed: dict | None = None
    error: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "role": self.role,
            "backend": self.backend,
            "model": self.model,
            "fingerprint": self.fingerprint,
            "completion_text": self.completion_text,
            "prompt_tokens": self.prompt_tokens,
            "output_tokens": self.output_tokens,
            "latency_s": self.latency_s,
            "parsed": self.parsed,
            "error": self.error,
        }


@dataclass
class ScoredResult:
    """One strategy's output for one essay, with full call traces."""

    essay_id: str
    strategy: str
    kind: str
    overall: BandScore | None = None
    criteria: CriterionSet | None = None
    pre_snap_mean: float | None = None
    feedback: str = ""
    exemplar_ids: tuple[str, ...] = ()
    calls: list[CallTrace] = field(default_factory=list)
    parse_failed: bool = False
    failure: str | None = None
    warnings: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "essay_id": self.essay_id,
            "strategy": self.strategy,
            "kind": self.kind,
            "overall": str(self.overall) if self.overall else None,
            "criteria": (
                {c.value: str(self.criteria.score(c)) for c in CRITERIA}
                if self.criteria
                else None
            ),
            "pre_snap_mean": self.pre_snap_mean,
            "feedback": self.feedback,
            "exemplar_ids": list(self.exemplar_ids),
            "calls": [call.to_json_dict() for call in self.calls],
            "parse_failed": self.parse_failed,
            "failure": self.failure,
            "warnings": list(self.warnings),
        }


def pick_fixed_exemplars(
    cfg: StrategyConfig, train_essays: Sequence[Essay]
) -> list[str]:
    """Resolve the global fixed exemplar list: explicit ids if configured,
    otherwise a seeded sample of scored train essays."""
    if cfg.fixed_exemplar_ids:
        return list(cfg.fixed_exemplar_ids)
    scored_ids = [e.id for e in train_essays if e.overall is not None]
    rng = random.Random(cfg.exemplar_seed)
    count = min(cfg.k_shots + 1, len(scored_ids))  # one spare for self-collisions
    return rng.sample(scored_ids, count) if scored_ids else []


def build_context(
    essay: Essay,
    cfg: StrategyConfig,
    index: RetrievalIndex | None,
    embedder: Embedder | None,
    train_by_id: Mapping[str, Essay],
    fixed_ids: Sequence[str] = (),
) -> ContextBlock:
    """Assemble the in-context exemplars for one query essay.

    Retrieval pulls top-k neighbours (self-excluded); fixed-list walks the
    global list, skipping a self-collision and backfilling from the spare.
    """
    if cfg.k_shots == 0 or cfg.exemplar_source == "none":
        return ContextBlock(query_essay_id=essay.id)
    chosen: list[Essay] = []
    if cfg.exemplar_source == "retrieval":
        if index is None or embedder is None:
            raise StrategyConfigError(
                f"strategy {cfg.name!r} needs a retrieval index and embedder"
            )
        for exemplar_id, _sim in index.retrieve_for_essay(essay, cfg.k_shots, embedder):
            chosen.append(index.essay(exemplar_id))
    else:
        for exemplar_id in fixed_ids:
            if exemplar_id == essay.id:
                continue
            if exemplar_id not in train_by_id:
                raise StrategyConfigError(f"fixed exemplar id {exemplar_id!r} not in train split")
            chosen.append(train_by_id[exemplar_id])
            if len(chosen) == cfg.k_shots:
                break
    exemplars = tuple(
        Exemplar(
            essay_id=e.id,
            prompt_text=e.prompt_text,
            essay_text=e.essay_text,
            band=e.overall,
            criteria=e.analytic,
        )
        for e in chosen
        if e.overall is not None
    )
    return ContextBlock(exemplars=exemplars, query_essay_id=essay.id)


def _issue(
    prompt: str,
    role: str,
    cfg: StrategyConfig,
    backend: LlmBackend,
) -> tuple[CallTrace, Completion | None]:
    # An explicit strategy model wins; otherwise score against whatever model
    # the routed backend serves (criterion adapters may each serve their own).
    model = cfg.model or getattr(backend, "model", "")
    request = GenerationRequest(
        prompt=prompt,
        model=model,
        temperature=cfg.decode.temperature,
        max_tokens=cfg.decode.max_tokens,
        seed=cfg.decode.seed,
        backend=backend.id,
    )
    trace = CallTrace(
        role=role,
        backend=backend.id,
        model=model,
        fingerprint=fingerprint(request),
        completion_text=None,
    )
    try:
        completion = backend.complete(request)
    except BackendError as exc:
        trace.error = f"backend:{exc.kind}"
        return trace, None
    trace.completion_text = completion.text
    trace.prompt_tokens = completion.prompt_tokens
    trace.output_tokens = completion.output_tokens
    trace.latency_s = completion.latency_s
    return trace, completion


def score_final_band(
    essay: Essay,
    cfg: StrategyConfig,
    backend: LlmBackend,
    ctx: ContextBlock,
) -> ScoredResult:
    """Single-call overall-band prediction; no analytic criteria."""
    result = ScoredResult(
        essay_id=essay.id,
        strategy=cfg.name,
        kind=cfg.kind,
        exemplar_ids=tuple(ex.essay_id for ex in ctx.exemplars),
    )
    prompt = render_final_band(essay.prompt_text, essay.essay_text, ctx)
    trace, completion = _issue(prompt, "final-band", cfg, backend)
    result.calls.append(trace)
    if completion is None:
        result.parse_failed = True
        result.failure = trace.error
        return result
    try:
        parsed = parse_final_band(completion.text)
    except ParseError as exc:
        trace.error = f"parse:{exc.kind}"
        result.parse_failed = True
        result.failure = trace.error
        return result
    trace.parsed = {"band": str(parsed.band)}
    result.overall = parsed.band
    result.warnings = parsed.warnings
    result.feedback = completion.text.strip()
    return result


_FEEDBACK_KEYS = ("Feedback", "General_Feedback", "Overall_Feedback", "Comment")


def _holistic_feedback(text: str) -> str:
    """Pull a holistic feedback string out of a joint JSON response, if any."""
    import json as _json

    try:
        data = _json.loads(repair_json(text))
    except (ValueError, TypeError):
        return ""
    if not isinstance(data, dict):
        return ""
    for key in _FEEDBACK_KEYS:
        value = data.get(key)
        if isinstance(value, str) and value.strip():
            return value.strip()
    return ""


def _score_joint(
    essay: Essay,
    cfg: StrategyConfig,
    backend: LlmBackend,
    ctx: ContextBlock,
) -> ScoredResult:
    result = ScoredResult(
        essay_id=essay.id,
        strategy=cfg.name,
        kind=cfg.kind,
        exemplar_ids=tuple(ex.essay_id for ex in ctx.exemplars),
    )
    prompt = render_criterion_joint(essay.prompt_text, essay.essay_text, ctx)
    trace, completion = _issue(prompt, "criterion-joint", cfg, backend)
    result.calls.append(trace)
    if completion is None:
        result.parse_failed = True
        result.failure = trace.error
        return result
    try:
        criteria = parse_criterion_json(completion.text)
    except ParseError as exc:
        trace.error = f"parse:{exc.kind}"
        result.parse_failed = True
        result.failure = trace.error
        return result
    aggregate = overall_from_criteria(criteria, cfg.rounding)
    trace.parsed = {c.value: str(criteria.score(c)) for c in CRITERIA}
    result.criteria = criteria
    result.overall = aggregate.band
    result.pre_snap_mean = aggregate.mean
    result.feedback = _holistic_feedback(completion.text)
    return result


def score_criterion_joint(
    essay: Essay,
    cfg: StrategyConfig,
    backend: LlmBackend,
    ctx: ContextBlock,
) -> ScoredResult:
    """One joint call scoring all four criteria; overall is their aggregate."""
    return _score_joint(essay, cfg, backend, ctx)


def score_sft_dpo(
    essay: Essay,
    cfg: StrategyConfig,
    backend: LlmBackend,
    ctx: ContextBlock,
) -> ScoredResult:
    """Preference-tuned joint scoring with retrieved context; the inference
    path is the joint-prompt path against the tuned endpoint."""
    return _score_joint(essay, cfg, backend, ctx)


def score_criterion_rag(
    essay: Essay,
    cfg: StrategyConfig,
    backends: Mapping[str, LlmBackend],
    ctx: ContextBlock,
) -> ScoredResult:
    """Four criterion-isolated calls, each optionally routed to its own
    backend/adapter, aggregated into the overall band.

    Exemplars are retrieved once per essay and shared by all four calls as a
    CONTEXT block above the criterion instruction. A failure in any call
    flags the whole result; the remaining calls still run and are traced.
    """
    result = ScoredResult(
        essay_id=essay.id,
        strategy=cfg.name,
        kind=cfg.kind,
        exemplar_ids=tuple(ex.essay_id for ex in ctx.exemplars),
    )
    bands: dict[Criterion, BandScore] = {}
    comments: dict[Criterion, str] = {}
    for criterion in CRITERIA:
        backend_id = cfg.backend_for(criterion)
        backend = backends[backend_id]
        prompt = prepend_context(
            render_single_criterion(criterion, essay.prompt_text, essay.essay_text), ctx
        )
        trace, completion = _issue(prompt, criterion.value, cfg, backend)
        result.calls.append(trace)
        if completion is None:
            continue
        try:
            band, comment = parse_single_criterion(completion.text, criterion)
        except ParseError as exc:
            trace.error = f"parse:{exc.kind}"
            continue
        trace.parsed = {"score": str(band), "comment": comment}
        bands[criterion] = band
        if comment:
            comments[criterion] = comment
    failed = [trace for trace in result.calls if trace.error]
    if failed or len(bands) != 4:
        # No partial aggregation: a mean over fewer than four criteria is not
        # an overall band.
        result.parse_failed = True
        result.failure = failed[0].error if failed else "parse:incomplete"
        return result
    criteria = CriterionSet(
        tr=bands[Criterion.TR],
        cc=bands[Criterion.CC],
        lr=bands[Criterion.LR],
        gra=bands[Criterion.GRA],
        comments=comments,
    )
    aggregate = overall_from_criteria(criteria, cfg.rounding)
    result.criteria = criteria
    result.overall = aggregate.band
    result.pre_snap_mean = aggregate.mean
    result.feedback = "\n".join(
        f"{criterion.value}: {comments[criterion]}" for criterion in CRITERIA if criterion in comments
    )
    return result


def score_essay(
    essay: Essay,
    cfg: StrategyConfig,
    backends: Mapping[str, LlmBackend],
    index: RetrievalIndex | None,
    embedder: Embedder | None,
    train_by_id: Mapping[str, Essay],
    fixed_ids: Sequence[str] = (),
) -> ScoredResult:
    """Dispatch one essay to the configured strategy kind."""
    ctx = build_context(essay, cfg, index, embedder, train_by_id, fixed_ids)
    if cfg.kind == "criterion-rag":
        return score_criterion_rag(essay, cfg, backends, ctx)
    backend = backends[cfg.backend]
    if cfg.kind == "final-band-prompting":
        return score_final_band(essay, cfg, backend, ctx)
    if cfg.kind == "criterion-joint":
        return score_criterion_joint(essay, cfg, backend, ctx)
    if cfg.kind == "sft-dpo-rag":
        return score_sft_dpo(essay, cfg, backend, ctx)
    raise StrategyConfigError(f"unknown strategy kind {cfg.kind!r}")
