"""Prompt rendering: examiner templates, exemplar context blocks, placeholder
substitution.

Templates ship as UTF-8 text assets with ``${name}`` placeholders. Rendering
is single-pass: placeholder values are inserted verbatim and never re-scanned,
so essay text containing ``${`` cannot inject template directives.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from importlib import resources

from .bands import BandScore, Criterion, CriterionSet

_PLACEHOLDER_RE = re.compile(r"\$\{([a-z_]+)\}")

TEMPLATE_FILES = {
    "final-band": "final_band.txt",
    "criterion-joint": "criterion_joint.txt",
    "single-criterion-TR": "single_criterion_tr.txt",
    "single-criterion-CC": "single_criterion_cc.txt",
    "single-criterion-LR": "single_criterion_lr.txt",
    "single-criterion-GRA": "single_criterion_gra.txt",
    "regeneration": "regeneration.txt",
}

CONTEXT_HEADING = "CONTEXT (Reference Essays with Scores):"

_template_cache: dict[str, str] = {}


class RenderError(ValueError):
    pass


def load_template(kind: str) -> str:
    """Load a template asset body by kind, cached after first read."""
    if kind not in TEMPLATE_FILES:
        raise RenderError(f"unknown template kind {kind!r}")
    if kind not in _template_cache:
        text = (
            resources.files("ielts_aes.templates")
            .joinpath(TEMPLATE_FILES[kind])
            .read_text(encoding="utf-8")
        )
        _template_cache[kind] = text.replace("\r\n", "\n").replace("\r", "\n")
    return _template_cache[kind]


def template_fingerprint() -> str:
    """Stable hash over every shipped template, for report provenance."""
    digest = hashlib.sha256()
    for kind in sorted(TEMPLATE_FILES):
        digest.update(kind.encode("utf-8"))
        digest.update(b"\x00")
        digest.update(load_template(kind).encode("utf-8"))
    return digest.hexdigest()[:16]


def render(body: str, bindings: dict[str, str]) -> str:
    """Substitute ``${name}`` placeholders in one pass; unbound names error."""

    def _sub(match: re.Match[str]) -> str:
        name = match.group(1)
        if name not in bindings:
            raise RenderError(f"unbound placeholder ${{{name}}}")
        return bindings[name]

    rendered = _PLACEHOLDER_RE.sub(_sub, body)
    return rendered.replace("\r\n", "\n").replace("\r", "\n")


@dataclass(frozen=True)
class Exemplar:
    """One reference essay with its known band, shown as in-context evidence."""

    essay_id: str
    prompt_text: str
    essay_text: str
    band: BandScore
    criteria: CriterionSet | None = None


@dataclass(frozen=True)
class ContextBlock:
    """Ordered in-context exemplars for one query essay."""

    exemplars: tuple[Exemplar, ...] = ()
    query_essay_id: str | None = None

    def __post_init__(self) -> None:
        if self.query_essay_id is not None:
            for ex in self.exemplars:
                if ex.essay_id == self.query_essay_id:
                    raise ValueError(
                        f"exemplar {ex.essay_id!r} is the query essay itself"
                    )

    def __len__(self) -> int:
        return len(self.exemplars)

    def render(self) -> str:
        return "\n\n".join(
            format_exemplar(ex.prompt_text, ex.essay_text, ex.band) for ex in self.exemplars
        )


EMPTY_CONTEXT = ContextBlock()


def format_exemplar(prompt_text: str, essay_text: str, band: BandScore) -> str:
    """Fixed exemplar block layout; newlines inside texts are preserved."""
    return f"Prompt: {prompt_text}\nEssay: {essay_text}\nBand: {band}"


def _drop_context_section(body: str) -> str:
    """Remove the optional CONTEXT paragraph for zero-shot rendering."""
    blocks = body.split("\n\n")
    kept = [b for b in blocks if "${context}" not in b]
    return "\n\n".join(kept)


def _question_block(prompt_text: str, essay_text: str) -> str:
    return f"Prompt: {prompt_text}\nEssay: {essay_text}"


def _check_essay_texts(prompt_text: str, essay_text: str) -> None:
    if not prompt_text.strip() or not essay_text.strip():
        raise RenderError("prompt_text and essay_text must be non-empty")


def render_final_band(prompt_text: str, essay_text: str, ctx: ContextBlock = EMPTY_CONTEXT) -> str:
    """Final-band examiner prompt; the CONTEXT section is omitted when ctx is empty."""
    _check_essay_texts(prompt_text, essay_text)
    body = load_template("final-band")
    if len(ctx) == 0:
        body = _drop_context_section(body)
        return render(body, {"question": _question_block(prompt_text, essay_text)})
    return render(
        body,
        {"context": ctx.render(), "question": _question_block(prompt_text, essay_text)},
    )


def render_criterion_joint(
    prompt_text: str, essay_text: str, ctx: ContextBlock = EMPTY_CONTEXT
) -> str:
    """Joint four-criterion examiner prompt (single JSON object response)."""
    _check_essay_texts(prompt_text, essay_text)
    body = load_template("criterion-joint")
    if len(ctx) == 0:
        body = _drop_context_section(body)
        return render(body, {"question": _question_block(prompt_text, essay_text)})
    return render(
        body,
        {"context": ctx.render(), "question": _question_block(prompt_text, essay_text)},
    )


def render_single_criterion(criterion: Criterion, prompt_text: str, essay_text: str) -> str:
    """Criterion-isolated instruction prompt; these templates carry no context slot."""
    _check_essay_texts(prompt_text, essay_text)
    body = load_template(f"single-criterion-{criterion.value}")
    return render(body, {"essay_prompt": prompt_text, "essay_text": essay_text})


def prepend_context(rendered: str, ctx: ContextBlock) -> str:
    """Prefix a rendered prompt with a CONTEXT block, same layout as the
    templated sections. No-op for an empty block."""
    if len(ctx) == 0:
        return rendered
    return f"{CONTEXT_HEADING}\n{ctx.render()}\n\n{rendered}"


def render_regeneration(prompt_text: str, essay_text: str, overall: BandScore) -> str:
    """Analytic re-scoring prompt with the known overall band as soft constraint."""
    _check_essay_texts(prompt_text, essay_text)
    body = load_template("regeneration")
    return render(
        body,
        {
            "overall_band": str(overall),
            "essay_prompt": prompt_text,
            "essay_text": essay_text,
        },
    )
