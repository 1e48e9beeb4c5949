"""Training data: corpus loading over the harness's JSONL schema, instruction
rows for criterion-isolated tuning, preference pairs, and the seeded
synthetic toy sets that keep the test suite hermetic.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from .configs import CRITERIA

# Criterion-isolated instruction wording; identical role/constraint structure
# across criteria, score-only output for TR.
CRITERION_INSTRUCTIONS = {
    "TR": (
        "You are an IELTS Writing Task 2 examiner.\n"
        "Evaluate the essay focusing ONLY on the criterion Task Response (TR).\n"
        'Output (JSON): {"score": float}'
    ),
    "CC": (
        "You are an IELTS Writing Task 2 examiner.\n"
        "Evaluate the essay focusing ONLY on the criterion Coherence and Cohesion (CC).\n"
        'Output (JSON): {"score": float, "comment": string}'
    ),
    "LR": (
        "You are an IELTS Writing Task 2 examiner.\n"
        "Evaluate the essay focusing ONLY on the criterion Lexical Resource (LR).\n"
        'Output (JSON): {"score": float, "comment": string}'
    ),
    "GRA": (
        "You are an IELTS Writing Task 2 examiner.\n"
        "Evaluate the essay focusing ONLY on the criterion Grammatical Range and Accuracy (GRA).\n"
        'Output (JSON): {"score": float, "comment": string}'
    ),
}

_REGEN_KEYS = {
    "TR": "Task_Response",
    "CC": "Coherence_and_Cohesion",
    "LR": "Lexical_Resource",
    "GRA": "Grammatical_Range_and_Accuracy",
}


@dataclass(frozen=True)
class LabeledEssay:
    id: str
    prompt: str
    essay: str
    band: float  # overall band value
    analytic: dict[str, float] | None = None  # criterion tag -> band value
    comments: dict[str, str] | None = None

    @property
    def band_class(self) -> int:
        return int(round(self.band * 2))


@dataclass(frozen=True)
class InstructionRow:
    criterion: str
    instruction: str
    prompt: str
    essay: str
    target_json: str


@dataclass(frozen=True)
class PreferencePair:
    prompt: str
    essay: str
    preferred: str
    dispreferred: str


def load_labeled_essays(path: str | Path) -> list[LabeledEssay]:
    """Read the scoring harness's primary-corpus JSONL."""
    essays = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if record.get("band") is None:
                continue
            analytic = None
            comments = None
            evaluation = record.get("evaluation")
            if isinstance(evaluation, dict):
                bands = {}
                notes = {}
                for tag, key in _REGEN_KEYS.items():
                    entry = evaluation.get(key)
                    if isinstance(entry, dict) and "Band" in entry:
                        bands[tag] = float(entry["Band"])
                        if entry.get("Comment"):
                            notes[tag] = str(entry["Comment"])
                if len(bands) == 4:
                    analytic = bands
                    comments = notes
            essays.append(
                LabeledEssay(
                    id=str(record["id"]),
                    prompt=str(record.get("prompt", "")),
                    essay=str(record["essay"]),
                    band=float(record["band"]),
                    analytic=analytic,
                    comments=comments,
                )
            )
    return essays


def render_instruction_input(row: InstructionRow) -> str:
    return (
        f"{row.instruction}\n"
        f"Essay prompt: {row.prompt}\n"
        f"Essay: {row.essay}\n"
        "Answer:"
    )


def instruction_rows(essays: list[LabeledEssay]) -> list[InstructionRow]:
    """One row per (essay, criterion) from essays carrying analytic labels."""
    rows = []
    for essay in essays:
        if essay.analytic is None:
            continue
        for tag in CRITERIA:
            band = essay.analytic[tag]
            if tag == "TR":
                target = json.dumps({"score": band})
            else:
                comment = (essay.comments or {}).get(tag, f"{tag} level {band}")
                target = json.dumps({"score": band, "comment": comment})
            rows.append(
                InstructionRow(
                    criterion=tag,
                    instruction=CRITERION_INSTRUCTIONS[tag],
                    prompt=essay.prompt,
                    essay=essay.essay,
                    target_json=target,
                )
            )
    return rows


# Synthetic toy material. Vocabulary correlates with band level so even a tiny
# model has signal to fit.

_TOPICS = (
    "technology in classrooms",
    "public transport funding",
    "city living benefits",
    "renewable energy policy",
)

_LOW_PHRASES = ("simple words used often", "ideas repeat many time", "short sentence only")
_HIGH_PHRASES = (
    "arguments develop with precise examples",
    "cohesive devices guide the reader",
    "complex structures remain accurate",
)


def toy_labeled_essays(count: int = 8, seed: int = 13) -> list[LabeledEssay]:
    """Seeded band-correlated essays with analytic labels."""
    rng = random.Random(seed)
    essays = []
    for i in range(count):
        band = [4.0, 5.0, 5.5, 6.0, 6.5, 7.0, 7.5, 8.0][i % 8]
        rich = band >= 6.0
        phrases = _HIGH_PHRASES if rich else _LOW_PHRASES
        body = " ".join(rng.choice(phrases) for _ in range(4))
        analytic = {tag: band for tag in CRITERIA}
        essays.append(
            LabeledEssay(
                id=f"toy-{i:02d}",
                prompt=f"Discuss {_TOPICS[i % len(_TOPICS)]}.",
                essay=f"{body} sample {i}",
                band=band,
                analytic=analytic,
                comments={tag: f"{tag.lower()} note {i}" for tag in CRITERIA},
            )
        )
    return essays


def toy_instruction_rows(seed: int = 13) -> list[InstructionRow]:
    """The 32-row synthetic instruction set: 8 essays x 4 criteria."""
    rows = instruction_rows(toy_labeled_essays(8, seed))
    assert len(rows) == 32
    return rows


def shuffled_words(text: str, rng: random.Random) -> str:
    words = text.split()
    rng.shuffle(words)
    return " ".join(words)


def toy_preference_pairs(count: int = 16, seed: int = 17) -> list[PreferencePair]:
    """Preference pairs where preferred = the supervised target and
    dispreferred = the same words with their order destroyed."""
    rng = random.Random(seed)
    rows = toy_instruction_rows(seed=13)
    pairs = []
    for row in rows[:count]:
        preferred = row.target_json
        dispreferred = shuffled_words(preferred, rng)
        if dispreferred == preferred:
            dispreferred = " ".join(reversed(preferred.split()))
        pairs.append(
            PreferencePair(
                prompt=row.instruction, essay=row.essay,
                preferred=preferred, dispreferred=dispreferred,
            )
        )
    return pairs
