"""Shared test fixtures and helpers."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from ielts_aes.bands import BandScore, band_validate
from ielts_aes.dataset import Essay, EssaySource


def band(x: float) -> BandScore:
    return band_validate(x)


def make_essay(
    essay_id: str = "e1",
    prompt: str = "Some people think computers should replace teachers. Discuss.",
    text: str = "Technology has changed education in many ways over the last decades.",
    overall: float | None = 6.5,
    source: EssaySource = EssaySource.PRIMARY,
) -> Essay:
    return Essay(
        id=essay_id,
        prompt_text=prompt,
        essay_text=text,
        overall=band(overall) if overall is not None else None,
        source=source,
    )


# Deterministic corpus of small essays used across dataset/runner tests. Word
# salads are fine: the scoring path never inspects essay semantics.
_TOPICS = [
    "Technology will replace many jobs in the coming years. To what extent do you agree?",
    "Governments should invest more in public transport than in roads. Discuss.",
    "Some believe children learn best through play rather than formal lessons.",
    "International tourism harms local cultures. Do the drawbacks outweigh the benefits?",
]

_SENTENCES = [
    "Many people believe this statement is true for several reasons.",
    "On the other hand, opponents argue that such change brings risks.",
    "For example, recent developments in society support this view.",
    "In conclusion, the advantages appear to outweigh the disadvantages.",
    "Furthermore, education plays a central role in this debate.",
    "However, economic factors must also be taken into account.",
]


def synthetic_essays(count: int, start_band: int = 8, id_prefix: str = "essay") -> list[Essay]:
    """Deterministic essays cycling over topics, sentences and bands 4.0..8.0."""
    essays = []
    for i in range(count):
        half_steps = 8 + (start_band + i * 3) % 9  # bands 4.0 .. 8.0
        text = " ".join(_SENTENCES[(i + j) % len(_SENTENCES)] for j in range(3 + i % 3))
        essays.append(
            Essay(
                id=f"{id_prefix}-{i:03d}",
                prompt_text=_TOPICS[i % len(_TOPICS)],
                essay_text=f"{text} (variant {i})",
                overall=BandScore(half_steps),
            )
        )
    return essays


def write_primary_jsonl(path: Path, essays: list[Essay]) -> Path:
    with open(path, "w", encoding="utf-8") as handle:
        for essay in essays:
            record = {
                "id": essay.id,
                "prompt": essay.prompt_text,
                "essay": essay.essay_text,
                "band": essay.overall.value if essay.overall else None,
            }
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")
    return path


def write_manifest(path: Path, train_ids: list[str], test_ids: list[str]) -> Path:
    manifest = {essay_id: "train" for essay_id in train_ids}
    manifest.update({essay_id: "test" for essay_id in test_ids})
    path.write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    return path


@pytest.fixture
def tiny_corpus(tmp_path: Path) -> dict:
    """Eight train + four test essays on disk with a manifest."""
    essays = synthetic_essays(12)
    train_ids = [e.id for e in essays[:8]]
    test_ids = [e.id for e in essays[8:]]
    primary = write_primary_jsonl(tmp_path / "primary.jsonl", essays)
    manifest = write_manifest(tmp_path / "splits.json", train_ids, test_ids)
    return {
        "essays": essays,
        "train_ids": train_ids,
        "test_ids": test_ids,
        "primary": primary,
        "manifest": manifest,
        "dir": tmp_path,
    }
