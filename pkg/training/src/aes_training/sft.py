"""Supervised instruction tuning with low-rank adapters.

Per-criterion scope trains four independent adapters, one per scoring
criterion, each on its criterion-filtered rows; single scope trains one
adapter on everything. Only the adapter matrices receive gradients.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .backbone import BackboneDims, TinyCausalLM, Vocab, pad_batch
from .configs import CRITERIA, AdapterConfig, config_echo
from .data import InstructionRow, render_instruction_input
from .lora import apply_lora, lora_parameters, lora_state_dict, trainable_fraction

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class SftCurve:
    epochs: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)

    def record(self, epoch: int, loss: float) -> None:
        self.epochs.append(epoch)
        self.losses.append(loss)

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["epoch,loss"] + [f"{e},{l:.6f}" for e, l in zip(self.epochs, self.losses)]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path


@dataclass
class AdapterArtifact:
    criterion: str  # criterion tag, or "ALL" for single scope
    state: dict[str, torch.Tensor]
    config: AdapterConfig
    vocab: Vocab
    curve: SftCurve
    trainable_fraction: float

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "kind": "lora-adapter",
                "criterion": self.criterion,
                "lora": self.state,
                "config": config_echo(self.config),
                "vocab": self.vocab.to_dict(),
                "trainable_fraction": self.trainable_fraction,
            },
            path,
        )
        return path


def encode_example(
    vocab: Vocab, row: InstructionRow, max_seq_len: int
) -> tuple[list[int], list[float]]:
    """Token ids plus a loss mask that covers only the target continuation."""
    prompt_ids = vocab.encode(render_instruction_input(row))
    target_ids = vocab.encode(row.target_json) + [vocab.eos_id]
    ids = (prompt_ids + target_ids)[:max_seq_len]
    mask = ([0.0] * len(prompt_ids) + [1.0] * len(target_ids))[:max_seq_len]
    return ids, mask


def build_vocab(rows: list[InstructionRow]) -> Vocab:
    texts = []
    for row in rows:
        texts.append(render_instruction_input(row))
        texts.append(row.target_json)
    return Vocab.build(texts)


def _mean_target_nll(
    model: TinyCausalLM, tokens: torch.Tensor, mask: torch.Tensor
) -> torch.Tensor:
    log_probs = model.sequence_log_prob(tokens, mask)
    counts = mask[:, 1:].sum(dim=-1).clamp(min=1.0)
    return (-log_probs / counts).mean()


def _build_model(config: AdapterConfig, vocab: Vocab) -> TinyCausalLM:
    # Seeding immediately before construction pins the frozen base weights:
    # every adapter shares one backbone, and reloading an artifact rebuilds
    # the identical base from (backbone id, dims, vocab, seed).
    torch.manual_seed(config.seed)
    model = TinyCausalLM(len(vocab), config.dims)
    apply_lora(model, config.targets, config.rank, config.alpha)
    return model


def _train_one_adapter(
    config: AdapterConfig,
    rows: list[InstructionRow],
    vocab: Vocab,
    criterion: str,
) -> AdapterArtifact:
    model = _build_model(config, vocab)
    fraction = trainable_fraction(model)
    optimizer = torch.optim.AdamW(list(lora_parameters(model)), lr=config.learning_rate)
    encoded = [encode_example(vocab, row, config.max_seq_len) for row in rows]
    curve = SftCurve()

    for epoch in range(1, config.epochs + 1):
        model.train()
        order = torch.randperm(len(encoded))
        total = 0.0
        optimizer.zero_grad()
        for step, start in enumerate(range(0, len(encoded), config.batch_size)):
            idx = order[start : start + config.batch_size].tolist()
            tokens, _ = pad_batch([encoded[i][0] for i in idx], vocab.pad_id)
            mask, _ = pad_batch(
                [[int(m) for m in encoded[i][1]] for i in idx], 0
            )
            loss = _mean_target_nll(model, tokens, mask.float())
            if not math.isfinite(loss.item()):
                raise TrainingDiverged(f"non-finite loss in epoch {epoch}")
            (loss / config.grad_accum).backward()
            if (step + 1) % config.grad_accum == 0:
                optimizer.step()
                optimizer.zero_grad()
            total += loss.item() * len(idx)
        optimizer.step()
        optimizer.zero_grad()
        curve.record(epoch, total / len(encoded))
        log.debug("[%s] epoch %d loss %.4f", criterion, epoch, curve.losses[-1])

    return AdapterArtifact(
        criterion=criterion,
        state=lora_state_dict(model),
        config=config,
        vocab=vocab,
        curve=curve,
        trainable_fraction=fraction,
    )


def train_lora_sft(
    config: AdapterConfig, rows: list[InstructionRow]
) -> dict[str, AdapterArtifact]:
    """Train adapter(s) per the configured scope; keys are criterion tags
    (or "ALL" for single scope)."""
    torch.manual_seed(config.seed)
    torch.set_num_threads(1)
    vocab = build_vocab(rows)
    if config.scope == "single":
        return {"ALL": _train_one_adapter(config, rows, vocab, "ALL")}
    artifacts: dict[str, AdapterArtifact] = {}
    for tag in CRITERIA:
        subset = [row for row in rows if row.criterion == tag]
        if not subset:
            raise ValueError(f"no instruction rows for criterion {tag}")
        artifacts[tag] = _train_one_adapter(config, subset, vocab, tag)
    return artifacts


def save_adapters(
    artifacts: dict[str, AdapterArtifact], directory: str | Path
) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for tag, artifact in artifacts.items():
        path = directory / f"adapter_{tag.lower()}.pt"
        artifact.save(path)
        artifact.curve.write_csv(directory / f"curve_{tag.lower()}.csv")
        paths[tag] = path
    return paths


def sft_checkpoint_for_dpo(
    config: AdapterConfig, rows: list[InstructionRow], path: str | Path
) -> Path:
    """Train a single-scope adapter over all rows and save it as the policy
    initialization for preference alignment."""
    single = AdapterConfig(
        backbone=config.backbone,
        rank=config.rank,
        alpha=config.alpha,
        targets=config.targets,
        epochs=config.epochs,
        batch_size=config.batch_size,
        grad_accum=config.grad_accum,
        learning_rate=config.learning_rate,
        scope="single",
        max_seq_len=config.max_seq_len,
        seed=config.seed,
        dims=config.dims,
    )
    artifact = train_lora_sft(single, rows)["ALL"]
    return artifact.save(path)


def load_adapter_model(path: str | Path) -> tuple[TinyCausalLM, Vocab, AdapterConfig]:
    """Rebuild a LoRA-wrapped model from a saved adapter artifact."""
    from .lora import load_lora_state_dict

    payload = torch.load(path, weights_only=False)
    if payload.get("kind") != "lora-adapter":
        raise ValueError(f"{path} is not an adapter artifact")
    raw = dict(payload["config"])
    dims = BackboneDims(**raw.pop("dims"))
    raw["targets"] = tuple(raw["targets"])
    config = AdapterConfig(dims=dims, **raw)
    vocab = Vocab.from_dict(payload["vocab"])
    model = _build_model(config, vocab)
    load_lora_state_dict(model, payload["lora"])
    return model, vocab, config
