"""Discriminative fine-tuning: encoder summary state through a two-layer
classification head over the 19 band classes."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import nn

from .backbone import CLS, SEP, TinyEncoder, Vocab, pad_batch
from .configs import ClassifierConfig, config_echo
from .data import LabeledEssay

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


class BandClassifier(nn.Module):
    """Encoder + tanh bottleneck + linear logits over band classes."""

    def __init__(self, vocab_size: int, config: ClassifierConfig):
        super().__init__()
        self.encoder = TinyEncoder(vocab_size, config.dims)
        self.head_hidden = nn.Linear(config.dims.d_model, config.hidden_dim)
        self.head_out = nn.Linear(config.hidden_dim, config.num_classes)

    def forward(self, tokens: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        summary = self.encoder.summary_state(tokens, pad_mask)
        z = torch.tanh(self.head_hidden(summary))
        return self.head_out(z)


def encode_classifier_input(vocab: Vocab, essay: LabeledEssay, max_seq_len: int) -> list[int]:
    """[CLS] prompt [SEP] essay [SEP], truncated to the window."""
    ids = (
        [vocab.stoi[CLS]]
        + vocab.encode(essay.prompt)
        + [vocab.stoi[SEP]]
        + vocab.encode(essay.essay)
        + [vocab.stoi[SEP]]
    )
    return ids[:max_seq_len]


@dataclass
class TrainingCurve:
    epochs: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    accuracies: list[float] = field(default_factory=list)

    def record(self, epoch: int, loss: float, accuracy: float) -> None:
        self.epochs.append(epoch)
        self.losses.append(loss)
        self.accuracies.append(accuracy)

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["epoch,loss,accuracy"]
        lines += [
            f"{e},{l:.6f},{a:.6f}"
            for e, l, a in zip(self.epochs, self.losses, self.accuracies)
        ]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path


@dataclass
class ClassifierArtifact:
    model: BandClassifier
    vocab: Vocab
    config: ClassifierConfig
    curve: TrainingCurve

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "kind": "band-classifier",
                "state_dict": self.model.state_dict(),
                "vocab": self.vocab.to_dict(),
                "config": config_echo(self.config),
            },
            path,
        )
        return path


def train_discriminative(
    config: ClassifierConfig, essays: list[LabeledEssay]
) -> ClassifierArtifact:
    """Fit the band classifier; classifier-only mode freezes the encoder."""
    torch.manual_seed(config.seed)
    torch.set_num_threads(1)
    vocab = Vocab.build([e.prompt for e in essays] + [e.essay for e in essays])
    model = BandClassifier(len(vocab), config)
    if config.mode == "classifier-only":
        for param in model.encoder.parameters():
            param.requires_grad_(False)
    trainable = [p for p in model.parameters() if p.requires_grad]

    rows = [encode_classifier_input(vocab, e, config.max_seq_len) for e in essays]
    labels = torch.tensor([e.band_class for e in essays], dtype=torch.long)
    optimizer = torch.optim.AdamW(trainable, lr=config.learning_rate)
    loss_fn = nn.CrossEntropyLoss()
    curve = TrainingCurve()

    for epoch in range(1, config.epochs + 1):
        model.train()
        epoch_loss = 0.0
        correct = 0
        order = torch.randperm(len(rows))
        for start in range(0, len(rows), config.batch_size):
            idx = order[start : start + config.batch_size].tolist()
            tokens, pad_mask = pad_batch([rows[i] for i in idx], vocab.pad_id)
            logits = model(tokens, pad_mask)
            loss = loss_fn(logits, labels[idx])
            if not math.isfinite(loss.item()):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch} (lr={config.learning_rate})"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * len(idx)
            correct += int((logits.argmax(dim=-1) == labels[idx]).sum())
        if config.lr_decay != 1.0:
            for group in optimizer.param_groups:
                group["lr"] = max(group["lr"] * config.lr_decay, config.min_lr)
        curve.record(epoch, epoch_loss / len(rows), correct / len(rows))
        log.debug("epoch %d loss %.4f acc %.3f", epoch, curve.losses[-1], curve.accuracies[-1])

    return ClassifierArtifact(model=model, vocab=vocab, config=config, curve=curve)
