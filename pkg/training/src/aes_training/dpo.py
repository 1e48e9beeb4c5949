"""Direct preference optimization over a supervised checkpoint.

The policy starts from the SFT adapter and trains only its adapter matrices;
a frozen copy serves as the reference. The loss pushes the policy's
preferred-vs-dispreferred log-likelihood gap above the reference's, scaled
by beta.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch
import torch.nn.functional as F

from .backbone import TinyCausalLM, Vocab, pad_batch
from .configs import PreferenceConfig
from .data import PreferencePair
from .lora import lora_parameters
from .sft import load_adapter_model

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class MarginCurve:
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    holdout_margins: list[float] = field(default_factory=list)

    def record(self, step: int, loss: float, margin: float) -> None:
        self.steps.append(step)
        self.losses.append(loss)
        self.holdout_margins.append(margin)

    @property
    def initial_margin(self) -> float:
        return self.holdout_margins[0]

    @property
    def final_margin(self) -> float:
        return self.holdout_margins[-1]

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["step,loss,holdout_margin"]
        lines += [
            f"{s},{l:.6f},{m:.6f}"
            for s, l, m in zip(self.steps, self.losses, self.holdout_margins)
        ]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path


def _encode_pair_side(
    vocab: Vocab, pair: PreferencePair, response: str, max_seq_len: int
) -> tuple[list[int], list[float]]:
    prompt_ids = vocab.encode(f"{pair.prompt}\nEssay: {pair.essay}\nAnswer:")
    response_ids = vocab.encode(response) + [vocab.eos_id]
    ids = (prompt_ids + response_ids)[:max_seq_len]
    mask = ([0.0] * len(prompt_ids) + [1.0] * len(response_ids))[:max_seq_len]
    return ids, mask


def _pair_log_probs(
    model: TinyCausalLM, vocab: Vocab, pairs: list[PreferencePair], max_seq_len: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """(sum log p(preferred), sum log p(dispreferred)) per pair."""
    rows, masks = [], []
    for pair in pairs:
        for response in (pair.preferred, pair.dispreferred):
            ids, mask = _encode_pair_side(vocab, pair, response, max_seq_len)
            rows.append(ids)
            masks.append([int(m) for m in mask])
    tokens, _ = pad_batch(rows, vocab.pad_id)
    mask_tensor, _ = pad_batch(masks, 0)
    log_probs = model.sequence_log_prob(tokens, mask_tensor.float())
    return log_probs[0::2], log_probs[1::2]


def preference_margin(
    model: TinyCausalLM, vocab: Vocab, pairs: list[PreferencePair], max_seq_len: int
) -> float:
    """Mean policy log-likelihood gap log p(preferred) - log p(dispreferred)."""
    with torch.no_grad():
        preferred, dispreferred = _pair_log_probs(model, vocab, pairs, max_seq_len)
    return float((preferred - dispreferred).mean())


@dataclass
class DpoArtifact:
    model: TinyCausalLM
    vocab: Vocab
    config: PreferenceConfig
    curve: MarginCurve

    def save(self, path: str | Path) -> Path:
        from .configs import config_echo
        from .lora import lora_state_dict

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "kind": "dpo-aligned-adapter",
                "lora": lora_state_dict(self.model),
                "config": config_echo(self.config),
                "vocab": self.vocab.to_dict(),
            },
            path,
        )
        return path


def train_dpo(config: PreferenceConfig, pairs: list[PreferencePair]) -> DpoArtifact:
    """Align the SFT policy on preference pairs; the margin curve tracks the
    held-out preferred-minus-dispreferred log-likelihood gap."""
    if not config.sft_checkpoint:
        raise ValueError("preference config needs an SFT checkpoint path")
    torch.set_num_threads(1)
    policy, vocab, adapter_config = load_adapter_model(config.sft_checkpoint)
    reference = copy.deepcopy(policy)
    for param in reference.parameters():
        param.requires_grad_(False)
    reference.eval()

    holdout = pairs[: config.holdout_pairs]
    train_pairs = pairs[config.holdout_pairs :]
    if not train_pairs:
        raise ValueError("no training pairs left after the holdout split")

    torch.manual_seed(config.seed)
    optimizer = torch.optim.AdamW(list(lora_parameters(policy)), lr=config.learning_rate)
    max_seq_len = adapter_config.max_seq_len
    curve = MarginCurve()
    curve.record(0, 0.0, preference_margin(policy, vocab, holdout, max_seq_len))

    step = 0
    batch_size = 4
    for _ in range(config.epochs):
        for start in range(0, len(train_pairs), batch_size):
            batch = train_pairs[start : start + batch_size]
            policy_pref, policy_dis = _pair_log_probs(policy, vocab, batch, max_seq_len)
            with torch.no_grad():
                ref_pref, ref_dis = _pair_log_probs(reference, vocab, batch, max_seq_len)
            advantage = (policy_pref - policy_dis) - (ref_pref - ref_dis)
            loss = -F.logsigmoid(config.beta * advantage).mean()
            if not math.isfinite(loss.item()):
                raise TrainingDiverged(f"non-finite loss at step {step}")
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            step += 1
            curve.record(
                step, loss.item(), preference_margin(policy, vocab, holdout, max_seq_len)
            )
            log.debug("step %d loss %.4f margin %.4f", step, loss.item(), curve.final_margin)

    return DpoArtifact(model=policy, vocab=vocab, config=config, curve=curve)
