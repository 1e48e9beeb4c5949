"""Tiny in-tree transformer backbones sized for CPU training in seconds.

Attention blocks use separate q/k/v/o projection linears (plus the two
feed-forward linears) so adapter targeting can address each projection by
name, the same way it would on a full-scale backbone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

PAD, CLS, SEP, EOS, UNK = "[PAD]", "[CLS]", "[SEP]", "[EOS]", "[UNK]"
SPECIALS = (PAD, CLS, SEP, EOS, UNK)


class Vocab:
    """Word-level vocabulary with deterministic ordering."""

    def __init__(self, tokens: list[str]):
        self.itos = list(SPECIALS) + sorted(set(tokens) - set(SPECIALS))
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    @property
    def pad_id(self) -> int:
        return self.stoi[PAD]

    @property
    def eos_id(self) -> int:
        return self.stoi[EOS]

    @classmethod
    def build(cls, texts: list[str]) -> "Vocab":
        tokens: list[str] = []
        for text in texts:
            tokens.extend(tokenize(text))
        return cls(tokens)

    def encode(self, text: str) -> list[int]:
        unk = self.stoi[UNK]
        return [self.stoi.get(tok, unk) for tok in tokenize(text)]

    def to_dict(self) -> dict:
        return {"itos": self.itos}

    @classmethod
    def from_dict(cls, data: dict) -> "Vocab":
        vocab = cls.__new__(cls)
        vocab.itos = list(data["itos"])
        vocab.stoi = {tok: i for i, tok in enumerate(vocab.itos)}
        return vocab


def tokenize(text: str) -> list[str]:
    return text.lower().split()


@dataclass
class BackboneDims:
    d_model: int = 64
    n_heads: int = 2
    n_layers: int = 2
    d_ff: int = 128
    max_seq_len: int = 256


class Block(nn.Module):
    """Pre-LN transformer block with individually named projections."""

    def __init__(self, dims: BackboneDims):
        super().__init__()
        self.n_heads = dims.n_heads
        self.head_dim = dims.d_model // dims.n_heads
        self.q_proj = nn.Linear(dims.d_model, dims.d_model)
        self.k_proj = nn.Linear(dims.d_model, dims.d_model)
        self.v_proj = nn.Linear(dims.d_model, dims.d_model)
        self.o_proj = nn.Linear(dims.d_model, dims.d_model)
        self.ff_in = nn.Linear(dims.d_model, dims.d_ff)
        self.ff_out = nn.Linear(dims.d_ff, dims.d_model)
        self.ln1 = nn.LayerNorm(dims.d_model)
        self.ln2 = nn.LayerNorm(dims.d_model)

    def forward(
        self,
        x: torch.Tensor,
        causal: bool,
        pad_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        batch, seq, _ = x.shape
        h = self.ln1(x)

        def split(t: torch.Tensor) -> torch.Tensor:
            return t.view(batch, seq, self.n_heads, self.head_dim).transpose(1, 2)

        q, k, v = split(self.q_proj(h)), split(self.k_proj(h)), split(self.v_proj(h))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if causal:
            mask = torch.triu(torch.ones(seq, seq, dtype=torch.bool, device=x.device), 1)
            scores = scores.masked_fill(mask, float("-inf"))
        if pad_mask is not None:  # True where padded
            scores = scores.masked_fill(pad_mask[:, None, None, :], float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        context = (attn @ v).transpose(1, 2).reshape(batch, seq, -1)
        x = x + self.o_proj(context)
        x = x + self.ff_out(torch.tanh(self.ff_in(self.ln2(x))))
        return x


class TinyTransformer(nn.Module):
    """Shared trunk: token + positional embeddings over N blocks."""

    def __init__(self, vocab_size: int, dims: BackboneDims):
        super().__init__()
        self.dims = dims
        self.tok_emb = nn.Embedding(vocab_size, dims.d_model)
        self.pos_emb = nn.Embedding(dims.max_seq_len, dims.d_model)
        self.blocks = nn.ModuleList(Block(dims) for _ in range(dims.n_layers))
        self.ln_out = nn.LayerNorm(dims.d_model)

    def trunk(
        self, tokens: torch.Tensor, causal: bool, pad_mask: torch.Tensor | None
    ) -> torch.Tensor:
        seq = tokens.shape[1]
        if seq > self.dims.max_seq_len:
            raise ValueError(f"sequence length {seq} exceeds {self.dims.max_seq_len}")
        positions = torch.arange(seq, device=tokens.device)
        x = self.tok_emb(tokens) + self.pos_emb(positions)[None, :, :]
        for block in self.blocks:
            x = block(x, causal=causal, pad_mask=pad_mask)
        return self.ln_out(x)


class TinyCausalLM(TinyTransformer):
    """Decoder-only language model for instruction tuning and alignment."""

    backbone_id = "tiny-causal-lm"

    def __init__(self, vocab_size: int, dims: BackboneDims):
        super().__init__(vocab_size, dims)
        self.lm_head = nn.Linear(dims.d_model, vocab_size, bias=False)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        return self.lm_head(self.trunk(tokens, causal=True, pad_mask=None))

    def sequence_log_prob(
        self, tokens: torch.Tensor, loss_mask: torch.Tensor
    ) -> torch.Tensor:
        """Sum of next-token log-probs where loss_mask marks target positions.

        tokens: (B, T); loss_mask: (B, T) with 1.0 on positions whose token is
        part of the target continuation.
        """
        logits = self.forward(tokens[:, :-1])
        log_probs = torch.log_softmax(logits, dim=-1)
        picked = log_probs.gather(-1, tokens[:, 1:, None]).squeeze(-1)
        return (picked * loss_mask[:, 1:]).sum(dim=-1)


class TinyEncoder(TinyTransformer):
    """Bidirectional encoder; the first position serves as the summary token."""

    backbone_id = "tiny-encoder"

    def forward(self, tokens: torch.Tensor, pad_mask: torch.Tensor | None = None) -> torch.Tensor:
        return self.trunk(tokens, causal=False, pad_mask=pad_mask)

    def summary_state(self, tokens: torch.Tensor, pad_mask: torch.Tensor | None = None) -> torch.Tensor:
        return self.forward(tokens, pad_mask)[:, 0, :]


def pad_batch(rows: list[list[int]], pad_id: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-pad to a rectangle; returns (tokens, pad mask with True on pads)."""
    width = max(len(row) for row in rows)
    tokens = torch.full((len(rows), width), pad_id, dtype=torch.long)
    mask = torch.ones((len(rows), width), dtype=torch.bool)
    for i, row in enumerate(rows):
        tokens[i, : len(row)] = torch.tensor(row, dtype=torch.long)
        mask[i, : len(row)] = False
    return tokens, mask
