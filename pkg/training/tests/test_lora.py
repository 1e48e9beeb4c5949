"""Low-rank adapter tests."""

from __future__ import annotations

import pytest
import torch
from torch import nn

from aes_training.backbone import BackboneDims, TinyCausalLM
from aes_training.lora import (
    LoRALinear,
    apply_lora,
    load_lora_state_dict,
    lora_parameters,
    lora_state_dict,
    trainable_fraction,
)

DIMS = BackboneDims(d_model=16, n_heads=2, n_layers=2, d_ff=32, max_seq_len=32)


def make_model() -> TinyCausalLM:
    torch.manual_seed(0)
    model = TinyCausalLM(11, DIMS)
    apply_lora(model, ("Q", "K", "V", "O", "FFN"), rank=4, alpha=8)
    return model


class TestLoRALinear:
    def test_identity_at_init(self):
        torch.manual_seed(0)
        base = nn.Linear(8, 8)
        wrapped = LoRALinear(base, rank=2, alpha=4)
        x = torch.randn(3, 8)
        assert torch.allclose(wrapped(x), base(x), atol=1e-6)

    def test_base_frozen_adapter_trainable(self):
        wrapped = LoRALinear(nn.Linear(8, 8), rank=2, alpha=4)
        assert not wrapped.base.weight.requires_grad
        assert wrapped.lora_a.requires_grad and wrapped.lora_b.requires_grad

    def test_rank_validated(self):
        with pytest.raises(ValueError):
            LoRALinear(nn.Linear(4, 4), rank=0, alpha=1)

    def test_scaling(self):
        wrapped = LoRALinear(nn.Linear(8, 8), rank=4, alpha=16)
        assert wrapped.scaling == 4.0


class TestApplyLora:
    def test_targets_wrapped(self):
        model = make_model()
        wrapped = [n for n, m in model.named_modules() if isinstance(m, LoRALinear)]
        # 2 layers x (q, k, v, o, ff_in, ff_out)
        assert len(wrapped) == 12
        assert any("q_proj" in n for n in wrapped)
        assert any("ff_out" in n for n in wrapped)

    def test_head_and_embeddings_frozen(self):
        model = make_model()
        assert not model.lm_head.weight.requires_grad
        assert not model.tok_emb.weight.requires_grad

    def test_trainable_fraction_strictly_between_zero_and_one(self):
        model = make_model()
        fraction = trainable_fraction(model)
        assert 0.0 < fraction < 1.0

    def test_subset_targets(self):
        torch.manual_seed(0)
        model = TinyCausalLM(11, DIMS)
        apply_lora(model, ("Q",), rank=2, alpha=2)
        wrapped = [n for n, m in model.named_modules() if isinstance(m, LoRALinear)]
        assert len(wrapped) == 2  # one q_proj per layer
        assert all("q_proj" in n for n in wrapped)


class TestStateDict:
    def test_round_trip_reproduces_outputs(self):
        model = make_model()
        for param in lora_parameters(model):
            param.data.normal_(0.0, 0.1)
        tokens = torch.randint(0, 11, (2, 9))
        model.eval()
        with torch.no_grad():
            want = model(tokens)
        state = lora_state_dict(model)

        clone = make_model()
        load_lora_state_dict(clone, state)
        clone.eval()
        with torch.no_grad():
            got = clone(tokens)
        assert torch.allclose(got, want, atol=1e-6)

    def test_unknown_module_rejected(self):
        model = make_model()
        with pytest.raises(KeyError):
            load_lora_state_dict(model, {"nope.lora_a": torch.zeros(4, 16)})
