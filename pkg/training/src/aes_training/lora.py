"""Low-rank adaptation: frozen base weights plus a trainable rank-r update.

Each adapted linear computes ``x W^T + (alpha / r) x A^T B^T`` with W frozen,
A initialized small and B at zero so the adapter starts as the identity
update.
"""

from __future__ import annotations

import torch
from torch import nn

# How the conventional projection-set names map onto our module names.
TARGET_MODULES = {
    "Q": ("q_proj",),
    "K": ("k_proj",),
    "V": ("v_proj",),
    "O": ("o_proj",),
    "FFN": ("ff_in", "ff_out"),
}


class LoRALinear(nn.Module):
    def __init__(self, base: nn.Linear, rank: int, alpha: float):
        super().__init__()
        if rank < 1:
            raise ValueError("LoRA rank must be >= 1")
        self.base = base
        for param in self.base.parameters():
            param.requires_grad_(False)
        self.rank = rank
        self.alpha = alpha
        self.scaling = alpha / rank
        self.lora_a = nn.Parameter(torch.randn(rank, base.in_features) * 0.02)
        self.lora_b = nn.Parameter(torch.zeros(base.out_features, rank))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.scaling * (x @ self.lora_a.T @ self.lora_b.T)


def apply_lora(model: nn.Module, targets: tuple[str, ...], rank: int, alpha: float) -> nn.Module:
    """Replace every targeted linear with a LoRA-wrapped one and freeze the rest."""
    suffixes = tuple(
        suffix for name in targets for suffix in TARGET_MODULES[name]
    )
    for param in model.parameters():
        param.requires_grad_(False)
    for module in model.modules():
        for child_name, child in list(module.named_children()):
            if child_name in suffixes and isinstance(child, nn.Linear):
                setattr(module, child_name, LoRALinear(child, rank, alpha))
    return model


def lora_parameters(model: nn.Module):
    for module in model.modules():
        if isinstance(module, LoRALinear):
            yield module.lora_a
            yield module.lora_b


def trainable_fraction(model: nn.Module) -> float:
    trainable = sum(p.numel() for p in model.parameters() if p.requires_grad)
    total = sum(p.numel() for p in model.parameters())
    return trainable / total if total else 0.0


def lora_state_dict(model: nn.Module) -> dict[str, torch.Tensor]:
    state = {}
    for name, module in model.named_modules():
        if isinstance(module, LoRALinear):
            state[f"{name}.lora_a"] = module.lora_a.detach().clone()
            state[f"{name}.lora_b"] = module.lora_b.detach().clone()
    return state


def load_lora_state_dict(model: nn.Module, state: dict[str, torch.Tensor]) -> None:
    modules = {name: module for name, module in model.named_modules() if isinstance(module, LoRALinear)}
    for key, tensor in state.items():
        name, _, which = key.rpartition(".")
        if name not in modules:
            raise KeyError(f"no LoRA module named {name!r}")
        getattr(modules[name], which).data.copy_(tensor)
