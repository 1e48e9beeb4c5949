"""Training configuration types and JSON loading."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .backbone import BackboneDims

NUM_BAND_CLASSES = 19

CRITERIA = ("TR", "CC", "LR", "GRA")


class ConfigError(ValueError):
    pass


@dataclass
class ClassifierConfig:
    """Discriminative fine-tuning: encoder + two-layer classification head."""

    backbone: str = "tiny-encoder"
    mode: str = "classifier-only"  # or all-parameters
    hidden_dim: int = 64
    num_classes: int = NUM_BAND_CLASSES
    batch_size: int = 8
    epochs: int = 20
    learning_rate: float = 2e-4
    lr_decay: float = 1.0
    min_lr: float = 1e-6
    max_seq_len: int = 128
    seed: int = 0
    dims: BackboneDims = field(default_factory=BackboneDims)

    def __post_init__(self) -> None:
        if self.num_classes != NUM_BAND_CLASSES:
            raise ConfigError(
                f"classifier needs {NUM_BAND_CLASSES} band classes, got {self.num_classes}"
            )
        if self.mode not in ("classifier-only", "all-parameters"):
            raise ConfigError(f"unknown training mode {self.mode!r}")


@dataclass
class AdapterConfig:
    """Criterion-isolated instruction tuning via low-rank adapters."""

    backbone: str = "tiny-causal-lm"
    rank: int = 16
    alpha: float = 16.0
    targets: tuple[str, ...] = ("Q", "K", "V", "O", "FFN")
    epochs: int = 3
    batch_size: int = 2
    grad_accum: int = 4
    learning_rate: float = 2e-4
    quantize_4bit: bool = False
    scope: str = "per-criterion"  # or single
    max_seq_len: int = 256
    seed: int = 0
    dims: BackboneDims = field(default_factory=BackboneDims)

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ConfigError("LoRA rank must be >= 1")
        if self.scope not in ("per-criterion", "single"):
            raise ConfigError(f"unknown adapter scope {self.scope!r}")
        unknown = set(self.targets) - {"Q", "K", "V", "O", "FFN"}
        if unknown:
            raise ConfigError(f"unknown adapter targets {sorted(unknown)}")


@dataclass
class PreferenceConfig:
    """Preference alignment on top of a supervised checkpoint."""

    sft_checkpoint: str = ""
    beta: float = 0.1
    learning_rate: float = 1e-5
    epochs: int = 1
    holdout_pairs: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.beta <= 0:
            raise ConfigError("DPO beta must be > 0")


def _dims_from(raw: dict) -> BackboneDims:
    spec = raw.pop("dims", {}) or {}
    return BackboneDims(
        d_model=int(spec.get("d_model", 64)),
        n_heads=int(spec.get("n_heads", 2)),
        n_layers=int(spec.get("n_layers", 2)),
        d_ff=int(spec.get("d_ff", 128)),
        max_seq_len=int(spec.get("max_seq_len", 256)),
    )


def load_classifier_config(path: str | Path) -> ClassifierConfig:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    dims = _dims_from(raw)
    if "targets" in raw:
        raise ConfigError("targets belong to adapter configs")
    return ClassifierConfig(dims=dims, **{k: v for k, v in raw.items() if k != "notes"})


def load_adapter_config(path: str | Path) -> AdapterConfig:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    dims = _dims_from(raw)
    if "targets" in raw:
        raw["targets"] = tuple(raw["targets"])
    return AdapterConfig(dims=dims, **{k: v for k, v in raw.items() if k != "notes"})


def load_preference_config(path: str | Path) -> PreferenceConfig:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    raw.pop("dims", None)
    return PreferenceConfig(**{k: v for k, v in raw.items() if k != "notes"})


def config_echo(config) -> dict:
    """Serializable echo of a config, stored inside produced artifacts."""
    data = asdict(config)
    if "targets" in data:
        data["targets"] = list(data["targets"])
    return data
