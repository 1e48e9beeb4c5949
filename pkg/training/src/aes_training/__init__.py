"""Training pipelines for the IELTS AES harness: discriminative classifier
fine-tuning, per-criterion LoRA instruction tuning, and DPO preference
alignment, exporting bundles servable behind an OpenAI-compatible layer."""

from .classifier import BandClassifier, train_discriminative
from .configs import AdapterConfig, ClassifierConfig, PreferenceConfig
from .data import (
    instruction_rows,
    load_labeled_essays,
    toy_instruction_rows,
    toy_labeled_essays,
    toy_preference_pairs,
)
from .dpo import preference_margin, train_dpo
from .export import export_for_serving, load_manifest
from .lora import LoRALinear, apply_lora, trainable_fraction
from .sft import train_lora_sft

__version__ = "0.1.0"

__all__ = [
    "AdapterConfig",
    "ClassifierConfig",
    "PreferenceConfig",
    "BandClassifier",
    "train_discriminative",
    "train_lora_sft",
    "train_dpo",
    "preference_margin",
    "export_for_serving",
    "load_manifest",
    "LoRALinear",
    "apply_lora",
    "trainable_fraction",
    "instruction_rows",
    "load_labeled_essays",
    "toy_labeled_essays",
    "toy_instruction_rows",
    "toy_preference_pairs",
    "__version__",
]
