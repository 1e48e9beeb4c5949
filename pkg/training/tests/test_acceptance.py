"""Acceptance suite for the training package, one pass line per criterion.

Run with ``pytest tests/test_acceptance.py -v -s``.
"""

from __future__ import annotations

import time

import torch

from aes_training.backbone import BackboneDims, Vocab
from aes_training.classifier import BandClassifier, train_discriminative
from aes_training.configs import AdapterConfig, ClassifierConfig, PreferenceConfig
from aes_training.data import toy_instruction_rows, toy_labeled_essays, toy_preference_pairs
from aes_training.dpo import train_dpo
from aes_training.sft import save_adapters, sft_checkpoint_for_dpo, train_lora_sft

TOY_DIMS = BackboneDims(d_model=32, n_heads=2, n_layers=1, d_ff=64, max_seq_len=128)


def announce(line: str) -> None:
    print(f"\nACCEPTANCE {line}")


class TestToySftConvergence:
    def test_32_rows_3_epochs_four_adapters(self, tmp_path):
        start = time.perf_counter()
        rows = toy_instruction_rows()
        assert len(rows) == 32
        config = AdapterConfig(
            rank=16, alpha=16.0, epochs=3, batch_size=4, grad_accum=1,
            learning_rate=2e-2, scope="per-criterion", max_seq_len=128,
            seed=0, dims=TOY_DIMS,
        )
        artifacts = train_lora_sft(config, rows)
        for tag, artifact in artifacts.items():
            assert artifact.curve.final_loss < artifact.curve.initial_loss, tag
        paths = save_adapters(artifacts, tmp_path / "adapters")
        assert len(paths) == 4
        assert {p.name for p in paths.values()} == {
            "adapter_tr.pt", "adapter_cc.pt", "adapter_lr.pt", "adapter_gra.pt",
        }
        elapsed = time.perf_counter() - start
        assert elapsed < 600.0
        announce(
            f"PASS toy-sft-convergence: 32 rows, 3 epochs, 4 adapters, "
            f"loss fell on every criterion, {elapsed:.1f}s"
        )


class TestToyDpoMargin:
    def test_16_pairs_one_epoch_beta_0p1(self, tmp_path):
        start = time.perf_counter()
        sft_config = AdapterConfig(
            rank=16, alpha=16.0, epochs=3, batch_size=4, grad_accum=1,
            learning_rate=2e-2, scope="single", max_seq_len=128, seed=0, dims=TOY_DIMS,
        )
        checkpoint = sft_checkpoint_for_dpo(
            sft_config, toy_instruction_rows(), tmp_path / "sft_policy.pt"
        )
        pairs = toy_preference_pairs(16)
        assert len(pairs) == 16
        config = PreferenceConfig(
            sft_checkpoint=str(checkpoint), beta=0.1, learning_rate=1e-3,
            epochs=1, holdout_pairs=4, seed=0,
        )
        artifact = train_dpo(config, pairs)
        assert artifact.curve.final_margin > artifact.curve.initial_margin
        elapsed = time.perf_counter() - start
        assert elapsed < 600.0
        announce(
            f"PASS toy-dpo-margin: held-out margin "
            f"{artifact.curve.initial_margin:.4f} -> {artifact.curve.final_margin:.4f} "
            f"(beta=0.1, 1 epoch), {elapsed:.1f}s"
        )


class TestClassifierOverfit:
    def test_8_essays_all_parameters(self):
        start = time.perf_counter()
        essays = toy_labeled_essays(8)
        config = ClassifierConfig(
            mode="all-parameters", hidden_dim=32, batch_size=8, epochs=50,
            learning_rate=3e-3, max_seq_len=64, seed=0,
            dims=BackboneDims(d_model=32, n_heads=2, n_layers=1, d_ff=64, max_seq_len=64),
        )
        artifact = train_discriminative(config, essays)
        reached = next(
            (e for e, acc in zip(artifact.curve.epochs, artifact.curve.accuracies) if acc == 1.0),
            None,
        )
        assert reached is not None and reached <= 50

        vocab = Vocab.build([e.prompt for e in essays] + [e.essay for e in essays])
        model = BandClassifier(len(vocab), config)
        tokens = torch.randint(0, len(vocab), (5, 32))
        mask = torch.zeros((5, 32), dtype=torch.bool)
        assert model(tokens, mask).shape == (5, 19)
        elapsed = time.perf_counter() - start
        announce(
            f"PASS classifier-overfit: train accuracy 1.0 at epoch {reached}, "
            f"logit shape (batch, 19), {elapsed:.1f}s"
        )
