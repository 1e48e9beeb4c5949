"""Training CLI: classifier, sft, dpo, export subcommands."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .classifier import train_discriminative
from .configs import (
    CRITERIA,
    ConfigError,
    load_adapter_config,
    load_classifier_config,
    load_preference_config,
)
from .data import (
    instruction_rows,
    load_labeled_essays,
    toy_instruction_rows,
    toy_labeled_essays,
    toy_preference_pairs,
)
from .dpo import train_dpo
from .export import export_for_serving
from .sft import save_adapters, sft_checkpoint_for_dpo, train_lora_sft

log = logging.getLogger(__name__)


def _essays(args):
    return load_labeled_essays(args.data) if args.data else toy_labeled_essays()


def cmd_classifier(args) -> int:
    config = load_classifier_config(args.config)
    artifact = train_discriminative(config, _essays(args))
    out = Path(args.out)
    artifact.save(out / "classifier.pt")
    artifact.curve.write_csv(out / "classifier_curve.csv")
    print(
        json.dumps(
            {
                "final_loss": artifact.curve.losses[-1],
                "final_accuracy": artifact.curve.accuracies[-1],
                "epochs": len(artifact.curve.epochs),
                "checkpoint": str(out / "classifier.pt"),
            },
            indent=2,
        )
    )
    return 0


def cmd_sft(args) -> int:
    config = load_adapter_config(args.config)
    rows = (
        instruction_rows(load_labeled_essays(args.data)) if args.data else toy_instruction_rows()
    )
    artifacts = train_lora_sft(config, rows)
    paths = save_adapters(artifacts, args.out)
    print(
        json.dumps(
            {
                tag: {
                    "path": str(path),
                    "initial_loss": artifacts[tag].curve.initial_loss,
                    "final_loss": artifacts[tag].curve.final_loss,
                    "trainable_fraction": artifacts[tag].trainable_fraction,
                }
                for tag, path in paths.items()
            },
            indent=2,
        )
    )
    return 0


def cmd_dpo(args) -> int:
    config = load_preference_config(args.config)
    if args.sft_checkpoint:
        config.sft_checkpoint = args.sft_checkpoint
    if not config.sft_checkpoint:
        # bootstrap a toy SFT checkpoint so the command works standalone
        adapter_config = load_adapter_config(args.adapter_config) if args.adapter_config else None
        if adapter_config is None:
            raise ConfigError("dpo needs --sft-checkpoint or --adapter-config to bootstrap one")
        rows = toy_instruction_rows()
        config.sft_checkpoint = str(
            sft_checkpoint_for_dpo(adapter_config, rows, Path(args.out) / "sft_policy.pt")
        )
    pairs = toy_preference_pairs()
    artifact = train_dpo(config, pairs)
    out = Path(args.out)
    artifact.save(out / "dpo_policy.pt")
    artifact.curve.write_csv(out / "dpo_margin_curve.csv")
    print(
        json.dumps(
            {
                "initial_holdout_margin": artifact.curve.initial_margin,
                "final_holdout_margin": artifact.curve.final_margin,
                "steps": len(artifact.curve.steps) - 1,
                "checkpoint": str(out / "dpo_policy.pt"),
            },
            indent=2,
        )
    )
    return 0


def cmd_export(args) -> int:
    adapters: dict[str, str] = {}
    if args.single:
        adapters["ALL"] = args.single
    else:
        for tag in CRITERIA:
            adapters[tag] = str(Path(args.adapters) / f"adapter_{tag.lower()}.pt")
    manifest_path = export_for_serving(adapters, args.out)
    print(json.dumps(json.loads(manifest_path.read_text()), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aes-train", description="AES training pipelines")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classifier", help="discriminative band classifier")
    p.add_argument("--config", required=True)
    p.add_argument("--data", help="labeled-essay JSONL; omits to use the toy set")
    p.add_argument("--out", default="runs/classifier")
    p.set_defaults(func=cmd_classifier)

    p = sub.add_parser("sft", help="criterion-isolated LoRA instruction tuning")
    p.add_argument("--config", required=True)
    p.add_argument("--data", help="labeled-essay JSONL with analytic fields")
    p.add_argument("--out", default="runs/sft")
    p.set_defaults(func=cmd_sft)

    p = sub.add_parser("dpo", help="preference alignment from an SFT checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--sft-checkpoint")
    p.add_argument("--adapter-config", help="bootstrap a toy SFT checkpoint with this config")
    p.add_argument("--out", default="runs/dpo")
    p.set_defaults(func=cmd_dpo)

    p = sub.add_parser("export", help="assemble a serving bundle with a routing manifest")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--adapters", help="directory holding adapter_{tr,cc,lr,gra}.pt")
    group.add_argument("--single", help="one adapter file routed to all criteria")
    p.add_argument("--out", default="runs/bundle")
    p.set_defaults(func=cmd_export)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
