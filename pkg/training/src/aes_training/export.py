"""Serving bundles: a directory of adapter weight files plus a manifest that
maps each scoring criterion to the adapter answering for it, so a serving
layer can route criterion-specific requests."""

from __future__ import annotations

import json
import shutil
from pathlib import Path

import torch

from .configs import CRITERIA

MANIFEST_NAME = "manifest.json"


def export_for_serving(
    adapter_paths: dict[str, str | Path], bundle_dir: str | Path
) -> Path:
    """Assemble a bundle from adapter files keyed by criterion tag (or "ALL").

    A single-adapter input routes every criterion to that adapter. Raises
    OSError naming the criterion whose file is missing.
    """
    bundle_dir = Path(bundle_dir)
    bundle_dir.mkdir(parents=True, exist_ok=True)

    routing: dict[str, str] = {}
    copied: dict[str, str] = {}
    base_model = None
    lora_meta: dict | None = None

    for tag, source in adapter_paths.items():
        source = Path(source)
        if not source.exists():
            raise OSError(f"adapter file for {tag} not found: {source}")
        payload = torch.load(source, weights_only=False)
        config = payload.get("config", {})
        base_model = config.get("backbone", base_model)
        lora_meta = {"rank": config.get("rank"), "alpha": config.get("alpha")}
        target_name = source.name
        if str(source.parent.resolve()) != str(bundle_dir.resolve()):
            shutil.copy2(source, bundle_dir / target_name)
        copied[tag] = target_name

    if set(adapter_paths) == {"ALL"}:
        routing = {tag: copied["ALL"] for tag in CRITERIA}
    else:
        for tag in adapter_paths:
            routing[tag] = copied[tag]

    manifest = {
        "kind": "adapter-bundle",
        "base_model": base_model,
        "lora": lora_meta,
        "adapters": routing,
    }
    manifest_path = bundle_dir / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest_path


def load_manifest(bundle_dir: str | Path) -> dict:
    return json.loads((Path(bundle_dir) / MANIFEST_NAME).read_text(encoding="utf-8"))
