"""Run manifest: a small audit record tying stage outputs to their config."""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

from . import __version__


def config_hash(config_data: dict) -> str:
    canon = json.dumps(config_data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def update_manifest(out_dir: Path, stage: str, config_data: dict, seed: int,
                    files: list[str], extra: dict | None = None) -> Path:
    """Record a completed stage; every referenced path must already exist."""
    for name in files:
        path = out_dir / name
        if not path.exists():
            raise FileNotFoundError(f"manifest refers to missing file: {path}")
    manifest_path = out_dir / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
    else:
        manifest = {"stages": {}}
    manifest["tool_version"] = __version__
    manifest["config_hash"] = config_hash(config_data)
    manifest["seed"] = seed
    entry = {"files": sorted(files), "completed_at": time.strftime(
        "%Y-%m-%dT%H:%M:%SZ", time.gmtime())}
    if extra:
        entry.update(extra)
    manifest["stages"][stage] = entry
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path
