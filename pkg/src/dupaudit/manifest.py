"""Run manifests: which inputs (by content hash) produced which outputs.

Every CLI subcommand writes ``<output>.manifest.json`` next to its primary
output so queues, annotations, and decisions spanning multiple human
sessions can refuse mismatched inputs.
"""

from __future__ import annotations

import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path

from . import __version__


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def write_manifest(
    output_path: str | Path,
    subcommand: str,
    inputs: dict[str, str | Path],
    parameters: dict,
    started: str,
) -> Path:
    manifest = {
        "tool": "dupaudit",
        "version": __version__,
        "subcommand": subcommand,
        "inputs": {
            name: {"path": str(p), "sha256": sha256_file(p)} for name, p in sorted(inputs.items())
        },
        "parameters": parameters,
        "started": started,
        "finished": utc_now(),
    }
    path = Path(str(output_path) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
