"""Checkpoint and training-log persistence.

A checkpoint is a JSON manifest (config, vocab hash, parameter
names/shapes, seed, phase provenance) next to a flat little-endian
float64 binary holding the parameters in manifest order. Manifests carry
no timestamps, so identical runs write byte-identical files.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np

from .errors import CompatibilityError, ValidationError
from .model import ModelConfig, ModelParams

FORMAT = "clmeta-checkpoint-v1"
DTYPE = "<f8"


def save_checkpoint(
    base: str | Path,
    params: ModelParams,
    vocab_sha256: str,
    seed: int,
    phase: str,
    extra_config: dict | None = None,
) -> Path:
    """Write <base>.json and <base>.bin; returns the manifest path."""
    base = Path(base)
    base.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": FORMAT,
        "dtype": DTYPE,
        "model_config": params.config.to_json(),
        "run_config": extra_config or {},
        "vocab_sha256": vocab_sha256,
        "seed": seed,
        "phase": phase,
        "params": [{"name": n, "shape": list(t.shape)} for n, t in params.items()],
    }
    blob = b"".join(t.data.astype(DTYPE).tobytes(order="C") for _, t in params.items())
    with base.with_suffix(".json").open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    base.with_suffix(".bin").write_bytes(blob)
    return base.with_suffix(".json")


def load_checkpoint(
    manifest_path: str | Path, expect_vocab_sha256: str | None = None
) -> tuple[ModelParams, dict]:
    manifest_path = Path(manifest_path)
    with manifest_path.open(encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != FORMAT:
        raise ValidationError(f"unknown checkpoint format {manifest.get('format')!r}")
    if expect_vocab_sha256 is not None and manifest["vocab_sha256"] != expect_vocab_sha256:
        raise CompatibilityError(
            "vocab hash mismatch: checkpoint "
            f"{manifest['vocab_sha256'][:12]}..., corpus {expect_vocab_sha256[:12]}..."
        )
    config = ModelConfig.from_json(manifest["model_config"])
    params = ModelParams.init(config, seed=0)
    names = params.names()
    recorded = [p["name"] for p in manifest["params"]]
    if recorded != names:
        raise CompatibilityError("checkpoint parameter names do not match the config")
    vec = np.frombuffer(manifest_path.with_suffix(".bin").read_bytes(), dtype=DTYPE)
    params.load_flat(vec.astype(np.float64))
    return params, manifest


class JsonlLogger:
    """Appends one JSON object per record; wall-clock values live under a
    separate 'timing' key so records compare equal across reruns."""

    def __init__(self, path: str | Path | None):
        self._path = Path(path) if path is not None else None
        if self._path is not None:
            self._path.parent.mkdir(parents=True, exist_ok=True)
        self.records: list[dict] = []

    def log(self, record: dict, wall_s: float | None = None) -> None:
        entry = dict(record)
        entry["timing"] = {"ts": time.time()}
        if wall_s is not None:
            entry["timing"]["wall_s"] = wall_s
        self.records.append(entry)
        if self._path is not None:
            with self._path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
