"""Model checkpoints: ``manifest.json`` plus raw little-endian float64 ``weights.bin``."""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from dticu.errors import CheckpointError
from dticu.model import DtIcuModel, ModelConfig

CHECKPOINT_FORMAT = 1
MANIFEST = "manifest.json"
WEIGHTS = "weights.bin"
_DTYPE = np.dtype("<f8")


def _atomic_write(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def save_checkpoint(model: DtIcuModel, directory, extra: dict | None = None) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    inventory, chunks, offset = [], [], 0
    for name, p in model.named_parameters():
        raw = np.ascontiguousarray(p.data, dtype=_DTYPE).tobytes()
        inventory.append({"name": name, "shape": list(p.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": CHECKPOINT_FORMAT,
        "config": model.config.to_dict(),
        "schema": model.config.schema.to_dict(),
        "parameters": inventory,
        "total_bytes": offset,
        "extra": extra or {},
    }
    _atomic_write(out / WEIGHTS, b"".join(chunks))
    _atomic_write(out / MANIFEST, json.dumps(manifest, indent=2).encode())
    return out


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    if not path.is_file():
        raise CheckpointError(f"no checkpoint manifest at {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: malformed manifest ({exc})") from None
    if manifest.get("format_version") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format_version')!r}")
    return manifest


def load_checkpoint(directory) -> DtIcuModel:
    directory = Path(directory)
    manifest = read_manifest(directory)
    try:
        config = ModelConfig.from_dict(manifest["config"])
    except Exception as exc:
        raise CheckpointError(f"invalid model config in manifest: {exc}") from None
    blob_path = directory / WEIGHTS
    if not blob_path.is_file():
        raise CheckpointError(f"missing {blob_path}")
    blob = blob_path.read_bytes()
    if len(blob) != manifest["total_bytes"]:
        raise CheckpointError(
            f"{blob_path} holds {len(blob)} bytes, manifest declares {manifest['total_bytes']}"
        )
    model = DtIcuModel(config)
    params = dict(model.named_parameters())
    entries = {e["name"]: e for e in manifest["parameters"]}
    if set(entries) != set(params):
        raise CheckpointError("parameter inventory does not match the model architecture")
    for name, p in params.items():
        e = entries[name]
        if tuple(e["shape"]) != p.shape:
            raise CheckpointError(f"{name}: shape {e['shape']} != expected {list(p.shape)}")
        values = np.frombuffer(blob, dtype=_DTYPE, count=p.size, offset=e["offset"])
        p.data = values.reshape(p.shape).astype(np.float64)
    return model


def snapshot(model: DtIcuModel) -> list[np.ndarray]:
    return [p.data.copy() for p in model.parameters()]


def restore(model: DtIcuModel, values: list[np.ndarray]) -> None:
    for p, v in zip(model.parameters(), values):
        p.data = v.copy()
