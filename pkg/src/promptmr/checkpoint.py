"""Portable checkpoint container: manifest.json plus a single params.bin of
concatenated little-endian float32 arrays, addressed by name/offset."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .errors import DataError

MAGIC = "PROMPTMR-CKPT"
FORMAT_VERSION = 1


def save_checkpoint(
    path: str | Path,
    state_dict: dict[str, torch.Tensor],
    config: dict,
    extra: dict | None = None,
) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    params = {}
    chunks = []
    offset = 0
    for name, tensor in state_dict.items():
        arr = np.ascontiguousarray(tensor.detach().cpu().numpy().astype("<f4"))
        raw = arr.tobytes()
        params[name] = {
            "shape": list(arr.shape),
            "dtype": "float32",
            "offset": offset,
            "byte_length": len(raw),
        }
        chunks.append(raw)
        offset += len(raw)
    (path / "params.bin").write_bytes(b"".join(chunks))
    manifest = {
        "magic": MAGIC,
        "format_version": FORMAT_VERSION,
        "config": config,
        "params": params,
        "extra": extra or {},
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, torch.Tensor], dict]:
    """Returns (config, state_dict, extra)."""
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.is_file():
        raise DataError(f"missing manifest.json in {path}")
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    if manifest.get("magic") != MAGIC:
        raise DataError(f"bad checkpoint magic in {mpath}: {manifest.get('magic')!r}")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint version {manifest.get('format_version')!r}")
    raw = (path / "params.bin").read_bytes()
    state = {}
    for name, entry in manifest["params"].items():
        lo, n = entry["offset"], entry["byte_length"]
        if lo + n > len(raw):
            raise DataError(f"checkpoint param {name!r} extends past end of params.bin")
        arr = np.frombuffer(raw[lo : lo + n], dtype="<f4").reshape(entry["shape"]).copy()
        state[name] = torch.from_numpy(arr)
    return manifest["config"], state, manifest.get("extra", {})
