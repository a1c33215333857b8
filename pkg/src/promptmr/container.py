"""On-disk case container: `manifest.json` plus one little-endian `.bin` per array.

complex64 arrays are stored as interleaved re/im float32. Readers validate
magic, version and byte lengths; unknown extra manifest keys are allowed so
v1 readers survive forward-compatible additions.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .errors import DataError
from .fourier import CoilSensitivities
from .phantom import CaseRecord, KSpaceVolume, PhantomSpec

MAGIC = "PROMPTMR-CASE"
FORMAT_VERSION = 1

_DTYPES = {"complex64": np.dtype("<c8"), "float32": np.dtype("<f4")}


def write_container(path: str | Path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write a generic container directory. Arrays must be complex64 or float32."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest: dict = {
        "magic": MAGIC,
        "format_version": FORMAT_VERSION,
        "arrays": {},
    }
    manifest.update(meta)
    for name, arr in arrays.items():
        if np.iscomplexobj(arr):
            dtype = "complex64"
        else:
            dtype = "float32"
        data = np.ascontiguousarray(arr.astype(_DTYPES[dtype]))
        fname = f"{name}.bin"
        raw = data.tobytes()
        (path / fname).write_bytes(raw)
        manifest["arrays"][name] = {
            "file": fname,
            "dtype": dtype,
            "shape": list(data.shape),
            "byte_length": len(raw),
            "order": "C",
        }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")


def read_container(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container directory; returns (arrays, manifest)."""
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.is_file():
        raise DataError(f"missing manifest.json in {path}")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"corrupt manifest in {path}: {e}") from e
    if manifest.get("magic") != MAGIC:
        raise DataError(f"bad magic in {mpath}: field 'magic' = {manifest.get('magic')!r}")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported format_version {manifest.get('format_version')!r} in {mpath}")
    arrays = {}
    for name, entry in manifest.get("arrays", {}).items():
        for key in ("file", "dtype", "shape", "byte_length"):
            if key not in entry:
                raise DataError(f"array {name!r}: missing manifest field {key!r}")
        if entry["dtype"] not in _DTYPES:
            raise DataError(f"array {name!r}: unknown dtype {entry['dtype']!r}")
        raw = (path / entry["file"]).read_bytes()
        if len(raw) != entry["byte_length"]:
            raise DataError(
                f"array {name!r}: expected {entry['byte_length']} bytes, file has {len(raw)}"
            )
        dt = _DTYPES[entry["dtype"]]
        expected = int(np.prod(entry["shape"])) * dt.itemsize
        if len(raw) != expected:
            raise DataError(f"array {name!r}: byte length {len(raw)} does not match shape {entry['shape']}")
        arrays[name] = np.frombuffer(raw, dtype=dt).reshape(entry["shape"]).copy()
    return arrays, manifest


def write_case(case: CaseRecord, path: str | Path) -> None:
    spec = case.spec
    meta = {
        "kind": "case",
        "frame_axis": spec.frame_axis,
        "spec": {
            "grid": list(spec.grid),
            "n_coils": spec.n_coils,
            "n_frames": spec.n_frames,
            "frame_axis": spec.frame_axis,
            "motion_amplitude": spec.motion_amplitude,
            "contrast_schedule": (
                [list(row) for row in spec.contrast_schedule] if spec.contrast_schedule else None
            ),
            "noise_std": spec.noise_std,
            "seed": spec.seed,
        },
    }
    arrays = {
        "kspace": case.kspace.data.numpy(),
        "target": case.target.numpy(),
        "sens_true": case.sens_true.maps.numpy(),
    }
    write_container(path, arrays, meta)


def read_case(path: str | Path) -> CaseRecord:
    arrays, manifest = read_container(path)
    for name in ("kspace", "target", "sens_true"):
        if name not in arrays:
            raise DataError(f"case container {path} is missing array {name!r}")
    try:
        s = manifest["spec"]
        spec = PhantomSpec(
            grid=tuple(s["grid"]),
            n_coils=s["n_coils"],
            n_frames=s["n_frames"],
            frame_axis=s["frame_axis"],
            motion_amplitude=s["motion_amplitude"],
            contrast_schedule=(
                tuple(tuple(row) for row in s["contrast_schedule"]) if s["contrast_schedule"] else None
            ),
            noise_std=s["noise_std"],
            seed=s["seed"],
        )
    except KeyError as e:
        raise DataError(f"case container {path}: manifest spec missing field {e}") from e
    return CaseRecord(
        kspace=KSpaceVolume(data=torch.from_numpy(arrays["kspace"]), frame_axis=spec.frame_axis),
        target=torch.from_numpy(arrays["target"]),
        sens_true=CoilSensitivities(maps=torch.from_numpy(arrays["sens_true"])),
        spec=spec,
    )
