"""Checkpoint serialization.

A checkpoint is a pair of files: ``<path>`` holds one little-endian
float32 blob, ``<path>.json`` holds the manifest - an entry per parameter
with {name, shape, dtype, byte_offset} in blob order, plus free-form
metadata. Adam state uses the same scheme under ``<path>.adam``.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..errors import FormatError, StateError
from .adam import AdamState
from .params import ParamGroup

_DTYPE = "<f4"


def save_arrays(arrays: dict[str, np.ndarray], path: str | Path, meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        entries.append(
            {"name": name, "shape": list(arr.shape), "dtype": "f32", "byte_offset": offset}
        )
        blobs.append(raw)
        offset += len(raw)
    manifest = {"format": "sleepfusion-checkpoint", "version": 1, "params": entries}
    if meta:
        manifest["meta"] = meta
    path.write_bytes(b"".join(blobs))
    Path(str(path) + ".json").write_text(json.dumps(manifest, indent=1))


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    manifest_path = Path(str(path) + ".json")
    if not path.exists() or not manifest_path.exists():
        raise StateError(f"checkpoint not found: {path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"checkpoint manifest is not valid JSON: {exc}") from exc
    if manifest.get("format") != "sleepfusion-checkpoint":
        raise FormatError("not a checkpoint manifest")
    blob = path.read_bytes()
    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["byte_offset"]
        end = start + 4 * count
        if end > len(blob):
            raise FormatError(
                f"checkpoint blob truncated: parameter {entry['name']} needs bytes "
                f"[{start},{end}) of {len(blob)}"
            )
        arrays[entry["name"]] = np.frombuffer(blob[start:end], dtype=_DTYPE).reshape(shape).copy()
    return arrays, manifest.get("meta", {})


def save_params(params: ParamGroup, path: str | Path, meta: dict | None = None) -> None:
    save_arrays(params.state_arrays(), path, meta)


def save_adam(state: AdamState, path: str | Path) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, m in state.m.items():
        arrays["m." + name] = m
        arrays["v." + name] = state.v[name]
    meta = {
        "step_count": state.step_count,
        "lr": state.lr,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
        "weight_decay": state.weight_decay,
    }
    save_arrays(arrays, path, meta)


def load_adam(path: str | Path) -> AdamState:
    arrays, meta = load_arrays(path)
    state = AdamState(
        lr=meta["lr"],
        beta1=meta["beta1"],
        beta2=meta["beta2"],
        eps=meta["eps"],
        weight_decay=meta["weight_decay"],
    )
    state.step_count = int(meta["step_count"])
    for name, arr in arrays.items():
        if name.startswith("m."):
            state.m[name[2:]] = arr
        elif name.startswith("v."):
            state.v[name[2:]] = arr
    return state


def params_hash(params: ParamGroup, prefixes: tuple[str, ...] = ("",)) -> str:
    """SHA-256 over the float32 bytes of every param matching a prefix."""
    h = hashlib.sha256()
    for p in params:
        if p.name.startswith(tuple(prefixes)):
            h.update(p.name.encode())
            h.update(np.ascontiguousarray(p.tensor.data, dtype=_DTYPE).tobytes())
    return h.hexdigest()
