"""Checkpoint persistence: a JSON manifest describing every tensor (name,
shape, dtype, byte offset, stage provenance) next to one little-endian raw
blob. Tensors can be loaded selectively by name, which the stage-II
migration relies on."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

MANIFEST = "manifest.json"
BLOB = "tensors.bin"
FORMAT = "docfocus-ckpt-v1"

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


def _dtype_tag(arr: np.ndarray) -> str:
    tag = arr.dtype.newbyteorder("<").str
    if tag not in _DTYPES:
        raise ValueError(f"unsupported tensor dtype {arr.dtype}")
    return tag


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    metadata: dict
    provenance: dict[str, str]

    @property
    def stage(self) -> str:
        return self.metadata["stage"]


def save_checkpoint(
    out_dir: str | Path,
    tensors: dict[str, np.ndarray],
    metadata: dict,
    provenance: dict[str, str],
) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    chunks = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        tag = _dtype_tag(arr)
        data = arr.astype(_DTYPES[tag], copy=False).tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": tag,
                "offset": offset,
                "nbytes": len(data),
                "provenance": provenance.get(name, "unknown"),
            }
        )
        chunks.append(data)
        offset += len(data)
    (out_dir / BLOB).write_bytes(b"".join(chunks))
    manifest = {"format": FORMAT, "metadata": metadata, "tensors": entries}
    (out_dir / MANIFEST).write_text(
        json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8"
    )
    return out_dir


def read_manifest(ckpt_dir: str | Path) -> dict:
    return json.loads((Path(ckpt_dir) / MANIFEST).read_text(encoding="utf-8"))


def load_checkpoint(ckpt_dir: str | Path, names: list[str] | None = None) -> Checkpoint:
    """Load all tensors, or only the requested names."""
    ckpt_dir = Path(ckpt_dir)
    manifest = read_manifest(ckpt_dir)
    blob = (ckpt_dir / BLOB).read_bytes()
    wanted = None if names is None else set(names)
    tensors, provenance = {}, {}
    for entry in manifest["tensors"]:
        if wanted is not None and entry["name"] not in wanted:
            continue
        dtype = _DTYPES[entry["dtype"]]
        raw = blob[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=dtype).reshape(entry["shape"]).copy()
        tensors[entry["name"]] = arr
        provenance[entry["name"]] = entry["provenance"]
    if wanted is not None and wanted - set(tensors):
        raise KeyError(f"tensors not in checkpoint: {sorted(wanted - set(tensors))}")
    return Checkpoint(tensors=tensors, metadata=manifest["metadata"], provenance=provenance)


def model_tensors(model: torch.nn.Module) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}


def load_into_model(model: torch.nn.Module, ckpt: Checkpoint, allow_extra: bool = True) -> None:
    """Copy checkpoint tensors into the model by name.

    Every model tensor must be present in the checkpoint; checkpoint-only
    tensors are ignored when allow_extra (a plain-mode model loading a
    checkpoint that also carries prompt-merge weights).
    """
    state = model.state_dict()
    missing = sorted(set(state) - set(ckpt.tensors))
    if missing:
        raise KeyError(f"checkpoint is missing tensors: {missing}")
    extra = sorted(set(ckpt.tensors) - set(state))
    if extra and not allow_extra:
        raise KeyError(f"checkpoint has unexpected tensors: {extra}")
    new_state = {}
    for name, tensor in state.items():
        arr = ckpt.tensors[name]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise ValueError(
                f"shape mismatch for {name}: checkpoint {arr.shape}, model {tuple(tensor.shape)}"
            )
        new_state[name] = torch.from_numpy(arr).to(tensor.dtype)
    model.load_state_dict(new_state, strict=True)
