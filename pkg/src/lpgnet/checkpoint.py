"""Checkpoint container: a zip with a JSON manifest and raw float64 payloads.

Layout inside the archive::

    manifest.json   format tag, version, config, model spec, epoch, history,
                    and a tensor index [{name, kind, shape, offset, count}]
    tensors.bin     every tensor as little-endian float64, concatenated in
                    index order

Entries are written with a fixed timestamp so identical checkpoints hash
identically.
"""
from __future__ import annotations

import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SchemaError

FORMAT = "lpgnet-checkpoint"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass
class Checkpoint:
    state: dict[str, np.ndarray]
    config: dict
    model: dict  # {"arch", "hparams", "labels"}
    epoch: int = 0
    history: list[dict] = field(default_factory=list)
    buffers: tuple[str, ...] = ()

    @property
    def num_classes(self) -> int:
        return int(self.model["hparams"]["num_classes"])

    @property
    def labels(self) -> list[str]:
        return list(self.model.get("labels") or [str(i) for i in range(self.num_classes)])


def _write_entry(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    index, chunks, offset = [], [], 0
    for name, arr in ckpt.state.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw = arr.tobytes()
        index.append({
            "name": name,
            "kind": "buffer" if name in ckpt.buffers else "param",
            "shape": list(arr.shape),
            "offset": offset,
            "count": int(arr.size),
        })
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "config": ckpt.config,
        "model": ckpt.model,
        "epoch": ckpt.epoch,
        "history": ckpt.history,
        "tensors": index,
    }
    with zipfile.ZipFile(path, "w") as zf:
        _write_entry(zf, "manifest.json", json.dumps(manifest, indent=1, sort_keys=True).encode("utf-8"))
        _write_entry(zf, "tensors.bin", b"".join(chunks))
    return path


def load_checkpoint(path) -> Checkpoint:
    try:
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json"))
            blob = zf.read("tensors.bin")
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: not a checkpoint ({exc})") from None
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise SchemaError(f"{path}: unsupported checkpoint format {manifest.get('format')!r} v{manifest.get('version')}")
    state, buffers = {}, []
    for entry in manifest["tensors"]:
        arr = np.frombuffer(blob, dtype="<f8", count=entry["count"], offset=entry["offset"])
        state[entry["name"]] = arr.astype(np.float64).reshape(entry["shape"])
        if entry["kind"] == "buffer":
            buffers.append(entry["name"])
    return Checkpoint(state, manifest["config"], manifest["model"], manifest["epoch"], manifest["history"],
                      tuple(buffers))
