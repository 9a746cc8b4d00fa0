"""Single-file checkpoints: a text manifest followed by little-endian float64 blocks.

Layout::

    ESCGCN-CHECKPOINT 1\\n
    <manifest byte length>\\n
    <manifest JSON>
    <raw '<f8' data, blocks in manifest order>
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import BatchNormState, Tensor
from .config import ModelConfig
from .data import Vocabs
from .errors import DataError
from .model import ModelParams

MAGIC = "ESCGCN-CHECKPOINT"
VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    vocabs: Vocabs
    params: ModelParams
    epoch: int = 0
    best_metric: float = 0.0
    rng_state: dict | None = None
    extra: dict = field(default_factory=dict)

    def save(self, path: str | Path) -> None:
        save_checkpoint(self, path)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return load_checkpoint(path)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    blocks: list[np.ndarray] = []
    offset = 0

    def block(arr: np.ndarray) -> dict:
        nonlocal offset
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entry = {"shape": list(arr.shape), "offset": offset, "count": int(arr.size)}
        blocks.append(arr)
        offset += arr.size
        return entry

    tensors = [{"name": name, **block(t.data)} for name, t in ckpt.params.items()]
    norms = [{"name": name, "momentum": st.momentum, "mean": block(st.running_mean), "var": block(st.running_var)}
             for name, st in ckpt.params.norms.items()]
    manifest = {
        "version": VERSION,
        "config": ckpt.config.to_dict(),
        "vocabs": ckpt.vocabs.to_dict(),
        "tensors": tensors,
        "norms": norms,
        "epoch": ckpt.epoch,
        "best_metric": ckpt.best_metric,
        "rng_state": ckpt.rng_state,
        "extra": ckpt.extra,
    }
    text = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(f"{MAGIC} {VERSION}\n{len(text)}\n".encode("ascii"))
        fh.write(text)
        for arr in blocks:
            fh.write(arr.tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as fh:
        first = fh.readline().decode("ascii", "replace").split()
        if len(first) != 2 or first[0] != MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        if int(first[1]) != VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {first[1]}")
        size = int(fh.readline())
        manifest = json.loads(fh.read(size).decode("utf-8"))
        flat = np.frombuffer(fh.read(), dtype="<f8")

    def grab(entry) -> np.ndarray:
        a = flat[entry["offset"]:entry["offset"] + entry["count"]]
        if a.size != entry["count"]:
            raise DataError(f"{path}: truncated data block")
        return a.reshape(entry["shape"]).astype(np.float64)

    config = ModelConfig.from_dict(manifest["config"])
    tensors = {e["name"]: Tensor(grab(e), requires_grad=True) for e in manifest["tensors"]}
    norms = {}
    for e in manifest["norms"]:
        name = e["name"]
        st = BatchNormState(tensors[f"{name}.scale"].shape[0], e["momentum"],
                            tensors[f"{name}.scale"], tensors[f"{name}.shift"])
        st.running_mean = grab(e["mean"])
        st.running_var = grab(e["var"])
        norms[name] = st
    return Checkpoint(
        config=config,
        vocabs=Vocabs.from_dict(manifest["vocabs"]),
        params=ModelParams(tensors, norms),
        epoch=manifest["epoch"],
        best_metric=manifest["best_metric"],
        rng_state=manifest["rng_state"],
        extra=manifest.get("extra", {}),
    )
