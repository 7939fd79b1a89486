"""Binary checkpoint format.

A checkpoint is a directory holding

``embeddings.bin``
    48-byte little-endian header ``magic(8s) version(u32) mode(u32) k(u64)
    n_instances(u64) n_relations(u64) n_concepts(u64)`` followed by float64
    arrays in order: instance vectors, relation vectors, sphere centers,
    radii, isA translation vectors (2 x k).
``config.json``
    the training configuration snapshot.
``loss.json``
    per-epoch loss trace (optional).
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .geometry import EmbeddingSpace
from .training import MODES, TrainConfig, TrainState

MAGIC = b"TRANSC\x00\x01"
VERSION = 1
_HEADER = struct.Struct("<8sIIQQQQ")
EMBEDDINGS = "embeddings.bin"
CONFIG = "config.json"
LOSS = "loss.json"


class CheckpointError(ValueError):
    pass


def write_embeddings(path, space: EmbeddingSpace, mode: str = "transc"):
    path = Path(path)
    k = space.dim
    header = _HEADER.pack(
        MAGIC, VERSION, MODES.index(mode), k,
        len(space.instance_vecs), len(space.relation_vecs), len(space.centers),
    )
    tmp = path.with_suffix(".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        for arr in (space.instance_vecs, space.relation_vecs, space.centers, space.radii, space.isa_relation_vecs):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    os.replace(tmp, path)


def read_embeddings(path):
    """Return ``(space, mode)``."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, mode, k, n_i, n_r, n_c = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    if mode >= len(MODES):
        raise CheckpointError(f"{path}: unknown mode {mode}")
    shapes = [(n_i, k), (n_r, k), (n_c, k), (n_c,), (2, k)]
    expected = _HEADER.size + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(data) != expected:
        raise CheckpointError(f"{path}: size {len(data)} != expected {expected}")
    arrays = []
    offset = _HEADER.size
    for shape in shapes:
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)
        arrays.append(arr)
        offset += 8 * count
    return EmbeddingSpace(*arrays), MODES[mode]


def save_checkpoint(directory, state: TrainState, config: TrainConfig):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_embeddings(directory / EMBEDDINGS, state.space, config.mode)
    (directory / CONFIG).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    trace = {"epochs": state.epoch, "loss": state.loss_trace}
    (directory / LOSS).write_text(json.dumps(trace, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(directory):
    """Return ``(state, config)`` from a checkpoint directory."""
    directory = Path(directory)
    if not (directory / EMBEDDINGS).exists():
        raise CheckpointError(f"{directory}: no {EMBEDDINGS}")
    space, mode = read_embeddings(directory / EMBEDDINGS)
    config = TrainConfig.from_dict(json.loads((directory / CONFIG).read_text(encoding="utf-8")))
    if config.mode != mode:
        raise CheckpointError(f"{directory}: mode in header ({mode}) differs from config ({config.mode})")
    state = TrainState(space)
    if (directory / LOSS).exists():
        trace = json.loads((directory / LOSS).read_text(encoding="utf-8"))
        state.epoch = trace["epochs"]
        state.loss_trace = trace["loss"]
    return state, config
