"""Checkpoint directory IO: config.json + weights.bin.

weights.bin records: name length (u32 LE), UTF-8 name, rank (u32 LE),
dims (u32 LE each), float32 LE values, in ParamStore insertion order so
identical runs serialize byte-identically.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .nn import ParamStore

WEIGHTS_NAME = "weights.bin"
CONFIG_NAME = "config.json"


def save_weights(path: Path, store: ParamStore) -> None:
    with open(path, "wb") as fh:
        for name, t, _ in store.items():
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            arr = np.ascontiguousarray(t.data, dtype=np.float32)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f4").tobytes())


def load_weights(path: Path) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    blob = Path(path).read_bytes()
    offset = 0
    while offset < len(blob):
        try:
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            values = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
            offset += 4 * count
        except (struct.error, UnicodeDecodeError) as exc:
            raise DataError(f"corrupt weights file {path}: {exc}") from exc
        arrays[name] = values.reshape(dims).astype(np.float32)
    return arrays


def save_checkpoint(directory, store: ParamStore, config: dict) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_weights(directory / WEIGHTS_NAME, store)
    cfg = dict(config)
    cfg["trainable"] = {name: tr for name, _, tr in store.items()}
    with open(directory / CONFIG_NAME, "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    weights_path = directory / WEIGHTS_NAME
    config_path = directory / CONFIG_NAME
    if not weights_path.exists() or not config_path.exists():
        raise DataError(f"no checkpoint at {directory}")
    with open(config_path, encoding="utf-8") as fh:
        config = json.load(fh)
    return load_weights(weights_path), config


def weights_hash(directory) -> str:
    """SHA-256 of weights.bin; recorded in transfer.json as the source id."""
    return hashlib.sha256((Path(directory) / WEIGHTS_NAME).read_bytes()).hexdigest()
