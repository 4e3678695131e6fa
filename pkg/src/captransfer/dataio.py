"""On-disk formats: caption JSONL, IMGF feature files, EMBT embedding files,
vocabulary JSON, and plain-text corpora."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .text import (Corpus, Sentence, Vocabulary, preprocess_corpus,
                   preprocess_sentence, serialize_tokens)

IMGF_MAGIC = b"IMGF"
EMBT_MAGIC = b"EMBT"
SPLITS = ("train", "val", "test")


@dataclass
class CaptionItem:
    image_id: str
    row: int
    captions: list[Sentence]
    split: str


@dataclass
class CaptionDataset:
    items: list[CaptionItem]

    def split_items(self, split: str) -> list[CaptionItem]:
        return [it for it in self.items if it.split == split]

    def caption_corpus(self, split: str = "train", tag: str = "same-captions") -> Corpus:
        return Corpus([cap for it in self.split_items(split) for cap in it.captions], tag)


def read_corpus_file(path, tag: str = "other", max_tokens: int | None = None) -> Corpus:
    path = Path(path)
    if not path.exists():
        raise DataError(f"corpus file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        corpus, _ = preprocess_corpus(fh, tag=tag, max_tokens=max_tokens)
    return corpus


def write_corpus_file(path, corpus: Corpus) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sentence in corpus:
            fh.write(serialize_tokens(sentence) + "\n")


def write_features(path, matrix: np.ndarray, image_ids: list[str]) -> None:
    matrix = np.ascontiguousarray(matrix, dtype=np.float32)
    if matrix.ndim != 2 or matrix.shape[0] != len(image_ids):
        raise DataError("feature matrix must be [n_images, dim] matching image_ids")
    with open(path, "wb") as fh:
        fh.write(IMGF_MAGIC)
        fh.write(struct.pack("<II", matrix.shape[0], matrix.shape[1]))
        fh.write(matrix.astype("<f4").tobytes())
    sidecar = {image_id: row for row, image_id in enumerate(image_ids)}
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_features(path) -> tuple[np.ndarray, dict[str, int]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"features file not found: {path}")
    blob = path.read_bytes()
    if blob[:4] != IMGF_MAGIC:
        raise DataError(f"{path} is not an IMGF file")
    rows, dim = struct.unpack_from("<II", blob, 4)
    expected = 12 + 4 * rows * dim
    if len(blob) < expected:
        raise DataError(f"{path} truncated: expected {expected} bytes")
    matrix = np.frombuffer(blob, dtype="<f4", count=rows * dim, offset=12)
    matrix = matrix.reshape(rows, dim).astype(np.float32)
    sidecar_path = Path(str(path) + ".json")
    if not sidecar_path.exists():
        raise DataError(f"missing feature sidecar {sidecar_path}")
    with open(sidecar_path, encoding="utf-8") as fh:
        id_to_row = {k: int(v) for k, v in json.load(fh).items()}
    if any(not (0 <= row < rows) for row in id_to_row.values()):
        raise DataError("feature sidecar references rows outside the matrix")
    return matrix, id_to_row


def read_caption_dataset(path, id_to_row: dict[str, int]) -> CaptionDataset:
    """JSONL: {"image_id": str, "split": "train"|"val"|"test", "captions": [str, ...]}."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"caption dataset not found: {path}")
    items = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{line_no}: bad JSON: {exc}") from exc
            image_id = obj.get("image_id")
            split = obj.get("split")
            raw_captions = obj.get("captions")
            if not image_id or split not in SPLITS or not raw_captions:
                raise DataError(f"{path}:{line_no}: need image_id, split, captions")
            if image_id not in id_to_row:
                raise DataError(f"{path}:{line_no}: image {image_id!r} has no feature row")
            captions = [c for c in (preprocess_sentence(raw) for raw in raw_captions) if c]
            if not captions:
                raise DataError(f"{path}:{line_no}: all captions empty after preprocessing")
            items.append(CaptionItem(image_id, id_to_row[image_id], captions, split))
    ids = [it.image_id for it in items]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate image ids")
    return CaptionDataset(items)


def write_caption_dataset(path, items: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for obj in items:
            fh.write(json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n")


def write_vocabulary(path, vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(vocab.tokens, fh, ensure_ascii=False)
        fh.write("\n")


def read_vocabulary(path, min_count: int = 5) -> Vocabulary:
    with open(path, encoding="utf-8") as fh:
        tokens = json.load(fh)
    return Vocabulary(tokens, min_count)


def write_embeddings(path, vectors: np.ndarray, tokens: list[str]) -> None:
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    if vectors.ndim != 2 or vectors.shape[0] != len(tokens):
        raise DataError("embedding matrix must be [n_tokens, dim] matching tokens")
    with open(path, "wb") as fh:
        fh.write(EMBT_MAGIC)
        fh.write(struct.pack("<II", vectors.shape[0], vectors.shape[1]))
        fh.write(vectors.astype("<f4").tobytes())
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(tokens, fh, ensure_ascii=False)
        fh.write("\n")


def read_embeddings(path) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"embedding file not found: {path}")
    blob = path.read_bytes()
    if blob[:4] != EMBT_MAGIC:
        raise DataError(f"{path} is not an EMBT file")
    count, dim = struct.unpack_from("<II", blob, 4)
    matrix = np.frombuffer(blob, dtype="<f4", count=count * dim, offset=12)
    matrix = matrix.reshape(count, dim)
    with open(str(path) + ".json", encoding="utf-8") as fh:
        tokens = json.load(fh)
    if len(tokens) != count:
        raise DataError(f"{path}: token sidecar length {len(tokens)} != {count}")
    return {tok: matrix[i].astype(np.float64) for i, tok in enumerate(tokens)}
