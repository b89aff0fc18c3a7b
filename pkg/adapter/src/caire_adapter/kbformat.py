"""Standalone writer for the engine's kb-format/1 directory layout.

The adapter couples to the engine through this file format alone, so the
format is implemented here from its documented layout rather than imported:
a JSON manifest with sha256 checksums, a line-delimited entity table, and
embedding matrices as `CAIREEMB` binaries (8-byte magic, little-endian
uint32 dimension, little-endian uint64 row count, float32 rows).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KB_FORMAT_VERSION = "kb-format/1"
EMBEDDING_MAGIC = b"CAIREEMB"
_HEADER = struct.Struct("<8sIQ")


@dataclass
class EntityRow:
    entity_id: str
    lemma: str
    gloss: str = ""
    article_text: str = ""
    image_embedding_rows: list[int] = field(default_factory=list)
    text_embedding_rows: dict[str, int] = field(default_factory=dict)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_matrix(path: Path, matrix: np.ndarray) -> None:
    arr = np.ascontiguousarray(matrix, dtype=np.float32)
    rows, dim = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(EMBEDDING_MAGIC, dim, rows))
        fh.write(arr.astype("<f4").tobytes())


def unit_normalize(matrix: np.ndarray) -> np.ndarray:
    arr = np.asarray(matrix, dtype=np.float32)
    if arr.size == 0:
        return arr.reshape(arr.shape)
    norms = np.linalg.norm(arr.astype(np.float64), axis=1)
    if np.any(norms == 0.0):
        raise ValueError("cannot normalize a zero vector")
    return (arr / norms[:, None].astype(np.float32)).astype(np.float32)


def write_kb_dir(
    out_dir: Path,
    entities: list[EntityRow],
    image_matrix: np.ndarray,
    text_matrix: np.ndarray,
) -> Path:
    """Write a complete kb-format/1 directory; rows must already be unit-norm.
    Returns the manifest path."""
    out_dir.mkdir(parents=True, exist_ok=True)
    entity_path = out_dir / "entities.jsonl"
    with open(entity_path, "w", encoding="utf-8") as fh:
        for ent in entities:
            fh.write(
                json.dumps(
                    {
                        "entity_id": ent.entity_id,
                        "lemma": ent.lemma,
                        "gloss": ent.gloss,
                        "article_text": ent.article_text,
                        "image_embedding_rows": ent.image_embedding_rows,
                        "text_embedding_rows": ent.text_embedding_rows,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    image_path = out_dir / "images.emb"
    text_path = out_dir / "texts.emb"
    write_matrix(image_path, image_matrix)
    write_matrix(text_path, text_matrix)

    manifest = {
        "version": KB_FORMAT_VERSION,
        "dimension": int(image_matrix.shape[1]),
        "counts": {
            "entities": len(entities),
            "image_rows": int(image_matrix.shape[0]),
            "text_rows": int(text_matrix.shape[0]),
        },
        "files": {
            "entities": {"path": entity_path.name, "sha256": _sha256(entity_path)},
            "image_matrix": {"path": image_path.name, "sha256": _sha256(image_path)},
            "text_matrix": {"path": text_path.name, "sha256": _sha256(text_path)},
        },
        "pre_normalized": True,
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest_path
