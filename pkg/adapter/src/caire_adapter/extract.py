"""Batch embedding extraction into the engine's kb-format/1 layout.

The input listing is line-delimited JSON, one entity per line:
``{"entity_id", "lemma", "gloss"?, "article_text"?, "images": [names]}``.
Image names resolve inside the job's images directory. Unreadable images are
skipped and reported, never fatal; text rows are produced for every non-empty
lemma/gloss/article field. Output passes the engine's loader validation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoders import Encoder
from .kbformat import EntityRow, unit_normalize, write_kb_dir

TEXT_FIELDS = ("lemma", "gloss", "article")


@dataclass
class ExtractionJob:
    listing_path: Path
    images_dir: Path
    out_dir: Path
    encoder: Encoder
    batch_size: int = 16


@dataclass
class ExtractionReport:
    manifest_path: Path
    entities: int
    image_rows: int
    text_rows: int
    skipped: list[str] = field(default_factory=list)


def _read_listing(path: Path) -> list[dict]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            if not obj.get("entity_id") or not obj.get("lemma"):
                raise ValueError(f"{path}:{lineno}: entity_id and lemma are required")
            entries.append(obj)
    return entries


def _batched(items, size):
    for start in range(0, len(items), size):
        yield items[start : start + size]


def extract_embeddings(job: ExtractionJob) -> ExtractionReport:
    entries = _read_listing(Path(job.listing_path))
    if not entries:
        raise ValueError(f"{job.listing_path}: listing is empty, nothing to extract")

    skipped: list[str] = []

    # resolve and vet image paths first so batches contain only readable files
    image_jobs: list[tuple[str, Path]] = []  # (entity_id, path)
    for obj in entries:
        for name in obj.get("images", []):
            path = Path(job.images_dir) / name
            if not path.is_file():
                skipped.append(f"{obj['entity_id']}: image {name!r} unreadable, skipped")
                continue
            image_jobs.append((obj["entity_id"], path))

    image_rows_of: dict[str, list[int]] = {obj["entity_id"]: [] for obj in entries}
    image_chunks: list[np.ndarray] = []
    row_cursor = 0
    for batch in _batched(image_jobs, job.batch_size):
        vectors = job.encoder.embed_image_files([p for _, p in batch])
        image_chunks.append(vectors)
        for offset, (entity_id, _) in enumerate(batch):
            image_rows_of[entity_id].append(row_cursor + offset)
        row_cursor += len(batch)

    text_jobs: list[tuple[str, str, str]] = []  # (entity_id, field, text)
    for obj in entries:
        for fname in TEXT_FIELDS:
            key = "article_text" if fname == "article" else fname
            text = (obj.get(key) or "").strip()
            if text:
                text_jobs.append((obj["entity_id"], fname, text))

    text_rows_of: dict[str, dict[str, int]] = {obj["entity_id"]: {} for obj in entries}
    text_chunks: list[np.ndarray] = []
    row_cursor = 0
    for batch in _batched(text_jobs, job.batch_size):
        vectors = job.encoder.embed_texts([t for _, _, t in batch])
        text_chunks.append(vectors)
        for offset, (entity_id, fname, _) in enumerate(batch):
            text_rows_of[entity_id][fname] = row_cursor + offset
        row_cursor += len(batch)

    dim = getattr(job.encoder, "dimension", None)
    if image_chunks:
        dim = image_chunks[0].shape[1]
    elif text_chunks:
        dim = text_chunks[0].shape[1]
    if not dim or dim <= 0:
        raise ValueError("encoder produced no rows; cannot determine dimension")

    image_matrix = (
        np.concatenate(image_chunks) if image_chunks else np.zeros((0, dim), np.float32)
    )
    text_matrix = (
        np.concatenate(text_chunks) if text_chunks else np.zeros((0, dim), np.float32)
    )
    image_matrix = unit_normalize(image_matrix)
    text_matrix = unit_normalize(text_matrix)

    rows = [
        EntityRow(
            entity_id=obj["entity_id"],
            lemma=obj["lemma"],
            gloss=obj.get("gloss", "") or "",
            article_text=obj.get("article_text", "") or "",
            image_embedding_rows=image_rows_of[obj["entity_id"]],
            text_embedding_rows=text_rows_of[obj["entity_id"]],
        )
        for obj in entries
    ]
    manifest = write_kb_dir(Path(job.out_dir), rows, image_matrix, text_matrix)
    return ExtractionReport(
        manifest_path=manifest,
        entities=len(rows),
        image_rows=int(image_matrix.shape[0]),
        text_rows=int(text_matrix.shape[0]),
        skipped=skipped,
    )
