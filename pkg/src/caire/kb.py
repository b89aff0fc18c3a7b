"""Knowledge-base data model and on-disk format (kb-format/1).

A KB directory holds three files referenced from a JSON manifest:

* an entity table, one JSON record per line;
* two embedding matrices (images, texts) in a raw binary layout:
  8-byte magic ``CAIREEMB``, little-endian uint32 dimension, little-endian
  uint64 row count, then the rows as contiguous little-endian float32.

Vectors are unit-normalized at ingest so cosine similarity reduces to a dot
product on the query hot path. The manifest records whether the files were
written pre-normalized; if so the loader verifies instead of re-normalizing,
which keeps write -> load round trips byte-identical.

Entities may own several image rows (each indexed independently; centroid
aggregation is deliberately not done) and one text row per field kind.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ChecksumMismatch,
    DanglingRowReference,
    DimensionMismatch,
    DuplicateEntityId,
    EmbeddingFormatError,
    KbError,
    ManifestError,
    UnknownEntity,
)

KB_FORMAT_VERSION = "kb-format/1"
EMBEDDING_MAGIC = b"CAIREEMB"
_HEADER = struct.Struct("<8sIQ")  # magic, dimension, row count

NORM_TOLERANCE = 1e-6

TEXT_FIELDS = ("lemma", "gloss", "article")


@dataclass(frozen=True)
class EntityRecord:
    """One KB entity with its linked embedding rows."""

    entity_id: str
    lemma: str
    gloss: str = ""
    article_text: str = ""
    image_embedding_rows: tuple[int, ...] = ()
    text_embedding_rows: dict[str, int] = field(default_factory=dict)

    def scoring_text(self) -> tuple[str, str]:
        """Longest available description: (field name, text).

        Falls back article -> gloss -> lemma; lemma is guaranteed non-empty.
        """
        if self.article_text:
            return "article", self.article_text
        if self.gloss:
            return "gloss", self.gloss
        return "lemma", self.lemma


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Dense unit-norm float32 matrix plus the row -> owning entities map."""

    dimension: int
    rows: np.ndarray
    row_owner: tuple[tuple[str, ...], ...]

    @property
    def row_count(self) -> int:
        return int(self.rows.shape[0])


@dataclass(frozen=True)
class KbManifest:
    version: str
    dimension: int
    counts: dict[str, int]
    files: dict[str, dict[str, str]]  # name -> {path, sha256}
    pre_normalized: bool

    def to_json(self) -> str:
        payload = {
            "version": self.version,
            "dimension": self.dimension,
            "counts": self.counts,
            "files": self.files,
            "pre_normalized": self.pre_normalized,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


@dataclass
class KnowledgeBase:
    """Immutable after load; safe for concurrent read access."""

    entities: dict[str, EntityRecord]
    image_matrix: EmbeddingMatrix
    text_matrix: EmbeddingMatrix
    manifest: KbManifest
    root: Path

    # populated lazily by caire.linking.get_indexes(); never touched here
    _index_cache: object = None

    def entity_ids(self) -> list[str]:
        return list(self.entities)


def file_sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_embedding_file(path: Path, matrix: np.ndarray) -> None:
    """Write a CAIREEMB binary; rows are stored as given (no normalization)."""
    arr = np.ascontiguousarray(matrix, dtype=np.float32)
    if arr.ndim != 2:
        raise EmbeddingFormatError(f"matrix must be 2-D, got shape {arr.shape}")
    rows, dim = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(EMBEDDING_MAGIC, dim, rows))
        fh.write(arr.astype("<f4").tobytes())


def read_embedding_file(path: Path) -> np.ndarray:
    if not path.exists():
        raise EmbeddingFormatError(f"embedding file missing: {path}")
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise EmbeddingFormatError(f"{path}: truncated header")
    magic, dim, rows = _HEADER.unpack_from(raw)
    if magic != EMBEDDING_MAGIC:
        raise EmbeddingFormatError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + rows * dim * 4
    if len(raw) != expected:
        raise EmbeddingFormatError(
            f"{path}: payload is {len(raw)} bytes, header implies {expected}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    return data.reshape(rows, dim).astype(np.float32, copy=True)


def _require_finite(matrix: np.ndarray, source: str) -> None:
    if matrix.size and not np.isfinite(matrix).all():
        bad = np.flatnonzero(~np.isfinite(matrix).all(axis=1))
        raise EmbeddingFormatError(f"{source}: row {int(bad[0])} contains non-finite values")


def normalize_rows(matrix: np.ndarray, *, source: str = "matrix") -> np.ndarray:
    _require_finite(matrix, source)
    norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise EmbeddingFormatError(f"{source}: row {int(zero[0])} is a zero vector")
    return (matrix / norms[:, None].astype(np.float32)).astype(np.float32)


def _verify_unit_norm(matrix: np.ndarray, source: str) -> None:
    _require_finite(matrix, source)
    norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
    bad = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOLERANCE)
    if bad.size:
        row = int(bad[0])
        raise KbError(
            f"{source}: row {row} has L2 norm {norms[row]:.8f}, "
            f"outside 1 +/- {NORM_TOLERANCE}"
        )


def _parse_entity_line(line: str, lineno: int) -> EntityRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise KbError(f"entity table line {lineno}: invalid JSON ({exc})") from exc
    entity_id = obj.get("entity_id", "")
    lemma = obj.get("lemma", "")
    if not entity_id:
        raise KbError(f"entity table line {lineno}: missing entity_id")
    if not lemma:
        raise KbError(f"entity {entity_id!r}: lemma must be non-empty")
    text_rows = obj.get("text_embedding_rows", {}) or {}
    for fname in text_rows:
        if fname not in TEXT_FIELDS:
            raise KbError(f"entity {entity_id!r}: unknown text field {fname!r}")
    return EntityRecord(
        entity_id=entity_id,
        lemma=lemma,
        gloss=obj.get("gloss", "") or "",
        article_text=obj.get("article_text", "") or "",
        image_embedding_rows=tuple(int(r) for r in obj.get("image_embedding_rows", [])),
        text_embedding_rows={k: int(v) for k, v in text_rows.items()},
    )


def _build_row_owner(
    entities: dict[str, EntityRecord], row_count: int, matrix_name: str, image: bool
) -> tuple[tuple[str, ...], ...]:
    owners: list[list[str]] = [[] for _ in range(row_count)]
    for ent in entities.values():
        rows = (
            ent.image_embedding_rows if image else tuple(ent.text_embedding_rows.values())
        )
        for row in rows:
            if not 0 <= row < row_count:
                raise DanglingRowReference(ent.entity_id, matrix_name, row, row_count)
            owners[row].append(ent.entity_id)
    orphans = [i for i, lst in enumerate(owners) if not lst]
    if orphans:
        raise KbError(
            f"{matrix_name}: row {orphans[0]} is not referenced by any entity "
            f"({len(orphans)} orphan rows total)"
        )
    return tuple(tuple(lst) for lst in owners)


def load_kb(manifest_path: str | Path) -> KnowledgeBase:
    """Load and validate a kb-format/1 directory.

    Raises a specific KbError subclass naming the offending file/entity/row
    on any violation: missing file, checksum or dimension mismatch, dangling
    row reference, duplicate entity_id, orphan row, norm violation.
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise ManifestError(f"manifest not found: {manifest_path}")
    try:
        raw = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ManifestError(f"{manifest_path}: {exc}") from exc
    if raw.get("version") != KB_FORMAT_VERSION:
        raise ManifestError(
            f"{manifest_path}: unsupported version {raw.get('version')!r}, "
            f"expected {KB_FORMAT_VERSION!r}"
        )
    for key in ("dimension", "counts", "files"):
        if key not in raw:
            raise ManifestError(f"{manifest_path}: missing field {key!r}")
    manifest = KbManifest(
        version=raw["version"],
        dimension=int(raw["dimension"]),
        counts={k: int(v) for k, v in raw["counts"].items()},
        files=raw["files"],
        pre_normalized=bool(raw.get("pre_normalized", False)),
    )

    root = manifest_path.parent
    paths: dict[str, Path] = {}
    for name in ("entities", "image_matrix", "text_matrix"):
        if name not in manifest.files:
            raise ManifestError(f"{manifest_path}: files section lacks {name!r}")
        fpath = root / manifest.files[name]["path"]
        if not fpath.exists():
            raise KbError(f"referenced file missing: {fpath}")
        expected = manifest.files[name].get("sha256", "")
        actual = file_sha256(fpath)
        if expected and actual != expected:
            raise ChecksumMismatch(str(fpath), expected, actual)
        paths[name] = fpath

    image_rows = read_embedding_file(paths["image_matrix"])
    text_rows = read_embedding_file(paths["text_matrix"])
    if image_rows.shape[1] != text_rows.shape[1]:
        raise DimensionMismatch(
            f"image matrix dim {image_rows.shape[1]} != text matrix dim {text_rows.shape[1]}"
        )
    if image_rows.shape[1] != manifest.dimension:
        raise DimensionMismatch(
            f"matrices have dim {image_rows.shape[1]}, manifest says {manifest.dimension}"
        )

    if manifest.pre_normalized:
        _verify_unit_norm(image_rows, "image matrix")
        _verify_unit_norm(text_rows, "text matrix")
    else:
        image_rows = normalize_rows(image_rows, source="image matrix")
        text_rows = normalize_rows(text_rows, source="text matrix")

    entities: dict[str, EntityRecord] = {}
    with open(paths["entities"], encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = _parse_entity_line(line, lineno)
            if rec.entity_id in entities:
                raise DuplicateEntityId(rec.entity_id)
            entities[rec.entity_id] = rec

    counted = {
        "entities": len(entities),
        "image_rows": image_rows.shape[0],
        "text_rows": text_rows.shape[0],
    }
    for key, expected_count in manifest.counts.items():
        if key in counted and counted[key] != expected_count:
            raise KbError(
                f"manifest declares {expected_count} {key}, loaded {counted[key]}"
            )

    image_owner = _build_row_owner(entities, image_rows.shape[0], "image matrix", True)
    text_owner = _build_row_owner(entities, text_rows.shape[0], "text matrix", False)

    image_rows.flags.writeable = False
    text_rows.flags.writeable = False
    return KnowledgeBase(
        entities=entities,
        image_matrix=EmbeddingMatrix(manifest.dimension, image_rows, image_owner),
        text_matrix=EmbeddingMatrix(manifest.dimension, text_rows, text_owner),
        manifest=manifest,
        root=root,
    )


def get_entity(kb: KnowledgeBase, entity_id: str) -> EntityRecord:
    """O(1) lookup; raises UnknownEntity for missing (or empty) ids."""
    try:
        return kb.entities[entity_id]
    except KeyError:
        raise UnknownEntity(entity_id) from None


def write_kb(
    out_dir: str | Path,
    entities: list[EntityRecord],
    image_matrix: np.ndarray,
    text_matrix: np.ndarray,
    *,
    normalize: bool = True,
) -> Path:
    """Write a kb-format/1 directory and return the manifest path.

    With normalize=True (the default) rows are unit-normalized before being
    serialized and the manifest marks them pre_normalized, so a subsequent
    load_kb reproduces the stored bytes exactly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    image = np.asarray(image_matrix, dtype=np.float32)
    text = np.asarray(text_matrix, dtype=np.float32)
    if normalize:
        image = normalize_rows(image, source="image matrix")
        text = normalize_rows(text, source="text matrix")

    entity_path = out / "entities.jsonl"
    with open(entity_path, "w", encoding="utf-8") as fh:
        for ent in entities:
            fh.write(
                json.dumps(
                    {
                        "entity_id": ent.entity_id,
                        "lemma": ent.lemma,
                        "gloss": ent.gloss,
                        "article_text": ent.article_text,
                        "image_embedding_rows": list(ent.image_embedding_rows),
                        "text_embedding_rows": ent.text_embedding_rows,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    image_path = out / "images.emb"
    text_path = out / "texts.emb"
    write_embedding_file(image_path, image)
    write_embedding_file(text_path, text)

    manifest = KbManifest(
        version=KB_FORMAT_VERSION,
        dimension=int(image.shape[1]),
        counts={
            "entities": len(entities),
            "image_rows": int(image.shape[0]),
            "text_rows": int(text.shape[0]),
        },
        files={
            "entities": {"path": entity_path.name, "sha256": file_sha256(entity_path)},
            "image_matrix": {"path": image_path.name, "sha256": file_sha256(image_path)},
            "text_matrix": {"path": text_path.name, "sha256": file_sha256(text_path)},
        },
        pre_normalized=normalize,
    )
    manifest_path = out / "manifest.json"
    manifest_path.write_text(manifest.to_json(), encoding="utf-8")
    return manifest_path
