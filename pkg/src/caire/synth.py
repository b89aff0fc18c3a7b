"""Synthetic KB builders with planted geometry.

Fixtures here are constructed, not sampled: similarities are planted by
composing each vector from a known component along the query direction plus
an orthogonal remainder, so retrieval order, disambiguation winners, and
frequency counts are forced by construction. Used by the test suite and the
demo scripts; also handy for operators smoke-testing a deployment without a
real KB.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kb import EntityRecord, write_kb


def basis_vector(dim: int, axis: int) -> np.ndarray:
    v = np.zeros(dim, dtype=np.float32)
    v[axis] = 1.0
    return v


def planted_vector(anchor: np.ndarray, similarity: float, ortho: np.ndarray) -> np.ndarray:
    """Unit vector with an exact cosine similarity to the unit anchor, using
    ``ortho`` (unit, orthogonal to anchor) for the remainder."""
    if not -1.0 <= similarity <= 1.0:
        raise ValueError(f"similarity must be in [-1, 1], got {similarity}")
    rest = math.sqrt(max(0.0, 1.0 - similarity * similarity))
    return (similarity * anchor.astype(np.float64) + rest * ortho.astype(np.float64)).astype(
        np.float32
    )


def make_random_kb(
    out_dir: str | Path,
    *,
    n_entities: int = 50,
    dim: int = 64,
    seed: int = 0,
    images_per_entity: int = 1,
    with_gloss_rows: bool = True,
    with_article_rows: bool = True,
) -> Path:
    """Random unit-vector KB; every entity owns its own image and text rows."""
    rng = np.random.default_rng(seed)
    entities = []
    image_rows = []
    text_rows = []
    for i in range(n_entities):
        img_idx = []
        for _ in range(images_per_entity):
            img_idx.append(len(image_rows))
            image_rows.append(rng.standard_normal(dim))
        text_map = {"lemma": len(text_rows)}
        text_rows.append(rng.standard_normal(dim))
        if with_gloss_rows:
            text_map["gloss"] = len(text_rows)
            text_rows.append(rng.standard_normal(dim))
        if with_article_rows:
            text_map["article"] = len(text_rows)
            text_rows.append(rng.standard_normal(dim))
        entities.append(
            EntityRecord(
                entity_id=f"e_{i:04d}",
                lemma=f"entity {i}",
                gloss=f"A synthetic entity number {i}.",
                article_text=f"Synthetic article describing entity {i} in detail.",
                image_embedding_rows=tuple(img_idx),
                text_embedding_rows=text_map,
            )
        )
    return write_kb(out_dir, entities, np.array(image_rows), np.array(text_rows))


# ---------------------------------------------------------------------------
# decorated-egg walkthrough fixture: 20 hit rows with multi-entity ownership


_EGG_ENTITIES = (
    # (entity_id, lemma, planted image-to-lemma similarity)
    ("e_pysanka", "Pysanka", 0.5243),
    ("e_easter", "Easter", 0.5161),
    ("e_easter_egg", "Easter egg", 0.5157),
    ("e_folk_ro", "Folklore of Romania", 0.5108),
    ("e_romania", "Romania", 0.5037),
    ("e_ukraine", "Ukraine", 0.4985),
    ("e_etym_ua", "Etymology of Ukraine", 0.4942),
)

# owners per retrieved image row, rows in descending similarity order;
# ownership multiset gives frequency counts 13/10/6/2/1/1/1 over 20 rows
# while the five best rows already cover all seven entities
_EGG_ROW_OWNERS = (
    ("e_pysanka", "e_easter"),
    ("e_pysanka", "e_easter_egg"),
    ("e_ukraine", "e_etym_ua"),
    ("e_pysanka", "e_easter_egg", "e_easter"),
    ("e_romania", "e_folk_ro"),
    ("e_pysanka", "e_easter_egg"),
    ("e_pysanka", "e_easter_egg"),
    ("e_pysanka", "e_easter_egg"),
    ("e_pysanka", "e_easter_egg"),
    ("e_pysanka", "e_easter_egg"),
    ("e_pysanka", "e_easter_egg"),
    ("e_pysanka", "e_easter_egg"),
    ("e_pysanka", "e_easter_egg"),
    ("e_pysanka",),
    ("e_pysanka",),
    ("e_easter",),
    ("e_easter",),
    ("e_easter",),
    ("e_easter",),
    ("e_ukraine",),
)

# top-5 image similarities planted explicitly; the tail keeps descending
_EGG_TOP5_SIMS = (0.9232446, 0.92118037, 0.92117214, 0.9197761, 0.9105648)

EGG_FREQUENCIES = {
    "e_pysanka": 13,
    "e_easter_egg": 10,
    "e_easter": 6,
    "e_ukraine": 2,
    "e_romania": 1,
    "e_folk_ro": 1,
    "e_etym_ua": 1,
}

EGG_LEMMA_ORDER = tuple(eid for eid, _, _ in _EGG_ENTITIES)
EGG_LEMMA_SIMS = {eid: sim for eid, _, sim in _EGG_ENTITIES}


@dataclass(frozen=True)
class EggFixture:
    manifest_path: Path
    query: np.ndarray
    row_similarities: tuple[float, ...]


def make_egg_kb(out_dir: str | Path, dim: int = 64) -> EggFixture:
    """Planted multi-ownership KB: a query retrieves 20 image rows whose five
    best rows cover seven unique entities; lemma similarities and ownership
    frequencies are forced to known values."""
    n_rows = len(_EGG_ROW_OWNERS)
    assert dim >= 1 + n_rows + len(_EGG_ENTITIES)
    query = basis_vector(dim, 0)

    row_sims = list(_EGG_TOP5_SIMS)
    while len(row_sims) < n_rows:
        row_sims.append(0.905 - 0.002 * (len(row_sims) - 5))
    image_rows = np.stack(
        [
            planted_vector(query, sim, basis_vector(dim, 1 + i))
            for i, sim in enumerate(row_sims)
        ]
    )

    image_rows_of = {eid: [] for eid, _, _ in _EGG_ENTITIES}
    for row, owners in enumerate(_EGG_ROW_OWNERS):
        for eid in owners:
            image_rows_of[eid].append(row)

    entities = []
    text_rows = []
    for j, (eid, lemma, lemma_sim) in enumerate(_EGG_ENTITIES):
        ortho = basis_vector(dim, 1 + n_rows + j)
        lemma_vec = planted_vector(query, lemma_sim, ortho)
        text_map = {"lemma": len(text_rows)}
        text_rows.append(lemma_vec)
        # gloss vectors equal the lemma vectors: gloss ranking mirrors lemma
        text_map["gloss"] = len(text_rows)
        text_rows.append(lemma_vec.copy())
        entities.append(
            EntityRecord(
                entity_id=eid,
                lemma=lemma,
                gloss=f"{lemma}, a concept from the decorated-egg tradition.",
                article_text=f"{lemma} is a traditional concept surrounding decorated eggs.",
                image_embedding_rows=tuple(image_rows_of[eid]),
                text_embedding_rows=text_map,
            )
        )

    manifest = write_kb(out_dir, entities, image_rows, np.stack(text_rows))
    return EggFixture(
        manifest_path=manifest, query=query, row_similarities=tuple(row_sims)
    )


# ---------------------------------------------------------------------------
# 50-entity end-to-end attribution fixture


HIGH_DISTRIBUTION = (0.02, 0.03, 0.05, 0.15, 0.75)  # argmax 5
LOW_DISTRIBUTION = (0.75, 0.15, 0.05, 0.03, 0.02)  # argmax 1
FIXTURE_CULTURES = ("culture_A", "culture_B", "culture_C")


@dataclass(frozen=True)
class AttributionFixture:
    manifest_path: Path
    queries_path: Path
    gold_path: Path
    gold_context_path: Path
    mock_table_path: Path
    n_queries: int
    cultures: tuple[str, ...]


def _fixture_lemma(i: int) -> str:
    return f"concept_{i:03d}"


def _fixture_article(i: int) -> str:
    lemma = _fixture_lemma(i)
    return (
        f"{lemma} is a ceremonial artifact documented across region {i}. "
        f"Accounts describe {lemma} as central to local practice."
    )


def make_attribution_fixture(
    out_dir: str | Path,
    *,
    n_entities: int = 50,
    n_queries: int = 5,
    dim: int = 64,
    perturb_entity: int | None = None,
) -> AttributionFixture:
    """Planted KB + query batch + gold labels + mock table for end-to-end runs.

    Query i points at entity i (image similarity ~0.99) with a faint second
    component toward entity (i+7): a run links every query correctly and
    scores 5 exactly for culture_{i mod 3}, so F1 is 1.0 at threshold 4.
    ``perturb_entity=j`` corrupts entity j's image and lemma rows, forcing
    query j to link to entity (j+7) and miss its gold culture.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    assert dim >= n_entities
    entities = []
    image_rows = []
    text_rows = []
    for i in range(n_entities):
        direction = basis_vector(dim, i)
        if perturb_entity is not None and i == perturb_entity:
            direction = basis_vector(dim, (i + 13) % n_entities)
        image_rows.append(direction)
        text_map = {"lemma": len(text_rows)}
        text_rows.append(direction.copy())
        text_map["article"] = len(text_rows)
        text_rows.append(direction.copy())
        entities.append(
            EntityRecord(
                entity_id=f"e_{i:03d}",
                lemma=_fixture_lemma(i),
                gloss=f"{_fixture_lemma(i)}: a planted fixture concept.",
                article_text=_fixture_article(i),
                image_embedding_rows=(i,),
                text_embedding_rows=text_map,
            )
        )
    kb_dir = out / "kb"
    manifest = write_kb(kb_dir, entities, np.stack(image_rows), np.stack(text_rows))

    queries_path = out / "queries.jsonl"
    gold_path = out / "gold.jsonl"
    gold_context_path = out / "gold_context.jsonl"
    mock_table_path = out / "mock_table.json"

    with open(queries_path, "w", encoding="utf-8") as fh:
        for i in range(n_queries):
            q = 0.99 * basis_vector(dim, i) + 0.141 * basis_vector(dim, (i + 7) % n_entities)
            q = q / np.linalg.norm(q.astype(np.float64))
            fh.write(
                json.dumps(
                    {
                        "query_id": f"q_{i:03d}",
                        "embedding": [float(x) for x in q],
                        "cultures": list(FIXTURE_CULTURES),
                    },
                    sort_keys=True,
                )
                + "\n"
            )

    with open(gold_path, "w", encoding="utf-8") as fh:
        for i in range(n_queries):
            fh.write(
                json.dumps(
                    {
                        "query_id": f"q_{i:03d}",
                        "culture_proxy": "fixture_cultures",
                        "gold_labels": [FIXTURE_CULTURES[i % 3]],
                    },
                    sort_keys=True,
                )
                + "\n"
            )

    with open(gold_context_path, "w", encoding="utf-8") as fh:
        for i in range(n_queries):
            fh.write(
                json.dumps(
                    {
                        "query_id": f"q_{i:03d}",
                        "context_text": _fixture_article(i),
                        "entity_name": _fixture_lemma(i),
                    },
                    sort_keys=True,
                )
                + "\n"
            )

    distributions = {}
    for i in range(n_entities):
        for c_idx, culture in enumerate(FIXTURE_CULTURES):
            dist = HIGH_DISTRIBUTION if c_idx == i % 3 else LOW_DISTRIBUTION
            distributions[f"{culture}|{_fixture_lemma(i)}"] = list(dist)
    mock_table_path.write_text(
        json.dumps({"distributions": distributions, "nlls": {}}, indent=2, sort_keys=True),
        encoding="utf-8",
    )

    return AttributionFixture(
        manifest_path=manifest,
        queries_path=queries_path,
        gold_path=gold_path,
        gold_context_path=gold_context_path,
        mock_table_path=mock_table_path,
        n_queries=n_queries,
        cultures=FIXTURE_CULTURES,
    )
