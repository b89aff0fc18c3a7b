"""Visual entity linking: candidate retrieval, disambiguation, context building.

A query image embedding is matched against the KB image index; the retrieved
neighborhood is deduplicated into unique candidate entities (a hit row owned
by several entities contributes each of them, so the unique set can exceed
the hit count). A disambiguation strategy then ranks the candidates and the
winner's article text (or the candidate title list) becomes the scoring
context.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import LinkError
from .index import SearchHit, VectorIndex, build_index, cosine, search_topk
from .kb import TEXT_FIELDS, EmbeddingMatrix, KnowledgeBase

DEFAULT_K = 20
DEFAULT_CONTEXT_BUDGET = 12_000
TITLE_CONTEXT_LIMIT = 20


class Strategy(str, enum.Enum):
    # retrieve-then-disambiguate (image hits, then text matching)
    LEMMA_VT = "lemma_vt"
    GLOSS_VT = "gloss_vt"
    FREQUENCY_VT = "frequency_vt"
    # direct image-to-text ranking, no image retrieval step
    LEMMA_T = "lemma_t"
    GLOSS_T = "gloss_t"
    ARTICLE_T = "article_t"


VT_STRATEGIES = (Strategy.LEMMA_VT, Strategy.GLOSS_VT, Strategy.FREQUENCY_VT)

_DIRECT_STRATEGY = {"lemma": Strategy.LEMMA_T, "gloss": Strategy.GLOSS_T, "article": Strategy.ARTICLE_T}


class ContextMode(str, enum.Enum):
    WIKI_FULL = "wiki_full"
    TOP20_TITLES = "top20_titles"
    GOLD_OVERRIDE = "gold_override"
    NONE = "none"


class UniqueCandidate(NamedTuple):
    entity_id: str
    best_similarity: float
    frequency_count: int


class RankedEntity(NamedTuple):
    entity_id: str
    score: float


@dataclass(frozen=True)
class CandidateSet:
    query_id: str
    hits: tuple[SearchHit, ...]
    unique_entities: tuple[UniqueCandidate, ...]


@dataclass(frozen=True)
class LinkResult:
    ranked_entities: tuple[RankedEntity, ...]
    selected: str
    strategy: Strategy
    warnings: tuple[str, ...] = ()


@dataclass(frozen=True)
class ScoringContext:
    mode: ContextMode
    context_text: str
    source_entities: tuple[str, ...]
    truncated: bool = False
    source_field: str | None = None
    warnings: tuple[str, ...] = ()


@dataclass
class IndexBundle:
    """Prebuilt search indexes for one KB: the image index plus one text index
    per field kind, each restricted to the rows carrying that field."""

    image: VectorIndex
    text_fields: dict[str, VectorIndex] = field(default_factory=dict)
    # field -> submatrix row -> entity_id
    text_field_entity: dict[str, tuple[str, ...]] = field(default_factory=dict)


_index_lock = threading.Lock()


def build_indexes(kb: KnowledgeBase) -> IndexBundle:
    bundle = IndexBundle(image=build_index(kb.image_matrix))
    for fname in TEXT_FIELDS:
        pairs = [
            (ent.entity_id, ent.text_embedding_rows[fname])
            for ent in kb.entities.values()
            if fname in ent.text_embedding_rows
        ]
        if not pairs:
            continue
        pairs.sort(key=lambda p: p[1])
        sub = kb.text_matrix.rows[[row for _, row in pairs]]
        owners = tuple((eid,) for eid, _ in pairs)
        matrix = EmbeddingMatrix(kb.text_matrix.dimension, sub, owners)
        bundle.text_fields[fname] = build_index(matrix)
        bundle.text_field_entity[fname] = tuple(eid for eid, _ in pairs)
    return bundle


def get_indexes(kb: KnowledgeBase) -> IndexBundle:
    """Memoized build_indexes; the KB itself stays logically immutable."""
    if kb._index_cache is None:
        with _index_lock:
            if kb._index_cache is None:
                kb._index_cache = build_indexes(kb)
    return kb._index_cache  # type: ignore[return-value]


def retrieve_candidates(
    image_embedding: np.ndarray,
    kb: KnowledgeBase,
    k: int = DEFAULT_K,
    *,
    query_id: str = "",
    indexes: IndexBundle | None = None,
) -> CandidateSet:
    """Top-k image rows for the query, deduplicated into unique entities.

    unique_entities is ordered by first appearance in the ranked hit list;
    frequency_count counts owning hit rows, best_similarity is the max over
    them. One multi-owner hit row contributes every owning entity.
    """
    bundle = indexes or get_indexes(kb)
    hits = search_topk(bundle.image, image_embedding, k)
    if not hits:
        raise LinkError("retrieval returned no hits (empty KB?)")

    order: list[str] = []
    best: dict[str, float] = {}
    freq: dict[str, int] = {}
    for hit in hits:
        for eid in hit.entity_ids:
            if eid not in best:
                order.append(eid)
                best[eid] = hit.similarity
                freq[eid] = 1
            else:
                freq[eid] += 1
                if hit.similarity > best[eid]:
                    best[eid] = hit.similarity
    unique = tuple(UniqueCandidate(eid, best[eid], freq[eid]) for eid in order)
    return CandidateSet(query_id=query_id, hits=tuple(hits), unique_entities=unique)


def _text_row_similarity(
    image_embedding: np.ndarray, kb: KnowledgeBase, entity_id: str, fname: str
) -> float | None:
    ent = kb.entities[entity_id]
    row = ent.text_embedding_rows.get(fname)
    if row is None:
        return None
    return cosine(image_embedding, kb.text_matrix.rows[row])


def disambiguate(
    image_embedding: np.ndarray,
    candidates: CandidateSet,
    kb: KnowledgeBase,
    strategy: Strategy = Strategy.LEMMA_VT,
) -> LinkResult:
    """Rank the unique candidates and select the best entity.

    lemma_vt / gloss_vt score each candidate by image-to-text cosine against
    its lemma or gloss embedding row; candidates lacking that row are skipped
    with a warning. frequency_vt ranks by owning-hit count, ties broken by
    best image similarity, then entity id.
    """
    strategy = Strategy(strategy)
    if strategy not in VT_STRATEGIES:
        raise ValueError(f"disambiguate requires a V-T strategy, got {strategy.value}")
    if not candidates.unique_entities:
        raise LinkError("cannot disambiguate an empty candidate set")

    warnings: list[str] = []
    if strategy is Strategy.FREQUENCY_VT:
        ranked = sorted(
            candidates.unique_entities,
            key=lambda c: (-c.frequency_count, -c.best_similarity, c.entity_id),
        )
        pairs = tuple(RankedEntity(c.entity_id, float(c.frequency_count)) for c in ranked)
    else:
        fname = "lemma" if strategy is Strategy.LEMMA_VT else "gloss"
        scored: list[RankedEntity] = []
        for cand in candidates.unique_entities:
            sim = _text_row_similarity(image_embedding, kb, cand.entity_id, fname)
            if sim is None:
                warnings.append(f"{cand.entity_id}: no {fname} embedding, skipped")
                continue
            scored.append(RankedEntity(cand.entity_id, sim))
        if not scored:
            raise LinkError(f"no candidate has a {fname} embedding row")
        pairs = tuple(sorted(scored, key=lambda r: (-r.score, r.entity_id)))

    return LinkResult(
        ranked_entities=pairs,
        selected=pairs[0].entity_id,
        strategy=strategy,
        warnings=tuple(warnings),
    )


def link_direct_text(
    image_embedding: np.ndarray,
    kb: KnowledgeBase,
    fname: str,
    k: int = DEFAULT_K,
    *,
    indexes: IndexBundle | None = None,
) -> LinkResult:
    """Rank entities by image-to-text similarity against one field's index,
    skipping the image retrieval step entirely."""
    if fname not in TEXT_FIELDS:
        raise ValueError(f"unknown text field {fname!r}, expected one of {TEXT_FIELDS}")
    bundle = indexes or get_indexes(kb)
    if fname not in bundle.text_fields:
        raise LinkError(f"KB has no {fname!r} text embeddings to search")
    hits = search_topk(bundle.text_fields[fname], image_embedding, k)
    entity_of = bundle.text_field_entity[fname]
    pairs = tuple(RankedEntity(entity_of[h.row_index], h.similarity) for h in hits)
    return LinkResult(
        ranked_entities=pairs,
        selected=pairs[0].entity_id,
        strategy=_DIRECT_STRATEGY[fname],
    )


def build_context(
    link: LinkResult | None,
    candidates: CandidateSet | None,
    kb: KnowledgeBase,
    mode: ContextMode = ContextMode.WIKI_FULL,
    budget: int = DEFAULT_CONTEXT_BUDGET,
    *,
    override_text: str | None = None,
) -> ScoringContext:
    """Assemble the text handed to the scoring model.

    wiki_full: article text of the selected entity, falling back to gloss and
    then lemma (fallback recorded); head-truncated to the character budget.
    top20_titles: the candidate lemmas in retrieval order, one per line.
    gold_override: externally supplied text. none: empty context.
    """
    mode = ContextMode(mode)
    if mode is ContextMode.NONE:
        return ScoringContext(mode=mode, context_text="", source_entities=())
    if mode is ContextMode.GOLD_OVERRIDE:
        if override_text is None:
            raise LinkError("gold_override context requires override_text")
        text, truncated = _truncate(override_text, budget)
        return ScoringContext(
            mode=mode, context_text=text, source_entities=(), truncated=truncated
        )
    if mode is ContextMode.TOP20_TITLES:
        if candidates is None or not candidates.unique_entities:
            raise LinkError("top20_titles context requires a candidate set")
        chosen = candidates.unique_entities[:TITLE_CONTEXT_LIMIT]
        lemmas = [kb.entities[c.entity_id].lemma for c in chosen]
        text, truncated = _truncate("\n".join(lemmas), budget)
        return ScoringContext(
            mode=mode,
            context_text=text,
            source_entities=tuple(c.entity_id for c in chosen),
            truncated=truncated,
        )

    # wiki_full
    if link is None:
        raise LinkError("wiki_full context requires a link result")
    ent = kb.entities[link.selected]
    source_field, raw = ent.scoring_text()
    warnings: tuple[str, ...] = ()
    if source_field != "article":
        warnings = (f"{ent.entity_id}: no article text, fell back to {source_field}",)
    text, truncated = _truncate(raw, budget)
    return ScoringContext(
        mode=mode,
        context_text=text,
        source_entities=(ent.entity_id,),
        truncated=truncated,
        source_field=source_field,
        warnings=warnings,
    )


def _truncate(text: str, budget: int) -> tuple[str, bool]:
    if budget is not None and budget > 0 and len(text) > budget:
        return text[:budget], True
    return text, False
