"""Graded 1-5 cultural relevance scoring over user-defined culture labels.

Two scoring paths share one pipeline. The numerical path asks the backend
for a probability distribution over the five score tokens and takes the
argmax (ties resolve toward the lower score, the conservative claim). The
log-likelihood path scores the fixed completion "This text is relevant to
{culture}" against the context, subtracts a scaled and floored per-culture
base rate, and maps the debiased values onto the 1-5 scale.

Each culture in a request is scored independently: no batching of labels
into one prompt, so reordering the label set never changes any score.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .backend import BackendRequest, ScorerBackend, image_fields, query, validate_distribution
from .errors import ScoringError
from .kb import KnowledgeBase
from .linking import (
    DEFAULT_CONTEXT_BUDGET,
    DEFAULT_K,
    ContextMode,
    IndexBundle,
    ScoringContext,
    Strategy,
    build_context,
    disambiguate,
    retrieve_candidates,
)

NLL_COMPLETION_TEMPLATE = "This text is relevant to {culture}"

EMPTY_CONTEXT_PLACEHOLDER = "(no description available)"
UNKNOWN_ENTITY_PLACEHOLDER = "(not identified)"


class ScoringMode(str, enum.Enum):
    NUMERICAL = "numerical"
    LOGLIK = "loglik"


class RubricEntry(NamedTuple):
    score: int
    level: str
    description: str


@dataclass(frozen=True)
class Rubric:
    version: str
    entries: tuple[RubricEntry, ...]

    def __post_init__(self):
        if len(self.entries) != 5 or [e.score for e in self.entries] != [1, 2, 3, 4, 5]:
            raise ValueError("rubric must map scores 1..5 exactly once, in order")


DEFAULT_RUBRIC = Rubric(
    version="rubric/1",
    entries=(
        RubricEntry(
            1,
            "Not Relevant",
            "The content does not connect with or reflect the target culture at all.",
        ),
        RubricEntry(
            2,
            "Minimally Relevant",
            "The content shows slight or superficial connections to the culture but lacks "
            "depth. May include vague references or isolated cultural elements that feel "
            "out of place or underdeveloped.",
        ),
        RubricEntry(
            3,
            "Somewhat Relevant",
            "The content contains identifiable cultural references, but they may feel "
            "generic, inconsistent, or limited in scope. The connection to the culture is "
            "present but could be stronger or more meaningful.",
        ),
        RubricEntry(
            4,
            "Relevant",
            "The content reflects a reasonable understanding of the culture, including "
            "accurate and appropriate references. It integrates cultural aspects well, "
            "though there may still be areas where more depth could be added.",
        ),
        RubricEntry(
            5,
            "Highly Relevant",
            "The content is deeply connected to the target culture, showing an immersive, "
            "accurate, and respectful understanding. Cultural references feel natural, "
            "meaningful, and central to the content.",
        ),
    ),
)


@dataclass(frozen=True)
class ScoreDistribution:
    probs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "probs", validate_distribution(self.probs))

    def argmax_score(self) -> int:
        """Most probable score token; ties break toward the lower score."""
        best = max(self.probs)
        return self.probs.index(best) + 1


@dataclass(frozen=True)
class DebiasParams:
    lambda_: float = 1.0
    floor: float = 0.0

    def __post_init__(self):
        if self.lambda_ < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lambda_}")


class NllTriple(NamedTuple):
    raw_nll: float
    base_nll: float
    debiased: float


@dataclass(frozen=True)
class AttributionRequest:
    query_id: str
    culture_labels: tuple[str, ...]
    context: ScoringContext
    scoring_mode: ScoringMode = ScoringMode.NUMERICAL
    image_reference: bytes | str | None = None
    debias: DebiasParams | None = None
    rubric: Rubric = DEFAULT_RUBRIC
    entity_name: str = UNKNOWN_ENTITY_PLACEHOLDER

    def __post_init__(self):
        if not self.culture_labels or any(not c.strip() for c in self.culture_labels):
            raise ValueError("culture_labels must be non-empty and non-blank")
        if self.scoring_mode is ScoringMode.LOGLIK and self.debias is None:
            raise ValueError("loglik scoring requires debias parameters")


@dataclass(frozen=True)
class CultureScore:
    culture_label: str
    score: int
    raw: ScoreDistribution | NllTriple
    provenance: dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.score not in (1, 2, 3, 4, 5):
            raise ValueError(f"score must be 1..5, got {self.score}")


def compose_prompt(
    context: ScoringContext, culture: str, rubric: Rubric, entity_name: str
) -> str:
    """Deterministic scoring prompt: concept, context, target culture, rubric,
    closed by the single-number output instruction."""
    description = context.context_text.strip() or EMPTY_CONTEXT_PLACEHOLDER
    rubric_lines = "\n".join(
        f"{e.score} -- {e.level}: {e.description}" for e in rubric.entries
    )
    return (
        "We want to assess how relevant an image is to a given culture.\n"
        f"We have identified this concept to be closely associated with the image: {entity_name}.\n"
        f"Here is some detailed information about this concept from Wikipedia: {description}\n"
        "\n"
        f"Using the above context, assign a score from 1 to 5 based on how culturally relevant the image is to {culture}:\n"
        "Think step by step, specifically considering cultural symbols, styles, traditions, "
        f"or any features that align with the culture of {culture}.\n"
        "\n"
        "The final score should be a number between 1 to 5, where the meaning of each score is defined as follows:\n"
        f"{rubric_lines}\n"
        "\n"
        "The output should be a single number ONLY."
    )


def score_numerical(
    backend: ScorerBackend, request: AttributionRequest, culture: str
) -> CultureScore:
    """One culture, numerical path: constrained five-token distribution, argmax."""
    prompt = compose_prompt(request.context, culture, request.rubric, request.entity_name)
    b64, uri = image_fields(request.image_reference)
    response = query(
        backend,
        BackendRequest(
            mode="distribution",
            prompt_text=prompt,
            request_id=f"{request.query_id}|{culture}|dist",
            image_b64=b64,
            image_uri=uri,
        ),
    )
    dist = ScoreDistribution(response.probs)
    return CultureScore(
        culture_label=culture,
        score=dist.argmax_score(),
        raw=dist,
        provenance=_provenance(request, response.backend),
    )


def completion_nll(
    backend: ScorerBackend,
    context_docs: str,
    image_reference: bytes | str | None,
    culture: str,
    *,
    request_id: str = "",
) -> float:
    """Negative log-likelihood of the fixed relevance completion given the
    conditioning context; lower means more relevant. An empty context (and no
    image) yields the per-culture base rate used for debiasing."""
    b64, uri = image_fields(image_reference)
    response = query(
        backend,
        BackendRequest(
            mode="nll",
            prompt_text=context_docs,
            request_id=request_id or f"nll|{culture}",
            image_b64=b64,
            image_uri=uri,
            completion_text=NLL_COMPLETION_TEMPLATE.format(culture=culture),
        ),
    )
    return float(response.nll)


def debias(raw_nll: float, base_nll: float, params: DebiasParams) -> float:
    """raw - lambda * max(base, floor): subtracts the scaled per-culture base
    rate, capped from below so vanishing base rates cannot dominate."""
    if not (math.isfinite(raw_nll) and math.isfinite(base_nll)):
        raise ValueError(f"debias requires finite inputs, got {raw_nll}, {base_nll}")
    return raw_nll - params.lambda_ * max(base_nll, params.floor)


def loglik_to_score(debiased_values: dict[str, float]) -> dict[str, int]:
    """Quantize debiased NLLs onto the 1-5 scale across one culture set.

    Relevance is -NLL, min-max normalized over the set and bucketed into five
    equal-width bins. A single culture, or a set with no spread, maps to 3:
    the values carry ranking information only within a set, so a degenerate
    set is deliberately neutral.
    """
    if not debiased_values:
        raise ValueError("at least one culture required")
    relevance = {c: -v for c, v in debiased_values.items()}
    lo = min(relevance.values())
    hi = max(relevance.values())
    if hi == lo:
        return {c: 3 for c in debiased_values}
    out: dict[str, int] = {}
    for culture, rel in relevance.items():
        x = (rel - lo) / (hi - lo)
        out[culture] = 1 + min(4, int(x * 5))
    return out


def _provenance(request: AttributionRequest, backend_id: str) -> dict[str, object]:
    prov: dict[str, object] = {
        "context_mode": request.context.mode.value,
        "backend": backend_id,
        "scoring_mode": request.scoring_mode.value,
    }
    if request.context.source_entities:
        prov["source_entities"] = list(request.context.source_entities)
    if request.context.source_field:
        prov["context_source_field"] = request.context.source_field
    if request.context.truncated:
        prov["context_truncated"] = True
    if request.context.warnings:
        prov["warnings"] = list(request.context.warnings)
    return prov


@dataclass(frozen=True)
class ScoringConfig:
    k: int = DEFAULT_K
    strategy: Strategy = Strategy.LEMMA_VT
    context_mode: ContextMode = ContextMode.WIKI_FULL
    context_budget: int = DEFAULT_CONTEXT_BUDGET
    scoring_mode: ScoringMode = ScoringMode.NUMERICAL
    debias: DebiasParams = field(default_factory=DebiasParams)
    rubric: Rubric = DEFAULT_RUBRIC
    parallelism: int = 1


def attribute_image(
    kb: KnowledgeBase,
    indexes: IndexBundle,
    backend: ScorerBackend,
    image_embedding: np.ndarray | None,
    image_reference: bytes | str | None,
    cultures: list[str],
    config: ScoringConfig,
    *,
    query_id: str = "",
    gold_context: str | None = None,
    gold_entity_name: str | None = None,
) -> list[CultureScore]:
    """Full attribution for one image: link to the KB, build context, score
    every culture label independently. Output order follows the input labels.

    gold_override and none context modes skip the linking stages entirely;
    gold_override takes its context text from ``gold_context``.
    """
    if not cultures:
        raise ScoringError("setup", "culture label list is empty")

    link = None
    candidates = None
    entity_name = gold_entity_name or UNKNOWN_ENTITY_PLACEHOLDER
    mode = ContextMode(config.context_mode)

    if mode in (ContextMode.WIKI_FULL, ContextMode.TOP20_TITLES):
        if image_embedding is None:
            raise ScoringError("retrieve", "context mode requires an image embedding")
        try:
            candidates = retrieve_candidates(
                image_embedding, kb, config.k, query_id=query_id, indexes=indexes
            )
        except Exception as exc:
            raise ScoringError("retrieve", str(exc)) from exc
        try:
            link = disambiguate(image_embedding, candidates, kb, config.strategy)
        except Exception as exc:
            raise ScoringError("disambiguate", str(exc)) from exc
        entity_name = kb.entities[link.selected].lemma

    try:
        context = build_context(
            link,
            candidates,
            kb,
            mode=mode,
            budget=config.context_budget,
            override_text=gold_context,
        )
    except Exception as exc:
        raise ScoringError("context", str(exc)) from exc

    request = AttributionRequest(
        query_id=query_id,
        culture_labels=tuple(cultures),
        context=context,
        scoring_mode=ScoringMode(config.scoring_mode),
        image_reference=image_reference,
        debias=config.debias,
        rubric=config.rubric,
        entity_name=entity_name,
    )

    extra: dict[str, object] = {}
    if link is not None:
        extra["strategy"] = link.strategy.value
        extra["selected_entity"] = link.selected
        if link.warnings:
            extra["link_warnings"] = list(link.warnings)

    try:
        if request.scoring_mode is ScoringMode.NUMERICAL:
            scores = _score_all_numerical(backend, request, config.parallelism)
        else:
            scores = _score_all_loglik(backend, request)
    except ScoringError:
        raise
    except Exception as exc:
        raise ScoringError("score", str(exc)) from exc

    for cs in scores:
        cs.provenance.update(extra)
    return scores


def _score_all_numerical(
    backend: ScorerBackend, request: AttributionRequest, parallelism: int
) -> list[CultureScore]:
    if parallelism > 1 and len(request.culture_labels) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            return list(
                pool.map(lambda c: score_numerical(backend, request, c), request.culture_labels)
            )
    return [score_numerical(backend, request, c) for c in request.culture_labels]


def _score_all_loglik(backend: ScorerBackend, request: AttributionRequest) -> list[CultureScore]:
    params = request.debias
    assert params is not None  # enforced by AttributionRequest
    triples: dict[str, NllTriple] = {}
    for culture in request.culture_labels:
        raw = completion_nll(
            backend,
            request.context.context_text,
            request.image_reference,
            culture,
            request_id=f"{request.query_id}|{culture}|nll",
        )
        base = completion_nll(
            backend,
            "",
            None,
            culture,
            request_id=f"{request.query_id}|{culture}|base",
        )
        triples[culture] = NllTriple(raw, base, debias(raw, base, params))

    buckets = loglik_to_score({c: t.debiased for c, t in triples.items()})
    return [
        CultureScore(
            culture_label=culture,
            score=buckets[culture],
            raw=triples[culture],
            provenance=_provenance(request, getattr(backend, "identity", "?")),
        )
        for culture in request.culture_labels
    ]
