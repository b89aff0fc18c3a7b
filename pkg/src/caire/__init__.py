"""Knowledge-grounded cultural relevance scoring for images.

The pipeline links an image embedding to knowledge-base entities by exact
cosine retrieval, builds a textual scoring context from the linked entity,
and asks a pluggable backend for graded 1-5 relevance judgments over a
user-defined set of free-text culture labels. The evaluation harness covers
multi-label precision/recall/F1 with threshold sweeps, Pearson correlation
against human rating means, retrieval accuracy@K, and gold-context ratios.
"""

from .backend import (
    BackendRequest,
    BackendResponse,
    HttpScorerBackend,
    MockScorerBackend,
    ScorerBackend,
    mock_backend,
    query,
    validate_distribution,
)
from .errors import (
    BackendError,
    EngineError,
    KbError,
    LinkError,
    MetricInputError,
    ProtocolError,
    ScoringError,
    TransportError,
    UndefinedCorrelation,
    UnknownEntity,
)
from .index import SearchHit, VectorIndex, build_index, cosine, search_topk
from .kb import (
    EmbeddingMatrix,
    EntityRecord,
    KbManifest,
    KnowledgeBase,
    get_entity,
    load_kb,
    read_embedding_file,
    write_embedding_file,
    write_kb,
)
from .linking import (
    CandidateSet,
    ContextMode,
    IndexBundle,
    LinkResult,
    RankedEntity,
    ScoringContext,
    Strategy,
    UniqueCandidate,
    build_context,
    build_indexes,
    disambiguate,
    get_indexes,
    link_direct_text,
    retrieve_candidates,
)
from .metrics import (
    LikertAggregate,
    MetricReport,
    PrfResult,
    SpecificSetRecord,
    SweepRow,
    UniversalSetRecord,
    aggregate_likert,
    aggregate_vel_accuracy,
    binarize,
    evaluate_specific,
    evaluate_universal,
    evaluate_vel,
    gold_ratio,
    multilabel_prf,
    pearson,
    threshold_sweep,
    vel_accuracy,
)
from .scoring import (
    DEFAULT_RUBRIC,
    AttributionRequest,
    CultureScore,
    DebiasParams,
    NllTriple,
    Rubric,
    RubricEntry,
    ScoreDistribution,
    ScoringConfig,
    ScoringMode,
    attribute_image,
    completion_nll,
    compose_prompt,
    debias,
    loglik_to_score,
    score_numerical,
)

__version__ = "0.1.0"
