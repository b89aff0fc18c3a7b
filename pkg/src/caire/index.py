"""Exact top-k cosine search over an embedding matrix.

This is a flat index: every query scans all rows. Results are contractually
identical to a brute-force scan, so downstream quality claims never have to
account for an approximation error source. Similarities are computed from the
stored float32 rows with float64 accumulation, chunked to bound temporary
memory; chunking does not change any per-row value.

Ordering is total: descending similarity, ties broken by ascending row index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, KbError
from .kb import EmbeddingMatrix

# rows per float64 conversion chunk; 64Mi floats at dim 128
_CHUNK_ROWS = 65536


@dataclass(frozen=True)
class SearchHit:
    row_index: int
    similarity: float
    entity_ids: tuple[str, ...]


@dataclass(frozen=True)
class VectorIndex:
    matrix: EmbeddingMatrix
    # C-contiguous float32 copy for cache-friendly chunked scans
    _rows: np.ndarray

    @property
    def row_count(self) -> int:
        return int(self._rows.shape[0])

    @property
    def dimension(self) -> int:
        return int(self._rows.shape[1])


def build_index(matrix: EmbeddingMatrix) -> VectorIndex:
    if matrix.row_count == 0:
        raise KbError("cannot index an empty matrix")
    rows = np.ascontiguousarray(matrix.rows, dtype=np.float32)
    rows.flags.writeable = False
    return VectorIndex(matrix=matrix, _rows=rows)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Dot product of two unit vectors, accumulated in float64."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape:
        raise DimensionMismatch(f"vector shapes differ: {u.shape} vs {v.shape}")
    return float(np.dot(u.astype(np.float64), v.astype(np.float64)))


def _similarities(index: VectorIndex, query: np.ndarray) -> np.ndarray:
    q = np.asarray(query, dtype=np.float32)
    if q.ndim != 1 or q.shape[0] != index.dimension:
        raise DimensionMismatch(
            f"query has shape {q.shape}, index dimension is {index.dimension}"
        )
    q64 = q.astype(np.float64)
    n = index.row_count
    out = np.empty(n, dtype=np.float64)
    for start in range(0, n, _CHUNK_ROWS):
        chunk = index._rows[start : start + _CHUNK_ROWS]
        out[start : start + chunk.shape[0]] = chunk.astype(np.float64) @ q64
    return out


def search_topk(index: VectorIndex, query: np.ndarray, k: int) -> list[SearchHit]:
    """Top-k rows by cosine similarity; exact, deterministic, clamped to n.

    Selection uses a partition for k << n; boundary ties are resolved by
    pulling in every row whose similarity equals the k-th value and sorting
    the candidate pool by (-similarity, row_index).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    sims = _similarities(index, query)
    n = sims.shape[0]
    k = min(k, n)

    if k == n:
        candidates = np.arange(n)
    else:
        kth_value = np.partition(sims, n - k)[n - k]
        candidates = np.flatnonzero(sims >= kth_value)
    # stable sort on -sims keeps equal similarities in ascending row order
    order = candidates[np.argsort(-sims[candidates], kind="stable")][:k]

    owner = index.matrix.row_owner
    return [
        SearchHit(row_index=int(r), similarity=float(sims[r]), entity_ids=owner[r])
        for r in order
    ]
