"""Evaluation harness: binarization, multi-label P/R/F1, threshold sweeps,
Pearson correlation against human Likert means, retrieval accuracy@K, and the
gold-context ratio.

Two gold formats are supported as line-delimited records. The specific set
carries binary multi-label relevance (``query_id, culture_proxy,
gold_labels``); the universal set carries per-country human rating means
(``query_id, concept, split, country_means``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

from .errors import MetricInputError, UndefinedCorrelation

SCORE_RANGE = (1, 2, 3, 4, 5)
DEFAULT_THRESHOLDS = (2, 3, 4, 5)
MAIN_THRESHOLD = 4  # scores 4-5 count as relevant in the headline setting
DEFAULT_ACCURACY_KS = (1, 5, 10, 20)


def binarize(score: int, threshold: int = MAIN_THRESHOLD) -> bool:
    """True iff score >= threshold (threshold 4 keeps only relevant / highly
    relevant, the headline binarization)."""
    if score not in SCORE_RANGE:
        raise MetricInputError(f"score must be in 1..5, got {score}")
    if threshold not in (2, 3, 4, 5):
        raise MetricInputError(f"threshold must be in 2..5, got {threshold}")
    return score >= threshold


@dataclass(frozen=True)
class PrfResult:
    precision: float
    recall: float
    f1: float
    true_positives: int
    false_positives: int
    false_negatives: int
    zero_division_flags: tuple[str, ...] = ()

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.precision, self.recall, self.f1)


def _safe_ratio(num: int, den: int, flag: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(flag)
        return 0.0
    return num / den


def multilabel_prf(
    predictions: Mapping[tuple[str, str], bool],
    golds: Mapping[tuple[str, str], bool],
    *,
    average: str = "micro",
) -> PrfResult:
    """Precision/recall/F1 over (query, label) pairs.

    Micro averaging pools one confusion matrix across every pair; macro
    averages per-label scores (sensitivity analysis only). Key sets must be
    identical. Zero denominators yield 0.0 with an explicit flag.
    """
    if predictions.keys() != golds.keys():
        missing = set(golds) - set(predictions)
        extra = set(predictions) - set(golds)
        raise MetricInputError(
            f"prediction/gold key sets differ (missing={len(missing)}, extra={len(extra)})"
        )
    if average == "micro":
        return _micro_prf(predictions, golds)
    if average == "macro":
        return _macro_prf(predictions, golds)
    raise MetricInputError(f"unknown averaging {average!r}")


def _micro_prf(predictions, golds) -> PrfResult:
    tp = fp = fn = 0
    for key, pred in predictions.items():
        gold = golds[key]
        if pred and gold:
            tp += 1
        elif pred and not gold:
            fp += 1
        elif gold:
            fn += 1
    flags: list[str] = []
    precision = _safe_ratio(tp, tp + fp, "no_positive_predictions", flags)
    recall = _safe_ratio(tp, tp + fn, "no_positive_golds", flags)
    f1 = 0.0
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        flags.append("f1_undefined")
    return PrfResult(precision, recall, f1, tp, fp, fn, tuple(flags))


def _macro_prf(predictions, golds) -> PrfResult:
    labels = sorted({label for _, label in predictions})
    per_label = []
    tp_total = fp_total = fn_total = 0
    for label in labels:
        keys = [k for k in predictions if k[1] == label]
        sub = _micro_prf({k: predictions[k] for k in keys}, {k: golds[k] for k in keys})
        per_label.append(sub)
        tp_total += sub.true_positives
        fp_total += sub.false_positives
        fn_total += sub.false_negatives
    n = len(per_label)
    return PrfResult(
        sum(r.precision for r in per_label) / n,
        sum(r.recall for r in per_label) / n,
        sum(r.f1 for r in per_label) / n,
        tp_total,
        fp_total,
        fn_total,
        tuple(sorted({f for r in per_label for f in r.zero_division_flags})),
    )


class SweepRow(NamedTuple):
    threshold: int
    precision: float
    recall: float
    f1: float
    positive_predictions: int


def threshold_sweep(
    scores: Mapping[tuple[str, str], int],
    golds: Mapping[tuple[str, str], bool],
    thresholds: Sequence[int] = DEFAULT_THRESHOLDS,
) -> list[SweepRow]:
    """Binary classification at each threshold; positive-prediction counts are
    non-increasing as the threshold rises."""
    rows = []
    for threshold in thresholds:
        preds = {key: binarize(score, threshold) for key, score in scores.items()}
        result = multilabel_prf(preds, golds)
        rows.append(
            SweepRow(
                threshold,
                result.precision,
                result.recall,
                result.f1,
                sum(preds.values()),
            )
        )
    return rows


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """Sample Pearson correlation. Undefined (zero variance) inputs raise
    UndefinedCorrelation instead of silently returning 0."""
    if len(x) != len(y):
        raise MetricInputError(f"length mismatch: {len(x)} vs {len(y)}")
    n = len(x)
    if n < 3:
        raise MetricInputError(f"need at least 3 points, got {n}")
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    dx = [xi - mx for xi in x]
    dy = [yi - my for yi in y]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelation("an input has zero variance; r is undefined")
    sxy = math.fsum(a * b for a, b in zip(dx, dy))
    return sxy / math.sqrt(sxx * syy)


@dataclass(frozen=True)
class LikertAggregate:
    means: dict[str, float]
    annotator_counts: dict[str, int]


def aggregate_likert(ratings: Iterable[tuple[str, str, int]]) -> LikertAggregate:
    """Arithmetic mean of 1-5 ratings per country, with annotator counts."""
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    empty = True
    for _annotator, country, score in ratings:
        empty = False
        if score not in SCORE_RANGE:
            raise MetricInputError(f"rating must be in 1..5, got {score}")
        sums[country] = sums.get(country, 0.0) + score
        counts[country] = counts.get(country, 0) + 1
    if empty:
        raise MetricInputError("no ratings to aggregate")
    return LikertAggregate(
        means={c: sums[c] / counts[c] for c in sums}, annotator_counts=counts
    )


def vel_accuracy(
    ranked: Sequence[str], gold: str, ks: Sequence[int] = DEFAULT_ACCURACY_KS
) -> dict[int, bool]:
    """hit@k per threshold: is the gold entity within the first k ranked ids?"""
    if not ranked:
        raise MetricInputError("empty ranking")
    if len(set(ranked)) != len(ranked):
        raise MetricInputError("ranking contains duplicate entity ids")
    return {k: gold in ranked[:k] for k in ks}


def aggregate_vel_accuracy(
    items: Iterable[tuple[Sequence[str], str]], ks: Sequence[int] = DEFAULT_ACCURACY_KS
) -> dict[int, float]:
    hits = {k: 0 for k in ks}
    total = 0
    for ranked, gold in items:
        total += 1
        for k, hit in vel_accuracy(ranked, gold, ks).items():
            hits[k] += int(hit)
    if total == 0:
        raise MetricInputError("no queries to aggregate")
    return {k: hits[k] / total for k in ks}


def gold_ratio(system_f1: float, gold_context_f1: float) -> float:
    """Percentage of the gold-context F1 retained by the retrieval pipeline."""
    if gold_context_f1 <= 0:
        raise MetricInputError("gold-context F1 must be positive")
    return 100.0 * system_f1 / gold_context_f1


# ---------------------------------------------------------------------------
# evaluation record types and file formats


@dataclass(frozen=True)
class SpecificSetRecord:
    query_id: str
    culture_proxy: str
    gold_labels: frozenset[str]

    def __post_init__(self):
        if not self.gold_labels:
            raise MetricInputError(f"{self.query_id}: gold_labels may not be empty")


@dataclass(frozen=True)
class UniversalSetRecord:
    query_id: str
    concept: str
    country_means: dict[str, float]
    split: str = "natural"

    def __post_init__(self):
        if not self.country_means:
            raise MetricInputError(f"{self.query_id}: needs at least one country mean")
        for country, mean in self.country_means.items():
            if not 1.0 <= mean <= 5.0:
                raise MetricInputError(
                    f"{self.query_id}/{country}: mean {mean} outside [1, 5]"
                )
        if self.split not in ("generated", "natural"):
            raise MetricInputError(f"{self.query_id}: unknown split {self.split!r}")


def _iter_jsonl(path: Path) -> Iterable[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise MetricInputError(f"{path}:{lineno}: invalid JSON ({exc})") from exc


def read_specific_gold(path: str | Path) -> list[SpecificSetRecord]:
    records = []
    for obj in _iter_jsonl(Path(path)):
        records.append(
            SpecificSetRecord(
                query_id=str(obj["query_id"]),
                culture_proxy=str(obj.get("culture_proxy", "")),
                gold_labels=frozenset(obj["gold_labels"]),
            )
        )
    return records


def read_universal_gold(path: str | Path) -> list[UniversalSetRecord]:
    records = []
    for obj in _iter_jsonl(Path(path)):
        records.append(
            UniversalSetRecord(
                query_id=str(obj["query_id"]),
                concept=str(obj.get("concept", "")),
                country_means={k: float(v) for k, v in obj["country_means"].items()},
                split=str(obj.get("split", "natural")),
            )
        )
    return records


def read_score_records(path: str | Path) -> dict[tuple[str, str], int]:
    """Predicted (query, culture) -> score from an attribution output file;
    non-score records (config echo, errors) are skipped."""
    scores: dict[tuple[str, str], int] = {}
    for obj in _iter_jsonl(Path(path)):
        if obj.get("type", "score") != "score":
            continue
        key = (str(obj["query_id"]), str(obj["culture"]))
        if key in scores:
            raise MetricInputError(f"duplicate score record for {key}")
        scores[key] = int(obj["score"])
    if not scores:
        raise MetricInputError(f"{path}: no score records found")
    return scores


def read_link_records(path: str | Path) -> list[tuple[str, list[str]]]:
    """(query_id, ranked entity ids) pairs from a link output file."""
    out = []
    for obj in _iter_jsonl(Path(path)):
        if obj.get("type", "link") != "link":
            continue
        ranked = [str(e["entity_id"]) for e in obj["ranked"]]
        out.append((str(obj["query_id"]), ranked))
    if not out:
        raise MetricInputError(f"{path}: no link records found")
    return out


# ---------------------------------------------------------------------------
# report assembly


@dataclass(frozen=True)
class MetricReport:
    counts: dict[str, int] = field(default_factory=dict)
    thresholds: tuple[SweepRow, ...] = ()
    pearson_by_country: dict[str, float] = field(default_factory=dict)
    pearson_average: float | None = None
    pearson_weighted_average: float | None = None
    accuracy_at: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        for row in self.thresholds:
            for rate in (row.precision, row.recall, row.f1):
                if not 0.0 <= rate <= 1.0:
                    raise MetricInputError(f"rate {rate} outside [0, 1]")
        for r in self.pearson_by_country.values():
            if not -1.0 - 1e-12 <= r <= 1.0 + 1e-12:
                raise MetricInputError(f"correlation {r} outside [-1, 1]")
        for rate in self.accuracy_at.values():
            if not 0.0 <= rate <= 1.0:
                raise MetricInputError(f"accuracy {rate} outside [0, 1]")

    def to_record(self) -> dict:
        return {
            "type": "report",
            "counts": self.counts,
            "thresholds": [row._asdict() for row in self.thresholds],
            "pearson_by_country": self.pearson_by_country,
            "pearson_average": self.pearson_average,
            "pearson_weighted_average": self.pearson_weighted_average,
            "accuracy_at": {str(k): v for k, v in self.accuracy_at.items()},
        }


def evaluate_specific(
    scores: Mapping[tuple[str, str], int],
    gold_records: Sequence[SpecificSetRecord],
    thresholds: Sequence[int] = DEFAULT_THRESHOLDS,
) -> MetricReport:
    """Threshold sweep of micro P/R/F1 against binary multi-label golds.

    The (query, label) universe is the prediction key set; every predicted
    query needs a gold record and every gold label must have been scored.
    """
    gold_by_query = {rec.query_id: rec for rec in gold_records}
    golds: dict[tuple[str, str], bool] = {}
    labels_by_query: dict[str, set[str]] = {}
    for query_id, label in scores:
        labels_by_query.setdefault(query_id, set()).add(label)
        if query_id not in gold_by_query:
            raise MetricInputError(f"no gold record for query {query_id!r}")
        golds[(query_id, label)] = label in gold_by_query[query_id].gold_labels
    for query_id, labels in labels_by_query.items():
        unscored = gold_by_query[query_id].gold_labels - labels
        if unscored:
            raise MetricInputError(
                f"gold labels never scored for {query_id!r}: {sorted(unscored)}"
            )
    rows = threshold_sweep(scores, golds, thresholds)
    return MetricReport(
        counts={
            "queries": len(labels_by_query),
            "pairs": len(scores),
            "gold_positives": sum(golds.values()),
        },
        thresholds=tuple(rows),
    )


def evaluate_universal(
    scores: Mapping[tuple[str, str], int],
    gold_records: Sequence[UniversalSetRecord],
) -> MetricReport:
    """Per-country Pearson r between predicted scores and human rating means,
    plus unweighted and query-count-weighted country averages.

    The weighting of the cross-country average is reported both ways because
    the headline average can be computed per-country-equal or per-rating-mass;
    both are emitted, explicitly labeled.
    """
    by_country: dict[str, list[tuple[float, float]]] = {}
    for rec in gold_records:
        for country, human_mean in rec.country_means.items():
            key = (rec.query_id, country)
            if key in scores:
                by_country.setdefault(country, []).append(
                    (human_mean, float(scores[key]))
                )
    if not by_country:
        raise MetricInputError("no overlapping (query, country) pairs to correlate")
    correlations: dict[str, float] = {}
    weights: dict[str, int] = {}
    for country, pairs in sorted(by_country.items()):
        try:
            correlations[country] = pearson(
                [h for h, _ in pairs], [p for _, p in pairs]
            )
        except UndefinedCorrelation as exc:
            raise UndefinedCorrelation(f"country {country!r}: {exc}") from exc
        weights[country] = len(pairs)
    unweighted = sum(correlations.values()) / len(correlations)
    total_weight = sum(weights.values())
    weighted = sum(correlations[c] * weights[c] for c in correlations) / total_weight
    return MetricReport(
        counts={"countries": len(correlations), "pairs": total_weight},
        pearson_by_country=correlations,
        pearson_average=unweighted,
        pearson_weighted_average=weighted,
    )


def evaluate_vel(
    items: Sequence[tuple[Sequence[str], str]], ks: Sequence[int] = DEFAULT_ACCURACY_KS
) -> MetricReport:
    rates = aggregate_vel_accuracy(items, ks)
    return MetricReport(counts={"queries": len(items)}, accuracy_at=rates)
