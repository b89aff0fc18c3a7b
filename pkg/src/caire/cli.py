"""Operator entry point: index building, linking, attribution, evaluation.

Every command reads/writes line-delimited JSON records and prints a short
human-readable table to stdout. Output files start with a config echo record
that fully determines the run; identical inputs (with a mock backend)
reproduce outputs byte for byte. Exit codes: 0 success, 2 some queries
failed, 1 fatal error.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import metrics
from .backend import HttpScorerBackend, MockScorerBackend, ScorerBackend
from .errors import EngineError, ScoringError
from .kb import KnowledgeBase, load_kb, read_embedding_file
from .linking import (
    ContextMode,
    Strategy,
    VT_STRATEGIES,
    build_context,
    build_indexes,
    disambiguate,
    link_direct_text,
    retrieve_candidates,
)
from .scoring import (
    CultureScore,
    DebiasParams,
    NllTriple,
    ScoreDistribution,
    ScoringConfig,
    ScoringMode,
    attribute_image,
)

BACKEND_TOKEN_ENV = "CAIRE_BACKEND_TOKEN"

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2


def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True) + "\n"


def _fatal(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(EXIT_FATAL)


def _load_kb_or_die(kb_path: str) -> KnowledgeBase:
    path = Path(kb_path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        return load_kb(path)
    except EngineError as exc:
        _fatal(str(exc))


def parse_backend_spec(spec: str, token: str | None) -> ScorerBackend:
    """``mock:<seed>[,<table.json>]`` or an http(s) endpoint base URL."""
    if spec.startswith("mock:"):
        rest = spec[len("mock:") :]
        table_path = None
        if "," in rest:
            seed_text, table_path = rest.split(",", 1)
        else:
            seed_text = rest
        try:
            seed = int(seed_text)
        except ValueError:
            raise click.BadParameter(f"mock seed must be an integer, got {seed_text!r}")
        distributions: dict = {}
        nlls: dict = {}
        if table_path:
            table = json.loads(Path(table_path).read_text(encoding="utf-8"))
            distributions = table.get("distributions", {})
            nlls = table.get("nlls", {})
        return MockScorerBackend(seed, distributions, nlls)
    if spec.startswith("http://") or spec.startswith("https://"):
        return HttpScorerBackend(spec, token=token)
    raise click.BadParameter(f"backend must be mock:<seed>[,<table>] or a URL, got {spec!r}")


def _read_queries(path: str) -> list[dict]:
    queries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                queries.append(json.loads(line))
            except json.JSONDecodeError as exc:
                _fatal(f"{path}:{lineno}: invalid JSON ({exc})")
    return queries


def _query_embedding(obj: dict, cache: dict) -> np.ndarray:
    if "embedding" in obj:
        return np.asarray(obj["embedding"], dtype=np.float32)
    if "embedding_file" in obj:
        fpath = obj["embedding_file"]
        if fpath not in cache:
            cache[fpath] = read_embedding_file(Path(fpath))
        return cache[fpath][int(obj["row"])]
    raise EngineError(f"query {obj.get('query_id', '?')!r} has no embedding")


def _parse_context_flag(value: str) -> tuple[ContextMode, dict[str, dict]]:
    """--context wiki_full|top20_titles|none|gold:<path>; gold files map
    query_id -> {context_text, entity_name}."""
    if value.startswith("gold:"):
        path = value[len("gold:") :]
        table: dict[str, dict] = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                table[str(obj["query_id"])] = obj
        return ContextMode.GOLD_OVERRIDE, table
    try:
        return ContextMode(value), {}
    except ValueError:
        raise click.BadParameter(
            f"--context must be wiki_full, top20_titles, none, or gold:<path>; got {value!r}"
        )


def _score_record(query_id: str, cs: CultureScore) -> dict:
    if isinstance(cs.raw, ScoreDistribution):
        raw: dict = {"probs": list(cs.raw.probs)}
    elif isinstance(cs.raw, NllTriple):
        raw = {
            "raw_nll": cs.raw.raw_nll,
            "base_nll": cs.raw.base_nll,
            "debiased": cs.raw.debiased,
        }
    else:
        raw = {}
    return {
        "type": "score",
        "query_id": query_id,
        "culture": cs.culture_label,
        "score": cs.score,
        "raw": raw,
        "provenance": cs.provenance,
    }


@click.group()
def main():
    """Knowledge-grounded cultural relevance scoring for images."""


@main.command("build-index")
@click.option("--kb", "kb_path", required=True, help="KB directory or manifest path.")
@click.option("--out", "out_path", default=None, help="Index manifest output path.")
def cmd_build_index(kb_path: str, out_path: str | None):
    """Validate a KB and write its index manifest (counts + file checksums)."""
    kb = _load_kb_or_die(kb_path)
    bundle = build_indexes(kb)
    manifest = {
        "type": "index-manifest",
        "version": kb.manifest.version,
        "dimension": kb.manifest.dimension,
        "counts": {
            "entities": len(kb.entities),
            "image_rows": kb.image_matrix.row_count,
            "text_rows": kb.text_matrix.row_count,
        },
        "text_fields": {
            name: index.row_count for name, index in sorted(bundle.text_fields.items())
        },
        "source_checksums": {
            name: info["sha256"] for name, info in sorted(kb.manifest.files.items())
        },
    }
    out = Path(out_path) if out_path else kb.root / "index-manifest.json"
    out.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    click.echo(
        f"indexed {manifest['counts']['image_rows']} image rows, "
        f"{manifest['counts']['text_rows']} text rows "
        f"({manifest['counts']['entities']} entities, dim {manifest['dimension']})"
    )
    click.echo(f"wrote {out}")


@main.command("link")
@click.option("--kb", "kb_path", required=True)
@click.option("--queries", "queries_path", required=True, help="JSONL of query embeddings.")
@click.option("--k", default=20, show_default=True)
@click.option(
    "--strategy",
    default=Strategy.LEMMA_VT.value,
    show_default=True,
    type=click.Choice([s.value for s in Strategy]),
)
@click.option("--context", "context_flag", default=ContextMode.WIKI_FULL.value, show_default=True)
@click.option("--budget", default=12_000, show_default=True, help="Context character budget.")
@click.option("--out", "out_path", required=True)
def cmd_link(kb_path, queries_path, k, strategy, context_flag, budget, out_path):
    """Link each query embedding to KB entities; one record per query."""
    kb = _load_kb_or_die(kb_path)
    indexes = build_indexes(kb)
    strategy = Strategy(strategy)
    mode, gold_table = _parse_context_flag(context_flag)
    queries = _read_queries(queries_path)
    cache: dict = {}
    failures = 0

    with open(out_path, "w", encoding="utf-8") as out:
        out.write(
            _dump(
                {
                    "type": "config",
                    "command": "link",
                    "kb": kb_path,
                    "queries": queries_path,
                    "k": k,
                    "strategy": strategy.value,
                    "context": context_flag,
                    "budget": budget,
                }
            )
        )
        for obj in queries:
            query_id = str(obj.get("query_id", ""))
            try:
                embedding = _query_embedding(obj, cache)
                if strategy in VT_STRATEGIES:
                    candidates = retrieve_candidates(
                        embedding, kb, k, query_id=query_id, indexes=indexes
                    )
                    link = disambiguate(embedding, candidates, kb, strategy)
                else:
                    field = strategy.value.removesuffix("_t")
                    candidates = None
                    link = link_direct_text(embedding, kb, field, k, indexes=indexes)
                record = {
                    "type": "link",
                    "query_id": query_id,
                    "strategy": link.strategy.value,
                    "selected": link.selected,
                    "ranked": [
                        {"entity_id": eid, "score": score}
                        for eid, score in link.ranked_entities
                    ],
                    "context_mode": mode.value,
                }
                if link.warnings:
                    record["warnings"] = list(link.warnings)
                if mode in (ContextMode.WIKI_FULL, ContextMode.TOP20_TITLES):
                    ctx = build_context(link, candidates, kb, mode=mode, budget=budget)
                    record["context"] = {
                        "source_entities": list(ctx.source_entities),
                        "source_field": ctx.source_field,
                        "truncated": ctx.truncated,
                        "warnings": list(ctx.warnings),
                    }
                out.write(_dump(record))
                top = link.ranked_entities[0]
                click.echo(f"{query_id}: {link.selected} (score {top.score:.4f})")
            except EngineError as exc:
                failures += 1
                out.write(
                    _dump(
                        {"type": "error", "query_id": query_id, "message": str(exc)}
                    )
                )
                click.echo(f"{query_id}: FAILED ({exc})", err=True)
    if failures:
        sys.exit(EXIT_PARTIAL)


@main.command("attribute")
@click.option("--kb", "kb_path", default=None, help="Required unless --context is gold/none.")
@click.option("--queries", "queries_path", required=True)
@click.option("--cultures", "cultures_flag", default=None, help="Comma-separated default label set.")
@click.option("--k", default=20, show_default=True)
@click.option(
    "--strategy",
    default=Strategy.LEMMA_VT.value,
    show_default=True,
    type=click.Choice([s.value for s in VT_STRATEGIES]),
)
@click.option("--context", "context_flag", default=ContextMode.WIKI_FULL.value, show_default=True)
@click.option(
    "--mode",
    "scoring_mode",
    default=ScoringMode.NUMERICAL.value,
    show_default=True,
    type=click.Choice([m.value for m in ScoringMode]),
)
@click.option("--backend", "backend_spec", required=True, help="mock:<seed>[,<table>] or URL.")
@click.option("--lambda", "lambda_", default=1.0, show_default=True, help="Debias scale.")
@click.option("--floor", default=0.0, show_default=True, help="Debias base-rate floor.")
@click.option("--budget", default=12_000, show_default=True)
@click.option("--parallel", default=1, show_default=True, help="Per-culture request parallelism.")
@click.option("--out", "out_path", required=True)
def cmd_attribute(
    kb_path,
    queries_path,
    cultures_flag,
    k,
    strategy,
    context_flag,
    scoring_mode,
    backend_spec,
    lambda_,
    floor,
    budget,
    parallel,
    out_path,
):
    """Score each (image, culture) pair; one score record per pair."""
    mode, gold_table = _parse_context_flag(context_flag)
    needs_kb = mode in (ContextMode.WIKI_FULL, ContextMode.TOP20_TITLES)
    if needs_kb and not kb_path:
        _fatal(f"--context {mode.value} requires --kb")
    kb = _load_kb_or_die(kb_path) if kb_path else None
    indexes = build_indexes(kb) if kb is not None else None

    token = os.environ.get(BACKEND_TOKEN_ENV)
    try:
        backend = parse_backend_spec(backend_spec, token)
    except (OSError, json.JSONDecodeError) as exc:
        _fatal(f"cannot load backend table: {exc}")

    config = ScoringConfig(
        k=k,
        strategy=Strategy(strategy),
        context_mode=mode,
        context_budget=budget,
        scoring_mode=ScoringMode(scoring_mode),
        debias=DebiasParams(lambda_=lambda_, floor=floor),
        parallelism=parallel,
    )
    default_cultures = (
        [c.strip() for c in cultures_flag.split(",") if c.strip()] if cultures_flag else []
    )
    queries = _read_queries(queries_path)
    cache: dict = {}
    failures = 0

    with open(out_path, "w", encoding="utf-8") as out:
        out.write(
            _dump(
                {
                    "type": "config",
                    "command": "attribute",
                    "kb": kb_path,
                    "queries": queries_path,
                    "cultures": default_cultures,
                    "k": k,
                    "strategy": config.strategy.value,
                    "context": context_flag,
                    "mode": config.scoring_mode.value,
                    "backend": backend_spec,
                    "lambda": lambda_,
                    "floor": floor,
                    "budget": budget,
                    "parallel": parallel,
                }
            )
        )
        for obj in queries:
            query_id = str(obj.get("query_id", ""))
            cultures = [str(c) for c in obj.get("cultures", default_cultures)]
            try:
                embedding = None
                if needs_kb:
                    embedding = _query_embedding(obj, cache)
                gold_context = gold_entity = None
                if mode is ContextMode.GOLD_OVERRIDE:
                    if query_id not in gold_table:
                        raise ScoringError("context", f"no gold context for {query_id!r}")
                    gold_context = str(gold_table[query_id].get("context_text", ""))
                    gold_entity = gold_table[query_id].get("entity_name")
                scores = attribute_image(
                    kb,
                    indexes,
                    backend,
                    embedding,
                    obj.get("image_uri"),
                    cultures,
                    config,
                    query_id=query_id,
                    gold_context=gold_context,
                    gold_entity_name=gold_entity,
                )
                for cs in scores:
                    out.write(_dump(_score_record(query_id, cs)))
                summary = ", ".join(f"{cs.culture_label}={cs.score}" for cs in scores)
                click.echo(f"{query_id}: {summary}")
            except EngineError as exc:
                failures += 1
                stage = getattr(exc, "stage", "run")
                out.write(
                    _dump(
                        {
                            "type": "error",
                            "query_id": query_id,
                            "stage": stage,
                            "message": str(exc),
                        }
                    )
                )
                click.echo(f"{query_id}: FAILED at {stage} ({exc})", err=True)
    if failures:
        sys.exit(EXIT_PARTIAL)


def _print_report(report: metrics.MetricReport) -> None:
    if report.thresholds:
        click.echo(f"{'thr':>3}  {'precision':>9}  {'recall':>9}  {'f1':>9}  {'pos':>5}")
        for row in report.thresholds:
            click.echo(
                f"{row.threshold:>3}  {row.precision:>9.4f}  {row.recall:>9.4f}  "
                f"{row.f1:>9.4f}  {row.positive_predictions:>5}"
            )
    if report.pearson_by_country:
        click.echo(f"{'country':<16} {'pearson_r':>9}")
        for country, r in sorted(report.pearson_by_country.items()):
            click.echo(f"{country:<16} {r:>9.4f}")
        click.echo(f"{'average':<16} {report.pearson_average:>9.4f}")
        click.echo(f"{'weighted_avg':<16} {report.pearson_weighted_average:>9.4f}")
    if report.accuracy_at:
        for k_value, rate in sorted(report.accuracy_at.items()):
            click.echo(f"accuracy@{k_value}: {rate:.4f}")
    click.echo("counts: " + json.dumps(report.counts, sort_keys=True))


@main.command("evaluate")
@click.option("--predictions", "pred_path", required=True, help="Attribution scores file.")
@click.option("--gold", "gold_path", required=True)
@click.option(
    "--gold-format",
    default="specific",
    show_default=True,
    type=click.Choice(["specific", "universal"]),
)
@click.option(
    "--threshold",
    "thresholds",
    multiple=True,
    type=int,
    help="Binarization threshold(s); default sweeps 2-5.",
)
@click.option("--macro", is_flag=True, help="Also print macro-averaged P/R/F1 at each threshold.")
@click.option("--out", "out_path", default=None)
def cmd_evaluate(pred_path, gold_path, gold_format, thresholds, macro, out_path):
    """Score predictions against a gold file; prints a table, optionally
    writes the machine-readable report."""
    try:
        scores = metrics.read_score_records(pred_path)
        if gold_format == "specific":
            golds = metrics.read_specific_gold(gold_path)
            sweep = tuple(thresholds) or metrics.DEFAULT_THRESHOLDS
            report = metrics.evaluate_specific(scores, golds, sweep)
        else:
            golds_u = metrics.read_universal_gold(gold_path)
            report = metrics.evaluate_universal(scores, golds_u)
    except (EngineError, KeyError, OSError) as exc:
        _fatal(str(exc))
    _print_report(report)
    if macro and gold_format == "specific":
        golds_map = {
            key: key[1] in {g.query_id: g for g in golds}[key[0]].gold_labels
            for key in scores
        }
        for threshold in tuple(thresholds) or metrics.DEFAULT_THRESHOLDS:
            preds = {k: metrics.binarize(s, threshold) for k, s in scores.items()}
            res = metrics.multilabel_prf(preds, golds_map, average="macro")
            click.echo(
                f"macro thr={threshold}: P={res.precision:.4f} R={res.recall:.4f} F1={res.f1:.4f}"
            )
    if out_path:
        record = report.to_record()
        record["predictions"] = pred_path
        record["gold"] = gold_path
        Path(out_path).write_text(_dump(record), encoding="utf-8")


@main.command("bench-vel")
@click.option("--links", "links_path", required=True, help="Output of the link command.")
@click.option("--gold", "gold_path", required=True, help="JSONL: query_id, gold_entity.")
@click.option("--ks", default="1,5,10,20", show_default=True)
@click.option("--out", "out_path", default=None)
def cmd_bench_vel(links_path, gold_path, ks, out_path):
    """Retrieval accuracy@K of link rankings against gold entity ids."""
    try:
        ranked = dict(metrics.read_link_records(links_path))
        gold: dict[str, str] = {}
        with open(gold_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                gold[str(obj["query_id"])] = str(obj["gold_entity"])
        missing = sorted(set(ranked) - set(gold))
        if missing:
            _fatal(f"no gold entity for queries: {missing[:5]}")
        k_values = tuple(int(x) for x in ks.split(","))
        items = [(ranked[qid], gold[qid]) for qid in sorted(ranked)]
        report = metrics.evaluate_vel(items, k_values)
    except (EngineError, KeyError, OSError, ValueError) as exc:
        _fatal(str(exc))
    _print_report(report)
    if out_path:
        record = report.to_record()
        record["links"] = links_path
        record["gold"] = gold_path
        Path(out_path).write_text(_dump(record), encoding="utf-8")


if __name__ == "__main__":
    main()
