"""Adapter command line: embedding extraction and the scoring server."""

from __future__ import annotations

import os
from pathlib import Path

import click

from .encoders import encoder_from_spec
from .extract import ExtractionJob, extract_embeddings
from .judges import judge_from_spec


@click.group()
def main():
    """Model adapter for the caire engine: extract KBs, serve /v1/score."""


@main.command("extract")
@click.option("--images", "images_dir", required=True, help="Directory of image files.")
@click.option("--texts", "listing_path", required=True,
              help="JSONL listing: entity_id, lemma, gloss, article_text, images[].")
@click.option("--out", "out_dir", required=True, help="Output KB directory.")
@click.option("--encoder", "encoder_spec", default="hash:64:0", show_default=True,
              help="hash[:dim[:seed]] or hf:<model_id>.")
@click.option("--batch-size", default=16, show_default=True)
def cmd_extract(images_dir, listing_path, out_dir, encoder_spec, batch_size):
    """Embed images and entity texts into a kb-format/1 directory."""
    try:
        encoder = encoder_from_spec(encoder_spec)
        report = extract_embeddings(
            ExtractionJob(
                listing_path=Path(listing_path),
                images_dir=Path(images_dir),
                out_dir=Path(out_dir),
                encoder=encoder,
                batch_size=batch_size,
            )
        )
    except (ValueError, OSError, RuntimeError) as exc:
        click.echo(f"error: {exc}", err=True)
        raise SystemExit(1)
    click.echo(
        f"wrote {report.entities} entities, {report.image_rows} image rows, "
        f"{report.text_rows} text rows -> {report.manifest_path}"
    )
    for line in report.skipped:
        click.echo(f"skipped: {line}", err=True)


@main.command("serve")
@click.option("--model", "judge_spec", default="deterministic:0", show_default=True,
              help="deterministic[:seed] or hf:<model_id>[+cot].")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8008, show_default=True)
@click.option("--token", default=None,
              help="Bearer token; defaults to $CAIRE_BACKEND_TOKEN when set.")
def cmd_serve(judge_spec, host, port, token):
    """Serve /v1/score and /v1/capabilities around a judge model."""
    from .server import serve

    try:
        judge = judge_from_spec(judge_spec)
    except (ValueError, RuntimeError) as exc:
        click.echo(f"error: {exc}", err=True)
        raise SystemExit(1)
    token = token or os.environ.get("CAIRE_BACKEND_TOKEN") or None
    click.echo(f"serving {judge.identifier} on http://{host}:{port}")
    serve(judge, host=host, port=port, token=token)


if __name__ == "__main__":
    main()
