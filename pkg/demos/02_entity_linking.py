#!/usr/bin/env python3
"""Walk through visual entity linking on a planted fixture: retrieve the
image neighborhood, deduplicate multi-owner hits into unique candidates, and
compare disambiguation strategies."""

import tempfile

from caire import ContextMode, Strategy, build_context, disambiguate, load_kb, retrieve_candidates
from caire.synth import make_egg_kb

with tempfile.TemporaryDirectory() as workdir:
    fixture = make_egg_kb(workdir)
    kb = load_kb(fixture.manifest_path)
    query = fixture.query

    # Stage 1: image-to-image retrieval. Rows can belong to several entities,
    # so 5 hits already cover 7 unique candidates here.
    five = retrieve_candidates(query, kb, k=5)
    print("five nearest image rows:")
    for hit in five.hits:
        lemmas = [kb.entities[e].lemma for e in hit.entity_ids]
        print(f"  row {hit.row_index:>2}  sim {hit.similarity:.6f}  -> {lemmas}")
    print(f"unique candidates from 5 hits: {len(five.unique_entities)}")

    # the full pipeline uses k=20
    cands = retrieve_candidates(query, kb, k=20)

    # Stage 2a: disambiguate by image-to-lemma similarity
    lemma = disambiguate(query, cands, kb, Strategy.LEMMA_VT)
    print("\nlemma matching:")
    for eid, score in lemma.ranked_entities:
        print(f"  {kb.entities[eid].lemma:<22} {score:.4f}")
    print(f"selected: {kb.entities[lemma.selected].lemma}")

    # Stage 2b: disambiguate by ownership frequency among the 20 hits
    freq = disambiguate(query, cands, kb, Strategy.FREQUENCY_VT)
    print("\nfrequency matching:")
    for eid, count in freq.ranked_entities:
        print(f"  {kb.entities[eid].lemma:<22} {int(count)}")

    # Stage 3: build the scoring context from the winner
    ctx = build_context(lemma, cands, kb, ContextMode.WIKI_FULL)
    print(f"\nwiki_full context ({ctx.source_field}): {ctx.context_text!r}")
    titles = build_context(lemma, cands, kb, ContextMode.TOP20_TITLES)
    print("title context:")
    for line in titles.context_text.split("\n"):
        print(f"  {line}")
