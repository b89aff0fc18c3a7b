import numpy as np
import pytest

from caire import synth
from caire.kb import EntityRecord, load_kb, write_kb


@pytest.fixture
def random_kb(tmp_path):
    manifest = synth.make_random_kb(tmp_path / "kb", n_entities=50, dim=64, seed=7)
    return load_kb(manifest)


@pytest.fixture
def egg_fixture(tmp_path):
    return synth.make_egg_kb(tmp_path / "egg")


@pytest.fixture
def egg_kb(egg_fixture):
    return load_kb(egg_fixture.manifest_path)


def make_tiny_kb(tmp_path, *, with_article=True, with_gloss=True):
    """Five entities on orthogonal axes; image row i and text rows of entity i
    all point along basis vector i."""
    dim = 16
    entities = []
    image_rows = []
    text_rows = []
    for i in range(5):
        direction = synth.basis_vector(dim, i)
        image_rows.append(direction)
        text_map = {"lemma": len(text_rows)}
        text_rows.append(direction.copy())
        if with_gloss:
            text_map["gloss"] = len(text_rows)
            text_rows.append(synth.basis_vector(dim, 10 + i))
        if with_article:
            text_map["article"] = len(text_rows)
            text_rows.append(direction.copy())
        entities.append(
            EntityRecord(
                entity_id=f"t_{i}",
                lemma=f"tiny {i}",
                gloss=f"gloss {i}" if with_gloss else "",
                article_text=f"article {i}" if with_article else "",
                image_embedding_rows=(i,),
                text_embedding_rows=text_map,
            )
        )
    manifest = write_kb(tmp_path / "tiny", entities, np.stack(image_rows), np.stack(text_rows))
    return load_kb(manifest)


@pytest.fixture
def tiny_kb(tmp_path):
    return make_tiny_kb(tmp_path)
