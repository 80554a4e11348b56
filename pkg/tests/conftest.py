import numpy as np
import pytest

from kalchas import data as dataset_io
from kalchas import train as training
from kalchas.charset import Charset, load_default_charset
from kalchas.model import build_model, reduced_config

# Short polytonic lines used for the desk-scale overfit fixture.
OVERFIT_TEXTS = [
    "ἀγορά",
    "πόλις ἦν",
    "θεὸς λόγος",
    "ἀρετὴ καὶ",
    "ψυχῆς ὁδός",
    "μῆνιν ἄειδε",
    "θάλαττα.",
    "ἄνθρωπος,",
]

# Held-out lines used by the service fine-tune integration test.
FINETUNE_TEXTS = [
    "δῆμος ἄρχει",
    "ξένος ἥκει.",
    "ὁ βίος βραχύς",
    "χάρις χάριν",
]


@pytest.fixture(scope="session")
def polytonic_charset():
    return load_default_charset()


@pytest.fixture(scope="session")
def atlas():
    return dataset_io.load_default_atlas()


@pytest.fixture
def abc_charset():
    return Charset(tuple("abc"))


@pytest.fixture(scope="session")
def overfit_corpus(tmp_path_factory, atlas):
    """8 rendered synthetic lines plus their JSONL manifest."""
    out = tmp_path_factory.mktemp("overfit_corpus")
    manifest = dataset_io.generate_corpus(atlas, OVERFIT_TEXTS, out, seed=11)
    entries, errors = dataset_io.load_manifest(manifest)
    assert not errors
    return manifest, entries


@pytest.fixture(scope="session")
def overfit_run(overfit_corpus, polytonic_charset, tmp_path_factory):
    """A reduced-config model trained to (near-)zero CER on the 8 lines.

    Session-scoped: the ~1 minute training run backs many tests.
    """
    _manifest, entries = overfit_corpus
    out = tmp_path_factory.mktemp("overfit_run")
    model = build_model(reduced_config(polytonic_charset.size), polytonic_charset, seed=42)
    config = training.TrainConfig(
        epochs=130, batch_size=4, learning_rate=3e-3, seed=7, eval_every=10
    )
    model, curves, checkpoints = training.train(model, entries, config, out_dir=out)
    return model, curves, checkpoints, entries
