from __future__ import annotations

import numpy as np
import pytest

from degsim._rng import make_rng
from degsim.degrade import degrade_corpus, make_spec
from degsim.image import as_image, save_image
from degsim.smoke import smoke_suite, write_smoke_corpus


@pytest.fixture(scope="session")
def smoke_corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke_clean")
    write_smoke_corpus(out)
    return out


@pytest.fixture(scope="session")
def smoke_manifest(smoke_corpus_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke_degraded")
    return degrade_corpus(smoke_corpus_dir, smoke_suite(), seed=0, out_dir=out)


@pytest.fixture(scope="session")
def tiny_corpus_dir(tmp_path_factory):
    """Four small textured images for fast corpus-level tests."""
    out = tmp_path_factory.mktemp("tiny_clean")
    rng = make_rng("tiny-corpus")
    for i in range(4):
        base = rng.random((96, 96, 3)) * 0.3
        ramp = np.linspace(0.2, 0.7, 96)[:, None, None]
        save_image(as_image(base + ramp), out / f"img_{i}.png")
    return out


@pytest.fixture()
def rng():
    return make_rng("test-default")
