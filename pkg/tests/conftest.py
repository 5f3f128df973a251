import pytest

from globalastar.global_model import ModelDims, ParameterStore
from globalastar.local_model import SupertagTable
from globalastar.synthetic import FIGURE1_SENTENCE, ToyGrammar, figure1_lexicon

SMALL = ModelDims(word=3, category=2, hidden=3)


@pytest.fixture
def fig1_lexicon():
    return figure1_lexicon()


@pytest.fixture
def fig1_table(fig1_lexicon):
    return SupertagTable.from_lexicon(fig1_lexicon, FIGURE1_SENTENCE)


@pytest.fixture(scope="session")
def toy():
    return ToyGrammar(seed=0)


@pytest.fixture(scope="session")
def toy_params(toy):
    return ParameterStore.initialize(toy.lexicon.entries.keys(), toy.lexicon.categories(), seed=0)


def random_small_params(words, categories, seed=0, dims=SMALL, scale=0.5):
    """A small model with every block (biases and embeddings included) randomized."""
    import numpy as np

    p = ParameterStore.initialize(words, categories, dims, seed=seed)
    rng = np.random.default_rng(seed + 1000)
    for name, t in p.tensors.items():
        t[...] = rng.uniform(-scale, scale, size=t.shape)
    return p
