import numpy as np
import pytest

from claimrank.corpus import Corpus, FactCheck, MappingPair, Post, write_corpus
from claimrank.synthetic import make_separable_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_corpus():
    posts = {
        1: Post(1, "Vaccines contain microchips, share before deleted!", "", "False information",
                "eng", "Vaccines contain microchips, share before deleted!"),
        2: Post(2, "El agua de limón cura el cáncer https://t.co/xx", "", "", "spa",
                "Lemon water cures cancer <URL>"),
    }
    facts = {
        10: FactCheck(10, "No, vaccines do not contain microchips", "Microchip myth",
                      "https://example.org/a", "eng", "No, vaccines do not contain microchips"),
        11: FactCheck(11, "El limón no cura el cáncer", "Bulo del limón", "", "spa",
                      "Lemon does not cure cancer"),
        12: FactCheck(12, "The moon landing was not staged", "", "", "eng",
                      "The moon landing was not staged"),
    }
    maps = (MappingPair(1, 10, "eng-eng"), MappingPair(2, 11, "spa-spa"))
    return Corpus(posts, facts, maps)


@pytest.fixture
def corpus_dir(tmp_path, small_corpus):
    write_corpus(small_corpus, tmp_path / "data")
    return tmp_path / "data"


@pytest.fixture(scope="session")
def separable_corpus():
    return make_separable_corpus(n_pairs=64, n_distractors=200, seed=0)
