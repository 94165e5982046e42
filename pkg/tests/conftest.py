import pytest

from gradechat.synthcorpus import DemoBundle, build_demo_bundle


@pytest.fixture(scope="session")
def bundle() -> DemoBundle:
    return build_demo_bundle(seed=0)


@pytest.fixture(scope="session")
def predictor(bundle):
    return bundle.predictor


@pytest.fixture(scope="session")
def toy_lm(bundle):
    return bundle.lm


@pytest.fixture(scope="session")
def register_tok(bundle):
    return bundle.tokenizer


@pytest.fixture(scope="session")
def gold_lexicon(bundle):
    return bundle.gold_lexicon


@pytest.fixture(scope="session")
def heuristic_lexicon(bundle):
    return bundle.heuristic_lexicon
