import numpy as np
import pytest

from musim.config import FeatureConfig
from musim.features import FeatureStore
from musim.synth import SynthSpec, generate_synthetic_corpus

# Verified: every split supports every condition at this size and seed.
SMALL_SPEC = SynthSpec(n_tracks=32, duration_s=6.0, split_ratios=(0.5, 0.25, 0.25))
SMALL_SEED = 4


@pytest.fixture(scope="session")
def feature_cfg():
    return FeatureConfig()


@pytest.fixture(scope="session")
def small_corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("small_corpus")
    corpus, factors = generate_synthetic_corpus(SMALL_SPEC, SMALL_SEED, out)
    return out, corpus, factors


@pytest.fixture(scope="session")
def small_corpus(small_corpus_dir):
    return small_corpus_dir[1]


@pytest.fixture(scope="session")
def small_store(small_corpus, feature_cfg):
    return FeatureStore(small_corpus.audio_paths(), feature_cfg)


@pytest.fixture(scope="session")
def tiny_model():
    from musim.model import init_params

    return init_params(seed=11, arch="tiny")


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
