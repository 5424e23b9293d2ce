import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fogsynth.data_pipeline import (
    CorpusSpec,
    archetype_means,
    features_matrix,
    partition,
    synth_corpus,
)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def two_mode_shards():
    """Desk-scale 2-mode corpus split across 4 fog nodes (for trend tests)."""
    means = archetype_means(2, 64, high=0.65, low=0.35)
    spec = CorpusSpec(num_classes=2, feature_dim=64, samples_per_class=200,
                      noise_scale=0.05, class_means=means, seed=11)
    shards = partition(synth_corpus(spec), 4, seed=3)
    return [features_matrix(s.samples) for s in shards]


@pytest.fixture(scope="session")
def blob_corpus():
    """Three well-separated Gaussian blobs with ground truth, n=600."""
    spec = CorpusSpec(num_classes=3, feature_dim=64, samples_per_class=200,
                      noise_scale=0.02, seed=5)
    samples = synth_corpus(spec)
    return samples
