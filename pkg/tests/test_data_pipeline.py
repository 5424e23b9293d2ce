import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fogsynth.data_pipeline import (
    CorpusSpec,
    TrafficSample,
    features_matrix,
    ingest_bytes,
    load_dataset,
    load_dataset_binary,
    load_dataset_text,
    partition,
    reshape_grid,
    restrict_classes,
    save_dataset_binary,
    save_dataset_text,
    split_known_unknown,
    synth_corpus,
)


class TestIngestBytes:
    def test_truncates_long_records(self):
        sample = ingest_bytes(bytes(range(256)) * 8, 1600)  # 2048 bytes
        assert len(sample.features) == 1600
        assert sample.features[0] == 0.0
        assert sample.features[255] == 1.0

    def test_zero_pads_short_records(self):
        sample = ingest_bytes(b"\xff" * 100, 1600)
        assert np.all(sample.features[:100] == 1.0)
        assert np.all(sample.features[100:] == 0.0)

    def test_scale_endpoints(self):
        sample = ingest_bytes(bytes([255, 0]), 2)
        assert sample.features[0] == 1.0
        assert sample.features[1] == 0.0

    def test_rejects_empty_input(self):
        with pytest.raises(ValueError):
            ingest_bytes(b"", 16)

    def test_idempotent_on_exact_length_input(self):
        raw = bytes(np.random.default_rng(0).integers(0, 256, 64, dtype=np.uint8))
        once = ingest_bytes(raw, 64)
        again = ingest_bytes(bytes((once.features * 255).round().astype(np.uint8)), 64)
        assert np.array_equal(once.features, again.features)

    @given(st.binary(min_size=1, max_size=300), st.integers(min_value=1, max_value=64))
    @settings(max_examples=50, deadline=None)
    def test_features_always_in_unit_interval(self, raw, length):
        sample = ingest_bytes(raw, length)
        assert len(sample.features) == length
        assert np.all(sample.features >= 0.0) and np.all(sample.features <= 1.0)


class TestReshapeGrid:
    def test_row_major_layout(self):
        sample = TrafficSample(np.arange(1600) / 1600.0)
        grid = reshape_grid(sample, 40, 40)
        assert grid.shape == (40, 40)
        assert grid[0, 39] == sample.features[39]

    def test_size_mismatch_rejected(self):
        sample = TrafficSample(np.zeros(1600))
        with pytest.raises(ValueError):
            reshape_grid(sample, 50, 50)

    def test_flatten_round_trip(self):
        sample = TrafficSample(np.random.default_rng(3).random(1600))
        assert np.array_equal(reshape_grid(sample, 40, 40).ravel(), sample.features)


def _make_samples(n):
    return [TrafficSample(np.full(4, i / n), true_class=i % 3, source_id=f"s{i}")
            for i in range(n)]


class TestPartition:
    def test_even_split(self):
        shards = partition(_make_samples(1000), 4, seed=0)
        assert [len(s) for s in shards] == [250, 250, 250, 250]
        ids = [frozenset(x.source_id for x in s.samples) for s in shards]
        for i in range(4):
            for j in range(i + 1, 4):
                assert not ids[i] & ids[j]

    def test_single_node_is_identity(self):
        samples = _make_samples(10)
        shards = partition(samples, 1, seed=7)
        assert {s.source_id for s in shards[0].samples} == {s.source_id for s in samples}

    def test_thirty_nodes(self):
        shards = partition(_make_samples(1000), 30, seed=1)
        assert len(shards) == 30
        sizes = [len(s) for s in shards]
        assert max(sizes) - min(sizes) <= 1
        assert sum(sizes) == 1000

    def test_deterministic(self):
        samples = _make_samples(100)
        a = partition(samples, 7, seed=5)
        b = partition(samples, 7, seed=5)
        assert all([x.source_id for x in sa.samples] == [x.source_id for x in sb.samples]
                   for sa, sb in zip(a, b))

    def test_too_many_nodes_rejected(self):
        with pytest.raises(ValueError):
            partition(_make_samples(3), 4, seed=0)

    @given(st.integers(min_value=1, max_value=20), st.integers(min_value=0, max_value=2**16))
    @settings(max_examples=40, deadline=None)
    def test_disjoint_and_covering(self, num_nodes, seed):
        samples = _make_samples(num_nodes + 37)
        shards = partition(samples, num_nodes, seed)
        collected = sorted(x.source_id for s in shards for x in s.samples)
        assert collected == sorted(x.source_id for x in samples)
        sizes = [len(s) for s in shards]
        assert max(sizes) - min(sizes) <= 1


class TestRestrictClasses:
    def test_every_node_gets_data(self):
        shards = restrict_classes(_make_samples(90), 3, seed=0, classes_per_node=1)
        assert all(len(s) > 0 for s in shards)
        total = sum(len(s) for s in shards)
        assert total == 90


class TestSynthCorpus:
    def test_class_counts(self):
        spec = CorpusSpec(num_classes=3, feature_dim=16, samples_per_class=100, seed=0)
        samples = synth_corpus(spec)
        assert len(samples) == 300
        counts = {}
        for s in samples:
            counts[s.true_class] = counts.get(s.true_class, 0) + 1
        assert counts == {0: 100, 1: 100, 2: 100}

    def test_deterministic(self):
        spec = CorpusSpec(num_classes=2, feature_dim=8, samples_per_class=20, seed=9)
        a, b = synth_corpus(spec), synth_corpus(spec)
        assert all(np.array_equal(x.features, y.features) for x, y in zip(a, b))

    def test_nearest_centroid_separates_disjoint_supports(self):
        # oracle: nearest-centroid classification on the generated data itself
        spec = CorpusSpec(num_classes=2, feature_dim=32, samples_per_class=150,
                          noise_scale=0.02, seed=4)
        samples = synth_corpus(spec)
        x = features_matrix(samples)
        y = np.array([s.true_class for s in samples])
        centroids = np.stack([x[y == c].mean(axis=0) for c in (0, 1)])
        predicted = np.argmin(
            np.linalg.norm(x[:, None, :] - centroids[None], axis=2), axis=1)
        assert np.mean(predicted == y) == 1.0

    def test_unknown_classes_validated(self):
        with pytest.raises(ValueError):
            CorpusSpec(num_classes=3, unknown_classes=frozenset({5})).validate()


class TestSplitKnownUnknown:
    def test_eight_known_two_unknown(self):
        spec = CorpusSpec(num_classes=10, feature_dim=8, samples_per_class=5,
                          unknown_classes=frozenset({8, 9}), seed=0)
        samples = synth_corpus(spec)
        known, unknown = split_known_unknown(samples, spec.unknown_classes)
        assert {s.true_class for s in known} == set(range(8))
        assert {s.true_class for s in unknown} == {8, 9}

    def test_empty_unknown_set(self):
        samples = _make_samples(12)
        known, unknown = split_known_unknown(samples, frozenset())
        assert len(known) == 12 and unknown == []

    def test_counts_sum(self):
        samples = _make_samples(30)
        known, unknown = split_known_unknown(samples, {1})
        assert len(known) + len(unknown) == 30


class TestDatasetFiles:
    def test_text_round_trip_exact(self, tmp_path):
        samples = [TrafficSample(np.random.default_rng(i).random(16),
                                 true_class=None if i % 3 == 0 else i % 3,
                                 source_id=f"rec-{i}") for i in range(10)]
        path = tmp_path / "data.csv"
        save_dataset_text(samples, path)
        loaded = load_dataset_text(path)
        assert len(loaded) == 10
        for a, b in zip(samples, loaded):
            assert np.array_equal(a.features, b.features)
            assert a.true_class == b.true_class
            assert a.source_id == b.source_id

    def test_binary_round_trip(self, tmp_path):
        samples = [TrafficSample(np.random.default_rng(i).random(16).astype(np.float32)
                                 .astype(np.float64),
                                 true_class=i % 2, source_id=f"r{i}") for i in range(6)]
        path = tmp_path / "data.bin"
        save_dataset_binary(samples, path)
        loaded = load_dataset_binary(path)
        for a, b in zip(samples, loaded):
            assert np.allclose(a.features, b.features, atol=1e-7)
            assert a.true_class == b.true_class
            assert a.source_id == b.source_id

    def test_load_dispatches_on_magic(self, tmp_path):
        samples = _make_samples(4)
        save_dataset_text(samples, tmp_path / "a.csv")
        save_dataset_binary(samples, tmp_path / "a.bin")
        assert len(load_dataset(tmp_path / "a.csv")) == 4
        assert len(load_dataset(tmp_path / "a.bin")) == 4

    def test_comma_in_source_id_rejected(self, tmp_path):
        bad = [TrafficSample(np.zeros(4), source_id="a,b")]
        with pytest.raises(ValueError):
            save_dataset_text(bad, tmp_path / "x.csv")
