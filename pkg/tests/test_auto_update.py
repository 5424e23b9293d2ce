import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fogsynth.auto_update import (
    PipelineState,
    UpdatePolicy,
    calibrate_alpha,
    confidence,
    filter_unknown,
    load_state,
    save_state,
    synthesize_corpus,
    update_cycle,
)
from fogsynth.classifier import ClassifierConfig, predict_batch, train_classifier
from fogsynth.data_pipeline import (
    CorpusSpec,
    archetype_means,
    features_matrix,
    partition,
    split_known_unknown,
    synth_corpus,
)
from fogsynth.dec_labeling import DecConfig
from fogsynth.federation import TrainConfig
from fogsynth.fgan1 import run_fgan1


class TestConfidence:
    def test_max_entry(self):
        assert confidence(np.array([0.1, 0.7, 0.2])) == pytest.approx(0.7)

    def test_uniform_eight_classes(self):
        assert confidence(np.full(8, 0.125)) == pytest.approx(0.125)

    def test_one_hot(self):
        assert confidence(np.array([0.0, 1.0, 0.0])) == 1.0

    def test_invalid_vector_rejected(self):
        with pytest.raises(ValueError):
            confidence(np.array([-0.1, 1.1]))


def small_classifier(seed=0):
    spec = CorpusSpec(num_classes=3, feature_dim=16, samples_per_class=60,
                      noise_scale=0.03, seed=seed)
    samples = synth_corpus(spec)
    model = train_classifier(samples, ClassifierConfig(epochs=25, lr=0.2,
                                                       hidden=(32,), seed=0))
    return model, samples


class TestFilterUnknown:
    def test_partition_sizes(self, rng):
        model, _ = small_classifier()
        batch = rng.random((40, 16))
        known, unknown = filter_unknown(model, batch, 0.5)
        assert len(known) + len(unknown) == 40

    def test_low_confidence_marked_unknown(self):
        model, _ = small_classifier()
        # a sample the classifier must be unsure about scores below a high alpha
        scores = predict_batch(model, np.full((1, 16), 0.5)).max(axis=1)
        alpha = float(np.nextafter(1.0, 0.0))
        _, unknown = filter_unknown(model, np.full((1, 16), 0.5), alpha)
        if scores[0] < alpha:
            assert len(unknown) == 1

    def test_boundary_counts_as_known(self):
        model, samples = small_classifier()
        batch = features_matrix(samples[:8])
        scores = predict_batch(model, batch).max(axis=1)
        boundary = float(scores[0])
        known, unknown = filter_unknown(model, batch, boundary)
        assert not any(np.allclose(row, batch[0]) for row in unknown)

    @given(st.floats(min_value=0.05, max_value=0.95),
           st.floats(min_value=0.05, max_value=0.95))
    @settings(max_examples=20, deadline=None)
    def test_monotone_in_alpha(self, alpha_a, alpha_b):
        model, samples = small_classifier()
        batch = features_matrix(samples[::5])
        lo, hi = sorted((alpha_a, alpha_b))
        _, unknown_lo = filter_unknown(model, batch, lo)
        _, unknown_hi = filter_unknown(model, batch, hi)
        assert len(unknown_hi) >= len(unknown_lo)


class TestCalibrateAlpha:
    def test_false_unknown_within_budget(self):
        model, samples = small_classifier()
        known = features_matrix(samples)
        cal = calibrate_alpha(model, known, max_false_unknown=0.2)
        _, unknown = filter_unknown(model, known, cal.alpha)
        assert len(unknown) / len(known) <= 0.2
        assert 0.0 < cal.alpha < 1.0
        assert len(cal.table) >= 1

    def test_table_reports_recall_when_unknowns_given(self, rng):
        model, samples = small_classifier()
        cal = calibrate_alpha(model, features_matrix(samples),
                              unknown_validation=rng.random((10, 16)))
        assert all("unknown_recall" in row for row in cal.table)


def build_state(seed=1):
    means = archetype_means(5, 32, high=0.75, low=0.25)
    spec = CorpusSpec(num_classes=5, feature_dim=32, samples_per_class=120,
                      noise_scale=0.05, class_means=means,
                      unknown_classes=frozenset({4}), seed=5)
    samples = synth_corpus(spec)
    known, unknown = split_known_unknown(samples, {4})
    shards = partition(known, 2, seed=3)
    fog = [features_matrix(s.samples) for s in shards]
    train_cfg = TrainConfig(protocol="fgan1", rounds=40, local_epochs=1, batch_size=24,
                            num_nodes=2, lr_g=1.0, lr_d=0.05, seed=seed, noise_dim=8,
                            sample_len=32, gen_hidden=(32,), disc_hidden=(24,))
    result = run_fgan1(train_cfg, fog)
    clf_cfg = ClassifierConfig(epochs=20, lr=0.2, hidden=(32,), seed=0)
    classifier = train_classifier(known, clf_cfg)
    state = PipelineState(
        train_cfg=train_cfg,
        dec_cfg=DecConfig(K_max=6, latent_dim=5, encoder_hidden=(32,),
                          pretrain_epochs=200, dec_lr=0.05, seed=0),
        clf_cfg=clf_cfg,
        policy=UpdatePolicy(alpha=0.9, retrain_trigger=50),
        fog_data=fog,
        gen=result.gen,
        classifier=classifier,
        node_discs=[node.disc for node in result.nodes],
        synth_size=300,
    )
    return state, features_matrix(unknown)


class TestUpdateCycle:
    def test_below_trigger_is_noop_with_log(self):
        state, unknown = build_state()
        incoming = [(0, unknown[:3])]
        new_state = update_cycle(state, incoming)
        assert new_state.version == state.version
        assert np.array_equal(new_state.gen.values, state.gen.values)
        assert len(new_state.monitor_log) == len(state.monitor_log) + 1
        assert new_state.monitor_log[-1]["known"] + new_state.monitor_log[-1]["unknown"] == 3

    def test_cycle_increments_version_and_keeps_rollback(self):
        state, unknown = build_state()
        incoming = [(0, unknown[:60]), (1, unknown[60:])]
        new_state = update_cycle(state, incoming)
        assert new_state.version == state.version + 1
        # previous classifier kept intact for rollback
        assert new_state.classifier_history[-1] is state.classifier
        assert state.version == 0  # input state untouched

    def test_unknowns_join_observing_node(self):
        state, unknown = build_state()
        incoming = [(1, unknown[:80])]
        new_state = update_cycle(state, incoming)
        if new_state.version == state.version:
            pytest.skip("trigger not reached; filter kept batch as known")
        assert new_state.fog_data[1].shape[0] > state.fog_data[1].shape[0]
        assert new_state.fog_data[0].shape[0] == state.fog_data[0].shape[0]

    def test_unknown_node_rejected(self):
        state, unknown = build_state()
        with pytest.raises(ValueError):
            update_cycle(state, [(7, unknown[:4])])


class TestSynthesizeCorpus:
    def test_count_and_determinism(self):
        state, _ = build_state()
        a = synthesize_corpus(state.gen, 50, 3, state.train_cfg.noise_dim)
        b = synthesize_corpus(state.gen, 50, 3, state.train_cfg.noise_dim)
        assert a.count == 50
        assert np.array_equal(a.samples, b.samples)


class TestStatePersistence:
    def test_round_trip(self, tmp_path):
        state, _ = build_state()
        save_state(state, tmp_path / "state")
        loaded = load_state(tmp_path / "state")
        assert loaded.version == state.version
        assert np.array_equal(loaded.gen.values, state.gen.values)
        assert len(loaded.fog_data) == len(state.fog_data)
        assert np.array_equal(loaded.fog_data[0], state.fog_data[0])
        assert np.array_equal(loaded.classifier.params.values,
                              state.classifier.params.values)
        assert loaded.train_cfg == state.train_cfg
        assert loaded.policy == state.policy
