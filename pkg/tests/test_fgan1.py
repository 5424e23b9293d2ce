import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fogsynth.federation import (
    KIND_SAMPLE_GRAD,
    KIND_SAMPLES,
    KIND_SCALAR,
    InjectedFailure,
    TrainConfig,
    Transport,
)
from fogsynth.fgan1 import aggregate_gen_loss, local_update_fgan1, run_fgan1
from fogsynth.gan_core import (
    default_discriminator_arch,
    disc_forward,
    gen_loss_local,
    init_model,
)

from oracles import centralized_gan

L = 16


def toy_cfg(**overrides) -> TrainConfig:
    base = dict(protocol="fgan1", rounds=5, local_epochs=1, batch_size=8,
                num_nodes=2, lr_g=0.1, lr_d=0.1, seed=3, noise_dim=6,
                sample_len=L, gen_hidden=(12,), disc_hidden=(10,))
    base.update(overrides)
    return TrainConfig(**base)


def toy_data(seed=0, n=64, loc=0.5):
    rng = np.random.default_rng(seed)
    return np.clip(rng.normal(loc, 0.05, (n, L)), 0, 1)


class TestAggregateGenLoss:
    def test_mean(self):
        assert aggregate_gen_loss([-0.5, -1.5]) == pytest.approx(-1.0)

    def test_single_value_identity(self):
        assert aggregate_gen_loss([-0.25]) == pytest.approx(-0.25)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate_gen_loss([])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            aggregate_gen_loss([-0.5, float("nan")])

    @given(st.lists(st.floats(min_value=-5, max_value=0), min_size=1, max_size=8),
           st.randoms())
    @settings(max_examples=40, deadline=None)
    def test_permutation_invariant(self, losses, rand):
        shuffled = list(losses)
        rand.shuffle(shuffled)
        assert aggregate_gen_loss(shuffled) == pytest.approx(aggregate_gen_loss(losses))

    def test_mean_of_constant_is_constant(self):
        assert aggregate_gen_loss([-0.7] * 5) == pytest.approx(-0.7)


class TestLocalUpdate:
    def test_zero_epochs_rejected(self, rng):
        disc = init_model(default_discriminator_arch(L, (10,)), 0, "discriminator")
        with pytest.raises(ValueError):
            local_update_fgan1(disc, toy_data(), rng.random((8, L)),
                               rng.random((8, L)), 0, 8, 0.1, rng)

    def test_small_dataset_rejected(self, rng):
        disc = init_model(default_discriminator_arch(L, (10,)), 0, "discriminator")
        with pytest.raises(ValueError):
            local_update_fgan1(disc, toy_data(n=4), rng.random((8, L)),
                               rng.random((8, L)), 1, 8, 0.1, rng)

    def test_zero_lr_keeps_discriminator(self, rng):
        disc = init_model(default_discriminator_arch(L, (10,)), 0, "discriminator")
        x_d, x_g = rng.random((8, L)), rng.random((8, L))
        out, _, g_loss, _ = local_update_fgan1(disc, toy_data(), x_d, x_g, 3, 8, 0.0,
                                               np.random.default_rng(0))
        assert np.array_equal(out.values, disc.values)
        assert g_loss == pytest.approx(gen_loss_local(disc, x_g))

    def test_discriminator_learns_to_separate(self, rng):
        # toy-run oracle: after training, real-mode scores beat far-off fakes
        disc = init_model(default_discriminator_arch(L, (10,)), 1, "discriminator")
        data = toy_data(n=128, loc=0.8)
        fake = np.clip(rng.normal(0.1, 0.05, (8, L)), 0, 1)
        for _ in range(60):
            disc, _, _, _ = local_update_fgan1(disc, data, fake, fake, 1, 8, 0.5,
                                               np.random.default_rng(0))
        real_scores = disc_forward(disc, data[:32])
        fake_scores = disc_forward(disc, np.clip(rng.normal(0.1, 0.05, (32, L)), 0, 1))
        assert real_scores.mean() > fake_scores.mean()


class TestRunFgan1:
    def test_zero_rounds_leaves_generator(self):
        cfg = toy_cfg(rounds=0)
        result = run_fgan1(cfg, [toy_data(seed=0), toy_data(seed=1)])
        fresh = run_fgan1(toy_cfg(rounds=0), [toy_data(seed=0), toy_data(seed=1)])
        assert result.metrics == []
        assert np.array_equal(result.gen.values, fresh.gen.values)

    def test_round_grid_accepted(self):
        for rounds in (5, 10, 20):
            result = run_fgan1(toy_cfg(rounds=rounds), [toy_data(0), toy_data(1)])
            assert len(result.metrics) == rounds

    def test_wrong_shard_count_rejected(self):
        with pytest.raises(ValueError):
            run_fgan1(toy_cfg(num_nodes=3), [toy_data(0), toy_data(1)])

    def test_centralized_equivalence(self):
        cfg = toy_cfg(rounds=30, num_nodes=1, local_epochs=1, seed=7,
                      lr_g=0.05, lr_d=0.05)
        data = toy_data(seed=4)
        result = run_fgan1(cfg, [data])
        gen_traj, disc_traj = centralized_gan(
            data, 30, cfg.batch_size, cfg.lr_g, cfg.lr_d, cfg.seed, cfg.noise_dim,
            cfg.gen_hidden, cfg.disc_hidden)
        assert np.max(np.abs(result.gen.values - gen_traj[-1])) <= 1e-12
        assert np.max(np.abs(result.nodes[0].disc.values - disc_traj[-1])) <= 1e-12

    def test_downlink_payload_doubles_with_batch(self):
        small = run_fgan1(toy_cfg(rounds=1, batch_size=8), [toy_data(0), toy_data(1)])
        large = run_fgan1(toy_cfg(rounds=1, batch_size=16), [toy_data(0), toy_data(1)])
        down_small = small.transport.bytes_for_round(1)["down_payload"]
        down_large = large.transport.bytes_for_round(1)["down_payload"]
        assert down_large == 2 * down_small

    def test_node_failure_aborts_round(self):
        cfg = toy_cfg(rounds=3)
        transport = Transport()

        def fail_second_round(env):
            return env.round_index == 2 and env.receiver == "node-1"

        transport.failure_hook = fail_second_round
        with pytest.raises(InjectedFailure):
            run_fgan1(cfg, [toy_data(0), toy_data(1)], transport=transport)
        # no round-2 uplink was aggregated: log holds only the round-2 sends before abort
        assert all(env.round_index <= 2 for env in transport.log)

    def test_transport_carries_only_allowed_kinds(self):
        result = run_fgan1(toy_cfg(rounds=2), [toy_data(0), toy_data(1)])
        kinds = {env.kind for env in result.transport.log}
        assert kinds == {KIND_SAMPLES, KIND_SCALAR, KIND_SAMPLE_GRAD}
        for env in result.transport.log:
            if env.kind == KIND_SAMPLES:
                assert env.provenance == "synthetic"
        result.transport.assert_synthetic_only()

    def test_sequential_mode_deterministic(self):
        a = run_fgan1(toy_cfg(rounds=4), [toy_data(0), toy_data(1)])
        b = run_fgan1(toy_cfg(rounds=4), [toy_data(0), toy_data(1)])
        assert np.array_equal(a.gen.values, b.gen.values)
        assert [m.gen_loss for m in a.metrics] == [m.gen_loss for m in b.metrics]

    def test_parallel_matches_sequential(self):
        seq = run_fgan1(toy_cfg(rounds=3, num_nodes=2), [toy_data(0), toy_data(1)])
        par = run_fgan1(toy_cfg(rounds=3, num_nodes=2, parallel=True),
                        [toy_data(0), toy_data(1)])
        assert np.array_equal(seq.gen.values, par.gen.values)

    def test_non_saturating_flag_changes_updates(self):
        default = run_fgan1(toy_cfg(rounds=3), [toy_data(0), toy_data(1)])
        flipped = run_fgan1(toy_cfg(rounds=3, non_saturating=True),
                            [toy_data(0), toy_data(1)])
        assert not np.array_equal(default.gen.values, flipped.gen.values)

    def test_momentum_option_changes_updates(self):
        plain = run_fgan1(toy_cfg(rounds=3), [toy_data(0), toy_data(1)])
        momentum = run_fgan1(toy_cfg(rounds=3, momentum=0.9),
                             [toy_data(0), toy_data(1)])
        assert not np.array_equal(plain.gen.values, momentum.gen.values)
