import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fogsynth.federation import (
    DOWN,
    HEADER_BYTES,
    KIND_SAMPLE_GRAD,
    KIND_SAMPLES,
    KIND_SCALAR,
    UP,
    ConfigError,
    InjectedFailure,
    TrainConfig,
    Transport,
    TransportError,
    UnknownEndpointError,
    derive_seed,
    stream_rng,
)


def make_transport():
    t = Transport()
    t.register("coordinator")
    t.register("node-0")
    t.register("node-1")
    return t


class TestSend:
    def test_sample_batch_byte_size(self):
        t = make_transport()
        batch = np.zeros((64, 1600))
        env = t.send("coordinator", "node-0", KIND_SAMPLES, batch, 1, DOWN,
                     provenance="synthetic")
        assert env.payload_bytes == 64 * 1600 * 4 == 409_600
        assert env.byte_size == 409_600 + HEADER_BYTES

    def test_counters_additive(self):
        t = make_transport()
        batch = np.zeros((8, 16))
        for _ in range(5):
            t.send("coordinator", "node-0", KIND_SAMPLES, batch, 1, DOWN,
                   provenance="synthetic")
        single = 8 * 16 * 4 + HEADER_BYTES
        assert t.bytes_for_round(1)["down"] == 5 * single

    def test_payload_delivered_unmodified(self):
        t = make_transport()
        batch = np.random.default_rng(0).standard_normal((4, 4))
        t.send("coordinator", "node-0", KIND_SAMPLES, batch, 1, DOWN,
               provenance="synthetic")
        received = t.receive("node-0")
        assert received is batch

    def test_unknown_endpoint_rejected(self):
        t = make_transport()
        with pytest.raises(UnknownEndpointError):
            t.send("coordinator", "node-9", KIND_SCALAR, 1.0, 1, DOWN)

    def test_fifo_within_channel(self):
        t = make_transport()
        for value in (1.0, 2.0, 3.0):
            t.send("node-0", "coordinator", KIND_SCALAR, value, 1, UP)
        assert [t.receive("coordinator") for _ in range(3)] == [1.0, 2.0, 3.0]

    def test_round_must_not_go_backwards(self):
        t = make_transport()
        t.send("coordinator", "node-0", KIND_SCALAR, 1.0, 3, DOWN)
        with pytest.raises(TransportError):
            t.send("coordinator", "node-0", KIND_SCALAR, 1.0, 2, DOWN)

    def test_injected_failure_surfaces(self):
        t = make_transport()
        t.failure_hook = lambda env: env.receiver == "node-1"
        t.send("coordinator", "node-0", KIND_SCALAR, 1.0, 1, DOWN)
        with pytest.raises(InjectedFailure):
            t.send("coordinator", "node-1", KIND_SCALAR, 1.0, 1, DOWN)


class TestOverheadReport:
    def test_replaying_log_reproduces_report(self):
        t = make_transport()
        rng = np.random.default_rng(2)
        for round_index in (1, 1, 2, 3):
            t.send("coordinator", "node-0", KIND_SAMPLES,
                   rng.standard_normal((3, 5)), round_index, DOWN,
                   provenance="synthetic")
            t.send("node-0", "coordinator", KIND_SCALAR, 0.5, round_index, UP)
        report = t.overhead_report()
        replay: dict = {}
        for env in t.log:
            rec = replay.setdefault(str(env.round_index),
                                    {"up": 0, "down": 0, "up_payload": 0, "down_payload": 0})
            rec[env.direction] += env.byte_size
            rec[f"{env.direction}_payload"] += env.payload_bytes
        assert report["rounds"] == replay
        assert report["totals"]["up"] == sum(r["up"] for r in replay.values())

    def test_empty_run_zero_totals(self):
        t = make_transport()
        report = t.overhead_report()
        assert report["totals"] == {"up": 0, "down": 0, "up_payload": 0, "down_payload": 0}

    def test_log_export_is_metadata_only(self, tmp_path):
        t = make_transport()
        t.send("coordinator", "node-0", KIND_SAMPLES, np.ones((2, 2)), 1, DOWN,
               provenance="synthetic")
        path = tmp_path / "envelopes.jsonl"
        t.export_log(path)
        lines = [json.loads(line) for line in path.read_text().splitlines()]
        assert lines[0]["kind"] == KIND_SAMPLES
        assert lines[0]["byte_size"] == 2 * 2 * 4 + HEADER_BYTES
        assert "payload" not in lines[0]

    @given(st.lists(st.tuples(st.integers(min_value=1, max_value=4),
                              st.integers(min_value=1, max_value=6)), max_size=12))
    @settings(max_examples=30, deadline=None)
    def test_conservation(self, sends):
        t = make_transport()
        round_index = 1
        for rows, cols in sends:
            t.send("coordinator", "node-0", KIND_SAMPLES, np.zeros((rows, cols)),
                   round_index, DOWN, provenance="synthetic")
            round_index += 1
        report = t.overhead_report()
        assert report["totals"]["down"] == sum(env.byte_size for env in t.log)


class TestPrivacyAssertion:
    def test_real_sample_payload_flagged(self):
        t = make_transport()
        t.send("node-0", "coordinator", KIND_SAMPLES, np.ones((2, 2)), 1, UP,
               provenance="real")
        with pytest.raises(AssertionError):
            t.assert_synthetic_only()

    def test_synthetic_and_params_pass(self):
        t = make_transport()
        t.send("coordinator", "node-0", KIND_SAMPLES, np.ones((2, 2)), 1, DOWN,
               provenance="synthetic")
        t.send("node-0", "coordinator", KIND_SAMPLE_GRAD, np.ones((2, 2)), 1, UP)
        t.send("node-0", "coordinator", KIND_SCALAR, -0.5, 1, UP)
        t.assert_synthetic_only()


class TestTrainConfig:
    def test_round_trip(self):
        cfg = TrainConfig(protocol="fgan2", rounds=7, local_epochs=2, batch_size=16,
                          num_nodes=3, lr_g=0.5, lr_d=0.1, seed=9, noise_dim=8,
                          sample_len=32, gen_hidden=(8, 8), disc_hidden=(8,))
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg

    def test_external_key_names(self):
        d = TrainConfig().to_dict()
        for key in ("protocol", "I", "E", "b", "N", "lr_g", "lr_d", "seed", "noise_dim"):
            assert key in d

    def test_bad_protocol_names_key(self):
        with pytest.raises(ConfigError, match="protocol"):
            TrainConfig(protocol="fgan9").validate()

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="bogus"):
            TrainConfig.from_dict({"bogus": 1})


class TestStreams:
    def test_stream_rng_deterministic(self):
        a = stream_rng(5, 0, 1, 2).standard_normal(4)
        b = stream_rng(5, 0, 1, 2).standard_normal(4)
        assert np.array_equal(a, b)

    def test_distinct_keys_distinct_streams(self):
        a = stream_rng(5, 0, 1, 2).standard_normal(4)
        b = stream_rng(5, 0, 1, 3).standard_normal(4)
        assert not np.array_equal(a, b)

    def test_derive_seed_stable(self):
        assert derive_seed(5, 3, 0, 0) == derive_seed(5, 3, 0, 0)
        assert derive_seed(5, 3, 0, 0) != derive_seed(6, 3, 0, 0)
