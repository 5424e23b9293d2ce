"""In-process coordinator/node message transport with byte-exact accounting.

Payloads are delivered unmodified (same in-memory objects), while byte
accounting uses a canonical wire encoding: a 24-byte envelope header plus
4 bytes per float value. That keeps the communication-overhead numbers
platform-independent without quantizing the values used for training.
"""

from __future__ import annotations

import json
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .nn import ModelParams

DOWN = "down"
UP = "up"

KIND_SAMPLES = "samples"
KIND_SCALAR = "scalar"
KIND_PARAMS = "param-vector"
KIND_SAMPLE_GRAD = "sample-gradient"

_KIND_CODES = {KIND_SAMPLES: 0, KIND_SCALAR: 1, KIND_PARAMS: 2, KIND_SAMPLE_GRAD: 3}

HEADER_BYTES = 24
VALUE_BYTES = 4  # wire-size accounting constant for float payloads

_WIRE_MAGIC = 0x46534E56  # "FSNV"


class TransportError(RuntimeError):
    """Base error for transport failures."""


class UnknownEndpointError(TransportError):
    pass


class InjectedFailure(TransportError):
    pass


@dataclass
class Envelope:
    direction: str
    kind: str
    round_index: int
    sender: str
    receiver: str
    byte_size: int
    payload_bytes: int
    payload: Any
    provenance: str = "n/a"  # "synthetic" | "real" | "n/a"; set for sample payloads

    def meta(self) -> dict:
        return {
            "direction": self.direction,
            "kind": self.kind,
            "round": self.round_index,
            "sender": self.sender,
            "receiver": self.receiver,
            "byte_size": self.byte_size,
            "payload_bytes": self.payload_bytes,
            "provenance": self.provenance,
        }


def _payload_body(payload: Any) -> bytes:
    """Canonical float32 little-endian body bytes of a payload."""
    if isinstance(payload, np.ndarray):
        return np.ascontiguousarray(payload, dtype="<f4").tobytes()
    if isinstance(payload, ModelParams):
        return np.ascontiguousarray(payload.values, dtype="<f4").tobytes()
    if isinstance(payload, (int, float, np.floating)):
        return struct.pack("<f", float(payload))
    scalar = getattr(payload, "wire_scalar", None)
    if scalar is not None:
        return struct.pack("<f", float(scalar()))
    arrays = getattr(payload, "wire_values", None)
    if arrays is not None:
        return b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays())
    raise TypeError(f"cannot serialize payload of type {type(payload).__name__}")


def encode_envelope(direction: str, kind: str, round_index: int, sender_id: int,
                    receiver_id: int, payload: Any) -> bytes:
    """Canonical wire form: 24-byte header + little-endian float32 values."""
    body = _payload_body(payload)
    header = struct.pack(
        "<IBBHIHHQ",
        _WIRE_MAGIC,
        0 if direction == DOWN else 1,
        _KIND_CODES[kind],
        0,
        round_index,
        sender_id,
        receiver_id,
        len(body),
    )
    return header + body


class Transport:
    """FIFO per-channel delivery with atomic byte counters and a replayable log.

    Thread-safe for concurrent senders. An optional failure hook may raise
    (or return True) to simulate a node/link failure for a given envelope.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._queues: dict[str, deque] = {}
        self._endpoint_ids: dict[str, int] = {}
        self._last_round: dict[tuple[str, str], int] = {}
        self.log: list[Envelope] = []
        self.failure_hook: Callable[[Envelope], bool] | None = None

    def register(self, name: str) -> None:
        with self._lock:
            if name not in self._queues:
                self._queues[name] = deque()
                self._endpoint_ids[name] = len(self._endpoint_ids)

    def send(self, sender: str, receiver: str, kind: str, payload: Any,
             round_index: int, direction: str, provenance: str = "n/a") -> Envelope:
        if kind not in _KIND_CODES:
            raise ValueError(f"unknown payload kind {kind!r}")
        with self._lock:
            if receiver not in self._queues:
                raise UnknownEndpointError(f"unknown endpoint {receiver!r}")
            if sender not in self._queues:
                raise UnknownEndpointError(f"unknown endpoint {sender!r}")
            channel = (sender, receiver)
            last = self._last_round.get(channel)
            if last is not None and round_index < last:
                raise TransportError(
                    f"round went backwards on {channel}: {round_index} < {last}"
                )
            wire = encode_envelope(direction, kind, round_index,
                                   self._endpoint_ids[sender],
                                   self._endpoint_ids[receiver], payload)
            env = Envelope(
                direction=direction,
                kind=kind,
                round_index=round_index,
                sender=sender,
                receiver=receiver,
                byte_size=len(wire),
                payload_bytes=len(wire) - HEADER_BYTES,
                payload=payload,
                provenance=provenance,
            )
            if self.failure_hook is not None and self.failure_hook(env):
                raise InjectedFailure(f"injected failure delivering to {receiver!r}")
            self._last_round[channel] = round_index
            self._queues[receiver].append(env)
            self.log.append(env)
            return env

    def receive(self, name: str) -> Any:
        with self._lock:
            if name not in self._queues:
                raise UnknownEndpointError(f"unknown endpoint {name!r}")
            if not self._queues[name]:
                raise TransportError(f"no pending message for {name!r}")
            return self._queues[name].popleft().payload

    def pending(self, name: str) -> int:
        with self._lock:
            return len(self._queues.get(name, ()))

    # -- accounting --------------------------------------------------------

    def bytes_for_round(self, round_index: int) -> dict[str, int]:
        totals = {"up": 0, "down": 0, "up_payload": 0, "down_payload": 0}
        with self._lock:
            for env in self.log:
                if env.round_index != round_index:
                    continue
                totals[env.direction] += env.byte_size
                totals[f"{env.direction}_payload"] += env.payload_bytes
        return totals

    def overhead_report(self) -> dict:
        """Per-round and total byte counts, reconstructible from the log."""
        rounds: dict[int, dict[str, int]] = {}
        with self._lock:
            for env in self.log:
                rec = rounds.setdefault(
                    env.round_index,
                    {"up": 0, "down": 0, "up_payload": 0, "down_payload": 0},
                )
                rec[env.direction] += env.byte_size
                rec[f"{env.direction}_payload"] += env.payload_bytes
        totals = {"up": 0, "down": 0, "up_payload": 0, "down_payload": 0}
        for rec in rounds.values():
            for key in totals:
                totals[key] += rec[key]
        return {"rounds": {str(k): rounds[k] for k in sorted(rounds)}, "totals": totals}

    def export_log(self, path: str | Path) -> None:
        """Envelope metadata as JSON lines; payload contents are not exported."""
        with open(path, "w", encoding="utf-8") as fh:
            for env in self.log:
                fh.write(json.dumps(env.meta(), sort_keys=True) + "\n")

    def assert_synthetic_only(self) -> None:
        """Structural privacy check: no real-sample payload ever transited."""
        for env in self.log:
            if env.kind == KIND_SAMPLES and env.provenance != "synthetic":
                raise AssertionError(
                    f"sample payload with provenance {env.provenance!r} in transport log"
                )
            if env.provenance == "real":
                raise AssertionError("real-data payload found in transport log")


# ---------------------------------------------------------------------------
# Federation-side shared state


@dataclass
class FogNode:
    """One fog server: its private data plus whatever models live on it."""

    node_id: int
    data: np.ndarray  # (n, L); never leaves the node
    disc: ModelParams | None = None
    gen: ModelParams | None = None

    @property
    def size(self) -> int:
        return int(self.data.shape[0])


@dataclass
class RoundMetrics:
    round_index: int
    disc_loss: float
    gen_loss: float
    bytes_up: int
    bytes_down: int
    wall_ms: float
    mmd: float | None = None

    def to_dict(self, include_wall: bool = True) -> dict:
        rec = {
            "round": self.round_index,
            "disc_loss": self.disc_loss,
            "gen_loss": self.gen_loss,
            "bytes_up": self.bytes_up,
            "bytes_down": self.bytes_down,
            "mmd": self.mmd,
        }
        if include_wall:
            rec["wall_ms"] = self.wall_ms
        return rec


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending key."""


@dataclass
class TrainConfig:
    """Hyperparameters shared by both federation protocols."""

    protocol: str = "fgan1"
    rounds: int = 10          # global training rounds (I)
    local_epochs: int = 1     # local epochs per round (E)
    batch_size: int = 64      # b
    num_nodes: int = 1        # N
    lr_g: float = 0.05
    lr_d: float = 0.05
    seed: int = 0
    noise_dim: int = 64
    sample_len: int = 1600
    gen_hidden: tuple[int, ...] = (256, 512)
    disc_hidden: tuple[int, ...] = (512, 256)
    non_saturating: bool = False
    momentum: float = 0.0
    parallel: bool = False
    mmd_every: int = 0        # 0 disables MMD snapshots
    mmd_sample: int = 256

    _KEY_MAP = (
        ("protocol", "protocol"), ("rounds", "I"), ("local_epochs", "E"),
        ("batch_size", "b"), ("num_nodes", "N"), ("lr_g", "lr_g"),
        ("lr_d", "lr_d"), ("seed", "seed"), ("noise_dim", "noise_dim"),
        ("sample_len", "sample_len"), ("gen_hidden", "gen_hidden"),
        ("disc_hidden", "disc_hidden"), ("non_saturating", "non_saturating"),
        ("momentum", "momentum"), ("parallel", "parallel"),
        ("mmd_every", "mmd_every"), ("mmd_sample", "mmd_sample"),
    )

    def validate(self) -> None:
        if self.protocol not in ("fgan1", "fgan2"):
            raise ConfigError(f"protocol: expected 'fgan1' or 'fgan2', got {self.protocol!r}")
        for key in ("local_epochs", "batch_size", "num_nodes", "noise_dim", "sample_len"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{self._external(key)}: must be >= 1")
        if self.rounds < 0:
            raise ConfigError("I: must be >= 0")
        for key in ("lr_g", "lr_d"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key}: must be >= 0")
        if self.mmd_every < 0:
            raise ConfigError("mmd_every: must be >= 0")

    def _external(self, field_name: str) -> str:
        for fname, ext in self._KEY_MAP:
            if fname == field_name:
                return ext
        return field_name

    def to_dict(self) -> dict:
        out = {}
        for fname, ext in self._KEY_MAP:
            value = getattr(self, fname)
            out[ext] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        kwargs = {}
        known = {ext: fname for fname, ext in cls._KEY_MAP}
        for key, value in raw.items():
            if key not in known:
                raise ConfigError(f"{key}: unknown training key")
            if key in ("gen_hidden", "disc_hidden"):
                value = tuple(value)
            kwargs[known[key]] = value
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


# ---------------------------------------------------------------------------
# Deterministic RNG streams. Every consumer of randomness in a run derives
# its generator from (seed, purpose, node, round) so that protocols with
# shared seeds see identical draws where the math requires it.

STREAM_NOISE = 0
STREAM_REAL = 1
STREAM_EVAL = 2
STREAM_MODEL = 3
STREAM_UPDATE = 4


def stream_rng(seed: int, purpose: int, node: int, round_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(purpose, node, round_index))
    )


def derive_seed(seed: int, purpose: int, node: int = 0, round_index: int = 0) -> int:
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(purpose, node, round_index))
    return int(seq.generate_state(1)[0])


def draw_real_batch(data: np.ndarray, b: int, rng: np.random.Generator) -> np.ndarray:
    """Sample b distinct rows; requires the local dataset to hold at least b."""
    if data.shape[0] < b:
        raise ValueError(f"local dataset has {data.shape[0]} samples, batch needs {b}")
    idx = rng.choice(data.shape[0], size=b, replace=False)
    return data[idx]


def now_ms() -> float:
    return time.perf_counter() * 1000.0
