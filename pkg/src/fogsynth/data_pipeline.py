"""Ingestion of raw traffic records, fog partitioning, and synthetic corpora.

Samples are fixed-length byte vectors scaled into [0, 1]: records longer
than L are truncated, shorter ones zero-padded, and each byte divided by
255. The desk-scale corpus generator draws isotropic Gaussian mixtures
around per-class archetype vectors so classes can be made arbitrarily
separable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_SAMPLE_LEN = 1600


@dataclass
class TrafficSample:
    """One fixed-length normalized feature vector with optional ground truth."""

    features: np.ndarray
    true_class: int | None = None
    source_id: str = ""

    def validate(self, sample_len: int | None = None) -> None:
        if self.features.ndim != 1:
            raise ValueError(f"features must be a vector, got shape {self.features.shape}")
        if sample_len is not None and len(self.features) != sample_len:
            raise ValueError(f"expected length {sample_len}, got {len(self.features)}")
        if np.any(self.features < 0.0) or np.any(self.features > 1.0):
            raise ValueError("feature values must lie in [0, 1]")


@dataclass
class FogDataset:
    node_id: int
    samples: list[TrafficSample]

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class CorpusSpec:
    """Desk-scale mixture corpus: one isotropic Gaussian mode per class.

    class_means defaults to block archetypes (each class lights up its own
    stretch of coordinates), which keeps modes separable; pass explicit
    means to override. unknown_classes marks the services a run treats as
    not-yet-known.
    """

    num_classes: int
    feature_dim: int = 64
    samples_per_class: int = 100
    noise_scale: float | tuple[float, ...] = 0.02
    class_means: np.ndarray | None = None
    archetype_high: float = 0.85
    archetype_low: float = 0.1
    unknown_classes: frozenset[int] = frozenset()
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.feature_dim < 1 or self.samples_per_class < 1:
            raise ValueError("feature_dim and samples_per_class must be >= 1")
        if np.any(np.asarray(self.scales()) < 0):
            raise ValueError("noise_scale must be >= 0")
        if not set(self.unknown_classes) <= set(range(self.num_classes)):
            raise ValueError(
                f"unknown_classes {sorted(self.unknown_classes)} outside 0..{self.num_classes - 1}"
            )
        if self.class_means is not None:
            means = np.asarray(self.class_means)
            if means.shape != (self.num_classes, self.feature_dim):
                raise ValueError(
                    f"class_means shape {means.shape} != ({self.num_classes}, {self.feature_dim})"
                )

    def means(self) -> np.ndarray:
        if self.class_means is not None:
            return np.asarray(self.class_means, dtype=np.float64)
        return archetype_means(self.num_classes, self.feature_dim,
                               high=self.archetype_high, low=self.archetype_low)

    def scales(self) -> np.ndarray:
        """Per-class noise scales, broadcasting a scalar across classes."""
        if np.isscalar(self.noise_scale):
            return np.full(self.num_classes, float(self.noise_scale))
        scales = np.asarray(self.noise_scale, dtype=np.float64)
        if scales.shape != (self.num_classes,):
            raise ValueError(f"noise_scale needs one value per class, got {scales.shape}")
        return scales

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "feature_dim": self.feature_dim,
            "samples_per_class": self.samples_per_class,
            "noise_scale": (float(self.noise_scale) if np.isscalar(self.noise_scale)
                            else [float(v) for v in self.noise_scale]),
            "class_means": (None if self.class_means is None
                            else np.asarray(self.class_means).tolist()),
            "archetype_high": self.archetype_high,
            "archetype_low": self.archetype_low,
            "unknown_classes": sorted(self.unknown_classes),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "CorpusSpec":
        known = {"num_classes", "feature_dim", "samples_per_class", "noise_scale",
                 "class_means", "archetype_high", "archetype_low", "unknown_classes", "seed"}
        for key in raw:
            if key not in known:
                raise ValueError(f"{key}: unknown corpus key")
        kwargs = dict(raw)
        if isinstance(kwargs.get("noise_scale"), list):
            kwargs["noise_scale"] = tuple(kwargs["noise_scale"])
        if kwargs.get("class_means") is not None:
            kwargs["class_means"] = np.asarray(kwargs["class_means"], dtype=np.float64)
        kwargs["unknown_classes"] = frozenset(kwargs.get("unknown_classes", ()))
        spec = cls(**kwargs)
        spec.validate()
        return spec


def archetype_means(num_classes: int, feature_dim: int,
                    high: float = 0.85, low: float = 0.1) -> np.ndarray:
    """Block archetypes: class c is `high` on its own coordinate block, `low` elsewhere."""
    means = np.full((num_classes, feature_dim), low)
    block = max(1, feature_dim // num_classes)
    for c in range(num_classes):
        lo = (c * block) % feature_dim
        means[c, lo : lo + block] = high
    return means


# ---------------------------------------------------------------------------
# Operations


def ingest_bytes(raw: bytes, sample_len: int = DEFAULT_SAMPLE_LEN,
                 source_id: str = "", true_class: int | None = None) -> TrafficSample:
    """Truncate/zero-pad a raw byte record to sample_len and scale by 1/255."""
    if len(raw) == 0:
        raise ValueError("cannot ingest an empty record")
    if sample_len <= 0:
        raise ValueError(f"sample_len must be positive, got {sample_len}")
    buf = np.frombuffer(raw[:sample_len], dtype=np.uint8).astype(np.float64)
    if len(buf) < sample_len:
        buf = np.concatenate([buf, np.zeros(sample_len - len(buf))])
    return TrafficSample(buf / 255.0, true_class=true_class, source_id=source_id)


def reshape_grid(sample: TrafficSample, height: int, width: int) -> np.ndarray:
    """Row-major h x w view of the feature vector; h*w must equal its length."""
    if height * width != len(sample.features):
        raise ValueError(
            f"{height}x{width} grid does not match feature length {len(sample.features)}"
        )
    return sample.features.reshape(height, width)


def partition(samples: list[TrafficSample], num_nodes: int, seed: int) -> list[FogDataset]:
    """Uniform random split into num_nodes disjoint shards, sizes within 1."""
    if num_nodes < 1:
        raise ValueError(f"num_nodes must be >= 1, got {num_nodes}")
    if len(samples) < num_nodes:
        raise ValueError(f"cannot split {len(samples)} samples across {num_nodes} nodes")
    order = np.random.default_rng(seed).permutation(len(samples))
    base, extra = divmod(len(samples), num_nodes)
    shards, start = [], 0
    for node_id in range(num_nodes):
        size = base + (1 if node_id < extra else 0)
        shards.append(FogDataset(node_id, [samples[i] for i in order[start : start + size]]))
        start += size
    return shards


def restrict_classes(samples: list[TrafficSample], num_nodes: int, seed: int,
                     classes_per_node: int) -> list[FogDataset]:
    """Non-IID variant: each node only receives a limited set of classes."""
    if classes_per_node < 1:
        raise ValueError("classes_per_node must be >= 1")
    classes = sorted({s.true_class for s in samples if s.true_class is not None})
    if not classes:
        raise ValueError("class-restricted partition needs labeled samples")
    rng = np.random.default_rng(seed)
    allowed = [set(rng.choice(classes, size=min(classes_per_node, len(classes)),
                              replace=False).tolist()) for _ in range(num_nodes)]
    shards = [FogDataset(node_id, []) for node_id in range(num_nodes)]
    for i in rng.permutation(len(samples)):
        sample = samples[i]
        candidates = [n for n in range(num_nodes)
                      if sample.true_class is None or sample.true_class in allowed[n]]
        if not candidates:
            candidates = list(range(num_nodes))
        target = min(candidates, key=lambda n: len(shards[n].samples))
        shards[target].samples.append(sample)
    empty = [s.node_id for s in shards if not s.samples]
    if empty:
        raise ValueError(f"nodes {empty} received no samples; relax the class restriction")
    return shards


def synth_corpus(spec: CorpusSpec) -> list[TrafficSample]:
    """Deterministically draw the labeled mixture corpus described by `spec`."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    means = spec.means()
    scales = spec.scales()
    samples = []
    for c in range(spec.num_classes):
        draws = means[c] + scales[c] * rng.standard_normal(
            (spec.samples_per_class, spec.feature_dim))
        np.clip(draws, 0.0, 1.0, out=draws)
        for j in range(spec.samples_per_class):
            samples.append(TrafficSample(draws[j], true_class=c,
                                         source_id=f"synth-{spec.seed}-{c}-{j}"))
    return samples


def split_known_unknown(samples: list[TrafficSample],
                        unknown_classes: set[int] | frozenset[int]
                        ) -> tuple[list[TrafficSample], list[TrafficSample]]:
    """Exact partition by membership of the true class in unknown_classes."""
    known = [s for s in samples if s.true_class not in unknown_classes]
    unknown = [s for s in samples if s.true_class in unknown_classes]
    return known, unknown


def features_matrix(samples: list[TrafficSample]) -> np.ndarray:
    if not samples:
        raise ValueError("empty sample list")
    return np.stack([s.features for s in samples])


def labels_vector(samples: list[TrafficSample]) -> np.ndarray:
    return np.array([-1 if s.true_class is None else s.true_class for s in samples])


# ---------------------------------------------------------------------------
# Dataset files. Text format: one record per line,
#   source_id,class_id,f0,...,f{L-1}
# with class_id -1 for unlabeled; float repr round-trips exactly. The binary
# variant has a 16-byte header (magic, version, L, count) and stores features
# as float32 for compactness.

_DATA_MAGIC = b"FGDS"
_DATA_VERSION = 1


def save_dataset_text(samples: list[TrafficSample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            if "," in s.source_id:
                raise ValueError(f"source_id {s.source_id!r} may not contain a comma")
            label = -1 if s.true_class is None else s.true_class
            fh.write(s.source_id + "," + str(label) + ","
                     + ",".join(repr(float(v)) for v in s.features) + "\n")


def load_dataset_text(path: str | Path) -> list[TrafficSample]:
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 3:
                raise ValueError(f"{path}:{line_no}: malformed record")
            label = int(parts[1])
            features = np.array([float(v) for v in parts[2:]])
            samples.append(TrafficSample(features, None if label < 0 else label, parts[0]))
    return samples


def save_dataset_binary(samples: list[TrafficSample], path: str | Path) -> None:
    if not samples:
        raise ValueError("refusing to write an empty dataset")
    sample_len = len(samples[0].features)
    for s in samples:
        if len(s.features) != sample_len:
            raise ValueError("all samples in a dataset file must share one length")
    with open(path, "wb") as fh:
        fh.write(_DATA_MAGIC)
        fh.write(struct.pack("<III", _DATA_VERSION, sample_len, len(samples)))
        for s in samples:
            sid = s.source_id.encode("utf-8")
            label = -1 if s.true_class is None else s.true_class
            fh.write(struct.pack("<H", len(sid)))
            fh.write(sid)
            fh.write(struct.pack("<i", label))
            fh.write(np.ascontiguousarray(s.features, dtype="<f4").tobytes())


def load_dataset_binary(path: str | Path) -> list[TrafficSample]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _DATA_MAGIC:
            raise ValueError(f"{path}: not a dataset file (magic {magic!r})")
        version, sample_len, count = struct.unpack("<III", fh.read(12))
        if version != _DATA_VERSION:
            raise ValueError(f"{path}: unsupported dataset version {version}")
        samples = []
        for _ in range(count):
            (sid_len,) = struct.unpack("<H", fh.read(2))
            sid = fh.read(sid_len).decode("utf-8")
            (label,) = struct.unpack("<i", fh.read(4))
            features = np.frombuffer(fh.read(sample_len * 4), dtype="<f4").astype(np.float64)
            samples.append(TrafficSample(features, None if label < 0 else label, sid))
    return samples


def load_dataset(path: str | Path) -> list[TrafficSample]:
    """Dispatch on the magic bytes: binary container or text records."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == _DATA_MAGIC:
        return load_dataset_binary(path)
    return load_dataset_text(path)
