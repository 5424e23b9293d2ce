"""Generator/discriminator models, their losses, and single optimization steps.

The discriminator ascends
    (1/b) sum log D(x_real) + (1/b) sum log(1 - D(x_fake)),
and the generator descends
    (1/b) sum log(1 - D(x_fake)),
the saturating form. Scores are clamped to [SCORE_EPS, 1 - SCORE_EPS] so no
log term is ever non-finite; the clamp is reflected in the analytic gradients.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn import (
    Arch,
    Mlp,
    ModelParams,
    arch_from_dict,
    arch_to_dict,
    init_params,
    net_backward,
    net_forward,
)

SCORE_EPS = 1e-7

KIND_REAL = "real"
KIND_FAKE_D = "fake_d"  # synthetic batch used to train the discriminator
KIND_FAKE_G = "fake_g"  # synthetic batch used to score the generator


@dataclass(frozen=True)
class NoiseSpec:
    """Standard Gaussian noise source for the generator."""

    dim: int = 64

    def validate(self) -> None:
        if self.dim <= 0:
            raise ValueError(f"noise dim must be positive, got {self.dim}")


@dataclass
class Batch:
    samples: np.ndarray  # (b, L)
    kind: str

    def validate(self) -> None:
        if self.samples.ndim != 2 or self.samples.shape[0] < 1:
            raise ValueError(f"batch must be a non-empty b x L matrix, got {self.samples.shape}")

    @property
    def size(self) -> int:
        return int(self.samples.shape[0])


def default_generator_arch(noise_dim: int = 64, sample_len: int = 1600,
                           hidden: tuple[int, ...] = (256, 512)) -> Mlp:
    return Mlp((noise_dim, *hidden, sample_len), hidden="relu", out="sigmoid")


def default_discriminator_arch(sample_len: int = 1600,
                               hidden: tuple[int, ...] = (512, 256)) -> Mlp:
    return Mlp((sample_len, *hidden, 1), hidden="relu", out="sigmoid")


def init_model(arch: Arch, seed: int, role: str = "generator") -> ModelParams:
    """Deterministic parameter initialization; rejects malformed descriptors."""
    return init_params(arch, seed, role)


def sample_noise(b: int, spec: NoiseSpec, seed: int) -> np.ndarray:
    if b <= 0:
        raise ValueError(f"batch size must be positive, got {b}")
    spec.validate()
    return np.random.default_rng(seed).standard_normal((b, spec.dim))


def draw_noise(rng: np.random.Generator, b: int, dim: int) -> np.ndarray:
    return rng.standard_normal((b, dim))


def gen_forward(gen: ModelParams, noise: np.ndarray, kind: str = KIND_FAKE_G) -> Batch:
    out, _ = net_forward(gen, noise)
    return Batch(out, kind)


def gen_forward_cached(gen: ModelParams, noise: np.ndarray) -> tuple[np.ndarray, object]:
    """Forward pass retaining the cache needed to backpropagate into the generator."""
    return net_forward(gen, noise)


def _score(disc: ModelParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, object]:
    """Clamped scores, plus the clamp mask and forward cache for backprop."""
    raw, cache = net_forward(disc, x)
    scores = np.clip(raw, SCORE_EPS, 1.0 - SCORE_EPS)
    mask = ((raw > SCORE_EPS) & (raw < 1.0 - SCORE_EPS)).astype(np.float64)
    return scores, mask, cache


def disc_forward(disc: ModelParams, batch: Batch | np.ndarray) -> np.ndarray:
    """Scores in [SCORE_EPS, 1 - SCORE_EPS], one per row."""
    x = batch.samples if isinstance(batch, Batch) else batch
    scores, _, _ = _score(disc, x)
    return scores[:, 0]


def _as_matrix(batch: Batch | np.ndarray) -> np.ndarray:
    return batch.samples if isinstance(batch, Batch) else batch


def disc_loss(disc: ModelParams, real: Batch | np.ndarray, fake: Batch | np.ndarray) -> float:
    loss, _ = disc_loss_and_grad(disc, real, fake)
    return loss


def disc_loss_and_grad(
    disc: ModelParams, real: Batch | np.ndarray, fake: Batch | np.ndarray
) -> tuple[float, np.ndarray]:
    """Discriminator objective and its gradient w.r.t. the parameters.

    The discriminator ascends this value, so callers pair it with an
    "ascend" step.
    """
    x_r, x_f = _as_matrix(real), _as_matrix(fake)
    if x_r.shape[0] != x_f.shape[0]:
        raise ValueError(f"real/fake batch sizes differ: {x_r.shape[0]} vs {x_f.shape[0]}")
    b = x_r.shape[0]
    s_r, m_r, cache_r = _score(disc, x_r)
    s_f, m_f, cache_f = _score(disc, x_f)
    loss = float(np.log(s_r).sum() / b + np.log(1.0 - s_f).sum() / b)
    g_r, _ = net_backward(disc, cache_r, m_r / (b * s_r))
    g_f, _ = net_backward(disc, cache_f, -m_f / (b * (1.0 - s_f)))
    return loss, g_r + g_f


def gen_loss_local(disc: ModelParams, fake_g: Batch | np.ndarray) -> float:
    loss, _ = gen_loss_and_input_grad(disc, fake_g)
    return loss


def gen_loss_and_input_grad(
    disc: ModelParams, fake_g: Batch | np.ndarray
) -> tuple[float, np.ndarray]:
    """Generator loss under `disc` and its gradient w.r.t. the fake samples.

    The sample gradient is what a fog node reports upstream so the
    coordinator can chain-rule into its own generator.
    """
    x = _as_matrix(fake_g)
    b = x.shape[0]
    s, m, cache = _score(disc, x)
    loss = float(np.log(1.0 - s).sum() / b)
    _, g_x = net_backward(disc, cache, -m / (b * (1.0 - s)))
    return loss, g_x


def gen_loss_nonsaturating(
    disc: ModelParams, fake_g: Batch | np.ndarray
) -> tuple[float, np.ndarray]:
    """Config-gated alternative: descend -(1/b) sum log D(x_fake)."""
    x = _as_matrix(fake_g)
    b = x.shape[0]
    s, m, cache = _score(disc, x)
    loss = float(-np.log(s).sum() / b)
    _, g_x = net_backward(disc, cache, -m / (b * s))
    return loss, g_x


def gen_param_grad(gen: ModelParams, cache: object, sample_grad: np.ndarray) -> np.ndarray:
    """Chain-rule a gradient w.r.t. generated samples back to generator params."""
    flat, _ = net_backward(gen, cache, sample_grad)
    return flat


def sgd_step(params: ModelParams, grad: np.ndarray, lr: float, direction: str) -> ModelParams:
    if grad.shape != params.values.shape:
        raise ValueError(f"gradient size {grad.shape} != parameter size {params.values.shape}")
    if direction == "ascend":
        values = params.values + lr * grad
    elif direction == "descend":
        values = params.values - lr * grad
    else:
        raise ValueError(f"direction must be 'ascend' or 'descend', got {direction!r}")
    return ModelParams(values, params.layout, params.role, params.arch)


class SgdState:
    """Momentum buffer; with momentum=0 it reduces to a plain SGD step."""

    def __init__(self, momentum: float = 0.0):
        self.momentum = momentum
        self.velocity: np.ndarray | None = None

    def step(self, params: ModelParams, grad: np.ndarray, lr: float, direction: str) -> ModelParams:
        if self.momentum == 0.0:
            return sgd_step(params, grad, lr, direction)
        if self.velocity is None:
            self.velocity = np.zeros_like(params.values)
        self.velocity = self.momentum * self.velocity + grad
        return sgd_step(params, self.velocity, lr, direction)


# ---------------------------------------------------------------------------
# Checkpoints: versioned header + raw float64 values, bit-exact round trip.

_CKPT_MAGIC = b"FSCK"
_CKPT_VERSION = 1


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    header = json.dumps(
        {
            "version": _CKPT_VERSION,
            "role": params.role,
            "arch": arch_to_dict(params.arch),
            "layout": [[name, list(shape)] for name, shape in params.layout],
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", _CKPT_VERSION, len(header)))
        fh.write(header)
        fh.write(struct.pack("<Q", len(params.values)))
        fh.write(np.ascontiguousarray(params.values, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> ModelParams:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint (magic {magic!r})")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != _CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        (count,) = struct.unpack("<Q", fh.read(8))
        values = np.frombuffer(fh.read(count * 8), dtype="<f8").astype(np.float64)
    layout = tuple((name, tuple(shape)) for name, shape in header["layout"])
    params = ModelParams(values, layout, header["role"], arch_from_dict(header["arch"]))
    params.validate()
    return params
