"""Independent oracles the tests check the library against.

Everything here is deliberately written the slow, obvious way (loops over
the formulas, O(n^2) pair counting, a centralized training loop) so that it
shares no code path with the implementations it verifies.
"""

from __future__ import annotations

import math

import numpy as np

from fogsynth.federation import (
    STREAM_MODEL,
    STREAM_NOISE,
    STREAM_REAL,
    derive_seed,
    draw_real_batch,
    stream_rng,
)
from fogsynth.gan_core import (
    default_discriminator_arch,
    default_generator_arch,
    disc_loss_and_grad,
    draw_noise,
    gen_forward_cached,
    gen_loss_and_input_grad,
    gen_param_grad,
    init_model,
    sgd_step,
)
from fogsynth.nn import ModelParams


def finite_difference(fn, values: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    grad = np.zeros_like(values)
    for i in range(len(values)):
        up, down = values.copy(), values.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (fn(up) - fn(down)) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray,
                   floor: float = 1e-8) -> float:
    """Max elementwise relative error; `floor` guards against FD noise at
    coordinates whose true gradient is effectively zero."""
    scale = np.maximum(floor, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / scale))


# ---------------------------------------------------------------------------
# Clustering-formula oracles: direct elementwise transcriptions.


def soft_assign_brute(latents: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    n, k = len(latents), len(centroids)
    q = np.zeros((n, k))
    for i in range(n):
        for j in range(k):
            q[i, j] = 1.0 / (1.0 + np.sum((latents[i] - centroids[j]) ** 2))
        q[i] /= sum(q[i, jj] for jj in range(k))
    return q


def target_dist_brute(q: np.ndarray) -> np.ndarray:
    n, k = q.shape
    f = [sum(q[i, j] for i in range(n)) for j in range(k)]
    p = np.zeros_like(q)
    for i in range(n):
        denom = sum(q[i, j] ** 2 / f[j] for j in range(k))
        for j in range(k):
            p[i, j] = (q[i, j] ** 2 / f[j]) / denom
    return p


def kl_brute(p: np.ndarray, q: np.ndarray) -> float:
    total = 0.0
    for i in range(p.shape[0]):
        for j in range(p.shape[1]):
            if p[i, j] > 0.0:
                total += p[i, j] * math.log(p[i, j] / q[i, j])
    return total


def bic_brute(latents: np.ndarray, labels: np.ndarray, centroids: np.ndarray,
              k: int) -> float:
    n = len(latents)
    r = 0.0
    for j in range(k):
        for i in range(n):
            if labels[i] == j:
                r += math.sqrt(np.sum((latents[i] - centroids[j]) ** 2))
    return n * math.log(r / n) + k * math.log(n)


# ---------------------------------------------------------------------------
# Pair-decision metric oracle: enumerate every unordered pair.


def pairwise_counts_brute(y_true, y_pred) -> tuple[int, int, int, int]:
    tp = fp = fn = tn = 0
    n = len(y_true)
    for i in range(n):
        for j in range(i + 1, n):
            same_true = y_true[i] == y_true[j]
            same_pred = y_pred[i] == y_pred[j]
            if same_true and same_pred:
                tp += 1
            elif not same_true and same_pred:
                fp += 1
            elif same_true and not same_pred:
                fn += 1
            else:
                tn += 1
    return tp, fp, fn, tn


def expand_contingency(table: np.ndarray) -> tuple[list[int], list[int]]:
    """Materialize one (true, pred) pair per sample from a contingency table."""
    y_true, y_pred = [], []
    for t in range(table.shape[0]):
        for p in range(table.shape[1]):
            y_true.extend([t] * int(table[t, p]))
            y_pred.extend([p] * int(table[t, p]))
    return y_true, y_pred


# ---------------------------------------------------------------------------
# MMD oracle: direct triple expectation with explicit loops.


def mmd2_brute(x_real: np.ndarray, x_synth: np.ndarray, kernel) -> float:
    m, n = len(x_real), len(x_synth)
    rr = sum(kernel(x_real[i], x_real[j]) for i in range(m) for j in range(m)) / (m * m)
    rg = sum(kernel(x_real[i], x_synth[j]) for i in range(m) for j in range(n)) / (m * n)
    gg = sum(kernel(x_synth[i], x_synth[j]) for i in range(n) for j in range(n)) / (n * n)
    return rr - 2.0 * rg + gg


# ---------------------------------------------------------------------------
# Centralized GAN reference for the protocol-equivalence check. Uses the
# shared primitive ops but none of the federation/transport plumbing; with
# N=1 and E=1 both protocols must reproduce this trajectory bit for bit.


def centralized_gan(data: np.ndarray, rounds: int, batch_size: int, lr_g: float,
                    lr_d: float, seed: int, noise_dim: int,
                    gen_hidden: tuple[int, ...], disc_hidden: tuple[int, ...]):
    sample_len = data.shape[1]
    gen = init_model(default_generator_arch(noise_dim, sample_len, gen_hidden),
                     derive_seed(seed, STREAM_MODEL, 0, 0), "generator")
    disc = init_model(default_discriminator_arch(sample_len, disc_hidden),
                      derive_seed(seed, STREAM_MODEL, 0, 1), "discriminator")
    gen_traj, disc_traj = [], []
    for round_index in range(1, rounds + 1):
        noise_rng = stream_rng(seed, STREAM_NOISE, 0, round_index)
        real_rng = stream_rng(seed, STREAM_REAL, 0, round_index)
        z_d = draw_noise(noise_rng, batch_size, noise_dim)
        x_d = gen_forward_cached(gen, z_d)[0]
        x_r = draw_real_batch(data, batch_size, real_rng)
        _, d_grad = disc_loss_and_grad(disc, x_r, x_d)
        disc = sgd_step(disc, d_grad, lr_d, "ascend")
        z_g = draw_noise(noise_rng, batch_size, noise_dim)
        x_g, cache = gen_forward_cached(gen, z_g)
        _, g_x = gen_loss_and_input_grad(disc, x_g)
        gen = sgd_step(gen, gen_param_grad(gen, cache, g_x), lr_g, "descend")
        gen_traj.append(gen.values.copy())
        disc_traj.append(disc.values.copy())
    return gen_traj, disc_traj


def zeroed(params: ModelParams) -> ModelParams:
    """A copy whose parameters are all zero (sigmoid outputs become exactly 0.5)."""
    return ModelParams(np.zeros_like(params.values), params.layout,
                       params.role, params.arch)
