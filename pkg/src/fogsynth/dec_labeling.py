"""Pseudo-labeling of synthesized corpora via deep embedded clustering.

An autoencoder is pretrained on the synthetic corpus, its encoder kept, and
cluster centroids refined jointly with the encoder by minimizing the KL
divergence between the Student-t soft assignment Q and its sharpened target
P. A per-cluster-count BIC score picks the number of clusters: the chosen k
is where the BIC drops the most from k-1 (the largest-increase rule is
available behind a flag).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .nn import Mlp, ModelParams, init_params, mlp_backward, mlp_forward

_Q_EPS = 1e-12

# rng stream tags local to this module
_KMEANS = 0
_PRETRAIN = 1


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


@dataclass
class SynthDataset:
    """The synthesized corpus to be pseudo-labeled; rows are samples."""

    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] < 1:
            raise ValueError(f"need a non-empty n x L matrix, got shape {self.samples.shape}")

    @property
    def count(self) -> int:
        return int(self.samples.shape[0])

    @property
    def dim(self) -> int:
        return int(self.samples.shape[1])


@dataclass
class ClusterModel:
    """Encoder parameters plus k latent centroids."""

    encoder: ModelParams
    centroids: np.ndarray
    k: int

    def validate(self) -> None:
        if self.k < 1 or self.centroids.shape[0] != self.k:
            raise ValueError(f"expected {self.k} centroids, got {self.centroids.shape}")
        if not np.all(np.isfinite(self.centroids)):
            raise ValueError("non-finite centroid")
        if self.k > 1:
            d = cdist(self.centroids, self.centroids)
            if np.min(d[~np.eye(self.k, dtype=bool)]) == 0.0:
                raise ValueError("duplicate centroids")

    def latents(self, x: np.ndarray) -> np.ndarray:
        return mlp_forward(self.encoder, x)[0]

    def soft(self, x: np.ndarray) -> np.ndarray:
        return soft_assign(self.latents(x), self.centroids)

    def hard_labels(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.soft(x), axis=1)


@dataclass
class DecConfig:
    K_max: int = 20
    delta: float = 0.001          # stop when the relabeled fraction is <= delta
    max_iters: int = 100
    latent_dim: int = 10
    encoder_hidden: tuple[int, ...] = (64,)
    pretrain_epochs: int = 300
    pretrain_lr: float = 0.5
    dec_lr: float = 0.05
    kmeans_restarts: int = 10
    seed: int = 0
    selection_rule: str = "largest-decrease"

    _KEY_MAP = (
        ("K_max", "K_max"), ("delta", "delta"), ("max_iters", "I_max"),
        ("latent_dim", "m"), ("encoder_hidden", "encoder_hidden"),
        ("pretrain_epochs", "pretrain_epochs"), ("pretrain_lr", "pretrain_lr"),
        ("dec_lr", "dec_lr"), ("kmeans_restarts", "kmeans_restarts"),
        ("seed", "seed"), ("selection_rule", "selection_rule"),
    )

    def validate(self) -> None:
        if self.K_max < 2:
            raise ValueError(f"K_max: must be >= 2, got {self.K_max}")
        if self.delta <= 0:
            raise ValueError(f"delta: must be > 0, got {self.delta}")
        if self.max_iters < 1:
            raise ValueError("I_max: must be >= 1")
        if self.latent_dim < 1:
            raise ValueError("m: must be >= 1")
        if self.selection_rule not in ("largest-decrease", "largest-increase"):
            raise ValueError(f"selection_rule: unknown rule {self.selection_rule!r}")

    def to_dict(self) -> dict:
        out = {}
        for fname, ext in self._KEY_MAP:
            value = getattr(self, fname)
            out[ext] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "DecConfig":
        known = {ext: fname for fname, ext in cls._KEY_MAP}
        kwargs = {}
        for key, value in raw.items():
            if key not in known:
                raise ValueError(f"{key}: unknown clustering key")
            if key == "encoder_hidden":
                value = tuple(value)
            kwargs[known[key]] = value
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


# ---------------------------------------------------------------------------
# Core formulas


def soft_assign(latents: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Student-t soft assignment: rows are probability vectors over clusters."""
    if centroids.ndim != 2 or centroids.shape[0] < 1:
        raise ValueError("need at least one centroid")
    affinity = 1.0 / (1.0 + cdist(latents, centroids, "sqeuclidean"))
    return affinity / affinity.sum(axis=1, keepdims=True)


def target_dist(q: np.ndarray) -> np.ndarray:
    """Sharpened self-training target: square Q, reweight by cluster mass, renormalize."""
    mass = q.sum(axis=0)
    if np.any(mass <= 0.0):
        raise ValueError(f"empty soft cluster(s) {np.flatnonzero(mass <= 0.0).tolist()}")
    weighted = q**2 / mass
    return weighted / weighted.sum(axis=1, keepdims=True)


def kl_loss(p: np.ndarray, q: np.ndarray) -> float:
    """KL(P || Q) summed over all samples and clusters; 0*log(0) counts as 0."""
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {q.shape}")
    q_safe = np.maximum(q, _Q_EPS)
    terms = np.where(p > 0.0, p * np.log(np.maximum(p, _Q_EPS) / q_safe), 0.0)
    value = float(terms.sum())
    # Gibbs' inequality guarantees >= 0; absorb float rounding near P = Q.
    return 0.0 if -1e-12 < value < 0.0 else value


def kl_grads(latents: np.ndarray, centroids: np.ndarray, p: np.ndarray,
             q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of kl_loss w.r.t. latents and centroids, with P held constant.

    With a = 1/(1 + ||z_i - mu_j||^2):
        dL/dz_i  =  2 sum_j a_ij (p_ij - q_ij)(z_i - mu_j)
        dL/dmu_j = -2 sum_i a_ij (p_ij - q_ij)(z_i - mu_j)
    """
    affinity = 1.0 / (1.0 + cdist(latents, centroids, "sqeuclidean"))
    w = affinity * (p - q)
    grad_z = 2.0 * (latents * w.sum(axis=1, keepdims=True) - w @ centroids)
    grad_mu = -2.0 * (w.T @ latents - w.sum(axis=0)[:, None] * centroids)
    return grad_z, grad_mu


# ---------------------------------------------------------------------------
# Autoencoder pretraining


def _decoder_arch(dec_cfg: DecConfig, dim: int) -> Mlp:
    return Mlp((dec_cfg.latent_dim, *reversed(dec_cfg.encoder_hidden), dim),
               hidden="relu", out="linear")


def _encoder_arch(dec_cfg: DecConfig, dim: int) -> Mlp:
    return Mlp((dim, *dec_cfg.encoder_hidden, dec_cfg.latent_dim),
               hidden="relu", out="linear")


def pretrain_autoencoder(dataset: SynthDataset, cfg: DecConfig
                         ) -> tuple[ModelParams, ModelParams, list[float]]:
    """Full-batch gradient descent on reconstruction MSE; returns loss history."""
    x = dataset.samples
    encoder = init_params(_encoder_arch(cfg, dataset.dim),
                          _rng(cfg.seed, _PRETRAIN, 0).integers(2**32), "encoder")
    decoder = init_params(_decoder_arch(cfg, dataset.dim),
                          _rng(cfg.seed, _PRETRAIN, 1).integers(2**32), "decoder")
    scale = 1.0 / x.size
    history = []
    for _ in range(cfg.pretrain_epochs):
        z, cache_e = mlp_forward(encoder, x)
        recon, cache_d = mlp_forward(decoder, z)
        err = recon - x
        history.append(float(np.mean(err**2)))
        g_dec, g_z = mlp_backward(decoder, cache_d, 2.0 * scale * err)
        g_enc, _ = mlp_backward(encoder, cache_e, g_z)
        decoder = ModelParams(decoder.values - cfg.pretrain_lr * g_dec,
                              decoder.layout, decoder.role, decoder.arch)
        encoder = ModelParams(encoder.values - cfg.pretrain_lr * g_enc,
                              encoder.layout, encoder.role, encoder.arch)
    z, _ = mlp_forward(encoder, x)
    recon, _ = mlp_forward(decoder, z)
    history.append(float(np.mean((recon - x) ** 2)))
    return encoder, decoder, history


def pretrain_encoder(dataset: SynthDataset, cfg: DecConfig) -> ModelParams:
    """Autoencoder pretraining; the decoder half is discarded."""
    encoder, _, _ = pretrain_autoencoder(dataset, cfg)
    return encoder


def reconstruction_error(dataset: SynthDataset, cfg: DecConfig,
                         encoder: ModelParams, decoder: ModelParams) -> float:
    z, _ = mlp_forward(encoder, dataset.samples)
    recon, _ = mlp_forward(decoder, z)
    return float(np.mean((recon - dataset.samples) ** 2))


# ---------------------------------------------------------------------------
# Seeded k-means with restarts (centroid initialization for DEC)


def kmeans(x: np.ndarray, k: int, rng: np.random.Generator,
           restarts: int = 10, max_iters: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding; best of `restarts` by inertia."""
    best_inertia = np.inf
    best: tuple[np.ndarray, np.ndarray] | None = None
    for _ in range(max(1, restarts)):
        centers = _kmeans_pp(x, k, rng)
        labels = np.zeros(len(x), dtype=int)
        for _ in range(max_iters):
            d = cdist(x, centers, "sqeuclidean")
            new_labels = np.argmin(d, axis=1)
            for j in range(k):
                members = x[new_labels == j]
                if len(members):
                    centers[j] = members.mean(axis=0)
                else:  # re-seed a dead center on the worst-fit point
                    worst = np.argmax(d[np.arange(len(x)), new_labels])
                    centers[j] = x[worst]
            if np.array_equal(new_labels, labels):
                break
            labels = new_labels
        inertia = float(cdist(x, centers, "sqeuclidean")[np.arange(len(x)), labels].sum())
        if inertia < best_inertia:
            best_inertia, best = inertia, (centers.copy(), labels.copy())
    assert best is not None
    return best


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = cdist(x, np.stack(centers), "sqeuclidean").min(axis=1)
        total = d2.sum()
        if total <= 0.0:
            centers.append(x[rng.integers(len(x))])
            continue
        centers.append(x[rng.choice(len(x), p=d2 / total)])
    return np.stack(centers).astype(np.float64)


# ---------------------------------------------------------------------------
# DEC training, BIC, and cluster-count selection


@dataclass
class DecTrainResult:
    model: ClusterModel
    labels: np.ndarray
    iterations: int
    final_kl: float


def dec_train(dataset: SynthDataset, k: int, cfg: DecConfig,
              encoder: ModelParams | None = None) -> DecTrainResult:
    """Refine encoder and centroids by KL self-training until labels settle.

    Stops once the fraction of relabeled points is <= delta or max_iters is
    reached. A cluster that loses all members is re-seeded at the latent
    point farthest from its assigned centroid, keeping k fixed.
    """
    cfg.validate()
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if encoder is None:
        encoder = pretrain_encoder(dataset, cfg)
    x = dataset.samples
    n = dataset.count
    scale = 1.0 / n  # per-sample step scaling; the loss itself is the plain sum

    z, cache = mlp_forward(encoder, x)
    centroids, _ = kmeans(z, k, _rng(cfg.seed, _KMEANS, k), cfg.kmeans_restarts)
    q = soft_assign(z, centroids)
    labels = np.argmax(q, axis=1)

    iterations = 0
    final_kl = 0.0
    for _ in range(cfg.max_iters):
        iterations += 1
        p = target_dist(q)
        final_kl = kl_loss(p, q)
        grad_z, grad_mu = kl_grads(z, centroids, p, q)
        g_enc, _ = mlp_backward(encoder, cache, scale * grad_z)
        encoder = ModelParams(encoder.values - cfg.dec_lr * g_enc,
                              encoder.layout, encoder.role, encoder.arch)
        centroids = centroids - cfg.dec_lr * scale * grad_mu

        z, cache = mlp_forward(encoder, x)
        q = soft_assign(z, centroids)
        new_labels = np.argmax(q, axis=1)
        missing = sorted(set(range(k)) - set(new_labels.tolist()))
        if missing:
            dist_own = np.linalg.norm(z - centroids[new_labels], axis=1)
            for j in missing:
                centroids[j] = z[np.argmax(dist_own)]
                dist_own[np.argmax(dist_own)] = -1.0
            q = soft_assign(z, centroids)
            new_labels = np.argmax(q, axis=1)
        changed = float(np.mean(new_labels != labels))
        labels = new_labels
        if changed <= cfg.delta:
            break

    model = ClusterModel(encoder=encoder, centroids=centroids, k=k)
    return DecTrainResult(model=model, labels=labels, iterations=iterations,
                          final_kl=final_kl)


def bic(latents: np.ndarray, labels: np.ndarray, centroids: np.ndarray,
        k: int, count: int | None = None) -> float:
    """BIC_k = n * ln(R/n) + k * ln(n), with R the summed point-to-centroid distances."""
    n = len(latents) if count is None else count
    if len(labels) != len(latents):
        raise ValueError("every latent point needs a label")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"labels outside 0..{k - 1}")
    r = float(np.linalg.norm(latents - centroids[labels], axis=1).sum())
    if r <= 0.0:
        raise ValueError("degenerate clustering: zero total distance")
    return float(n * np.log(r / n) + k * np.log(n))


@dataclass
class SelectKResult:
    k: int
    model: ClusterModel
    labels: np.ndarray
    bic_values: dict[int, float]
    delta_bic: dict[int, float]

    def report(self) -> dict:
        return {
            "k_grid": sorted(self.bic_values),
            "bic": {str(k): self.bic_values[k] for k in sorted(self.bic_values)},
            "delta_bic": {str(k): self.delta_bic[k] for k in sorted(self.delta_bic)},
            "k_star": self.k,
        }


def select_k(dataset: SynthDataset, cfg: DecConfig) -> SelectKResult:
    """Train DEC for k = 1..K_max and pick k by the configured BIC-change rule."""
    cfg.validate()
    if dataset.count < cfg.K_max:
        raise ValueError(f"need at least K_max={cfg.K_max} samples, have {dataset.count}")
    base_encoder = pretrain_encoder(dataset, cfg)
    results: dict[int, DecTrainResult] = {}
    bic_values: dict[int, float] = {}
    for k in range(1, cfg.K_max + 1):
        res = dec_train(dataset, k, cfg, encoder=base_encoder.copy())
        results[k] = res
        latents = res.model.latents(dataset.samples)
        bic_values[k] = bic(latents, res.labels, res.model.centroids, k)
    delta = {k: bic_values[k] - bic_values[k - 1] for k in range(2, cfg.K_max + 1)}
    if cfg.selection_rule == "largest-decrease":
        k_star = min(delta, key=lambda k: (delta[k], k))
    else:
        k_star = min(delta, key=lambda k: (-delta[k], k))
    chosen = results[k_star]
    return SelectKResult(k=k_star, model=chosen.model, labels=chosen.labels,
                         bic_values=bic_values, delta_bic=delta)


def assign_pseudo_labels(dataset: SynthDataset, model: ClusterModel) -> list:
    """Label every synthetic sample with its argmax soft assignment.

    Ties break toward the lowest cluster index. Returns TrafficSample records
    so the result can be written in the standard dataset format.
    """
    from .data_pipeline import TrafficSample

    q = model.soft(dataset.samples)
    labels = np.argmax(q, axis=1)
    return [
        TrafficSample(dataset.samples[i], true_class=int(labels[i]),
                      source_id=f"pseudo-{i}")
        for i in range(dataset.count)
    ]
