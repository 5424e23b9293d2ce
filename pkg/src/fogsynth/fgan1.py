"""Computation-efficient protocol: one global generator vs. N remote discriminators.

Each round the coordinator generates two synthetic batches and broadcasts
them; every fog node trains its local discriminator on batch one, scores
batch two, and uploads the generator loss together with the loss gradient
w.r.t. the received samples. The coordinator averages the feedback and
chain-rules through its own generator. No real sample ever leaves a node.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import evaluation
from .federation import (
    DOWN,
    KIND_SAMPLE_GRAD,
    KIND_SAMPLES,
    KIND_SCALAR,
    STREAM_MODEL,
    STREAM_NOISE,
    STREAM_REAL,
    UP,
    FogNode,
    RoundMetrics,
    TrainConfig,
    Transport,
    derive_seed,
    draw_real_batch,
    now_ms,
    stream_rng,
)
from .gan_core import (
    SgdState,
    default_discriminator_arch,
    default_generator_arch,
    disc_loss_and_grad,
    draw_noise,
    gen_forward_cached,
    gen_loss_and_input_grad,
    gen_loss_nonsaturating,
    gen_param_grad,
    init_model,
    sgd_step,
)
from .nn import ModelParams

COORDINATOR = "coordinator"


def node_name(node_id: int) -> str:
    return f"node-{node_id}"


@dataclass
class Fgan1RoundMsgDown:
    """Coordinator -> node: the two synthetic batches of one round."""

    round_index: int
    x_d: np.ndarray  # trains the discriminator
    x_g: np.ndarray  # scores the generator

    def wire_values(self):
        return [self.x_d, self.x_g]


@dataclass
class Fgan1RoundMsgUp:
    """Node -> coordinator: the local generator-loss value."""

    node_id: int
    gen_loss: float

    def validate(self) -> None:
        if not np.isfinite(self.gen_loss):
            raise ValueError(f"non-finite generator loss from node {self.node_id}")

    def wire_scalar(self) -> float:
        return self.gen_loss


@dataclass
class Fgan1GradMsg:
    """Node -> coordinator: gradient of the local generator loss w.r.t. x_g."""

    node_id: int
    grad: np.ndarray

    def wire_values(self):
        return [self.grad]


def local_update_fgan1(
    disc: ModelParams,
    data: np.ndarray,
    x_d: np.ndarray,
    x_g: np.ndarray,
    epochs: int,
    batch_size: int,
    lr_d: float,
    rng: np.random.Generator,
    non_saturating: bool = False,
    opt: SgdState | None = None,
) -> tuple[ModelParams, float, float, np.ndarray]:
    """E discriminator ascent steps, then the generator loss under the final state.

    Each epoch draws a fresh real batch; the broadcast x_d is reused across
    epochs. Returns (updated discriminator, last discriminator loss,
    generator loss, gradient of that loss w.r.t. x_g).
    """
    if epochs < 1:
        raise ValueError(f"local epochs must be >= 1, got {epochs}")
    d_loss = float("nan")
    for _ in range(epochs):
        x_r = draw_real_batch(data, batch_size, rng)
        d_loss, grad = disc_loss_and_grad(disc, x_r, x_d)
        if opt is not None:
            disc = opt.step(disc, grad, lr_d, "ascend")
        else:
            disc = sgd_step(disc, grad, lr_d, "ascend")
    loss_fn = gen_loss_nonsaturating if non_saturating else gen_loss_and_input_grad
    g_loss, g_x = loss_fn(disc, x_g)
    return disc, d_loss, g_loss, g_x


def aggregate_gen_loss(losses: list[float]) -> float:
    """Arithmetic mean of the per-node generator losses."""
    if not losses:
        raise ValueError("cannot aggregate an empty loss list")
    if not all(np.isfinite(losses)):
        raise ValueError("non-finite loss in aggregation")
    return float(np.mean(losses))


def coordinator_round_fgan1(
    gen: ModelParams,
    nodes: list[FogNode],
    cfg: TrainConfig,
    transport: Transport,
    round_index: int,
    gen_opt: SgdState | None = None,
    disc_opts: dict[int, SgdState] | None = None,
) -> tuple[ModelParams, RoundMetrics]:
    """One global round. A node failure aborts the round with no generator update."""
    if not nodes:
        raise ValueError("need at least one fog node")
    t0 = now_ms()
    rng_noise = stream_rng(cfg.seed, STREAM_NOISE, 0, round_index)
    z_d = draw_noise(rng_noise, cfg.batch_size, cfg.noise_dim)
    x_d = gen_forward_cached(gen, z_d)[0]
    z_g = draw_noise(rng_noise, cfg.batch_size, cfg.noise_dim)
    x_g, cache_g = gen_forward_cached(gen, z_g)

    msg = Fgan1RoundMsgDown(round_index, x_d, x_g)
    for node in nodes:
        transport.send(COORDINATOR, node_name(node.node_id), KIND_SAMPLES, msg,
                       round_index, DOWN, provenance="synthetic")

    def run_node(node: FogNode) -> float:
        received = transport.receive(node_name(node.node_id))
        opt = disc_opts.get(node.node_id) if disc_opts else None
        disc, d_loss, g_loss, g_x = local_update_fgan1(
            node.disc, node.data, received.x_d, received.x_g,
            cfg.local_epochs, cfg.batch_size, cfg.lr_d,
            stream_rng(cfg.seed, STREAM_REAL, node.node_id, round_index),
            cfg.non_saturating, opt,
        )
        node.disc = disc
        up = Fgan1RoundMsgUp(node.node_id, g_loss)
        up.validate()
        transport.send(node_name(node.node_id), COORDINATOR, KIND_SCALAR, up,
                       round_index, UP)
        transport.send(node_name(node.node_id), COORDINATOR, KIND_SAMPLE_GRAD,
                       Fgan1GradMsg(node.node_id, g_x), round_index, UP)
        return d_loss

    if cfg.parallel and len(nodes) > 1:
        with ThreadPoolExecutor(max_workers=len(nodes)) as pool:
            d_losses = list(pool.map(run_node, nodes))
    else:
        d_losses = [run_node(node) for node in nodes]

    losses: dict[int, float] = {}
    grads: dict[int, np.ndarray] = {}
    for _ in range(2 * len(nodes)):
        payload = transport.receive(COORDINATOR)
        if isinstance(payload, Fgan1RoundMsgUp):
            losses[payload.node_id] = payload.gen_loss
        else:
            grads[payload.node_id] = payload.grad

    order = sorted(losses)
    agg_loss = aggregate_gen_loss([losses[n] for n in order])
    mean_grad = np.mean(np.stack([grads[n] for n in order]), axis=0)
    g_flat = gen_param_grad(gen, cache_g, mean_grad)
    if gen_opt is not None:
        gen = gen_opt.step(gen, g_flat, cfg.lr_g, "descend")
    else:
        gen = sgd_step(gen, g_flat, cfg.lr_g, "descend")

    counts = transport.bytes_for_round(round_index)
    metrics = RoundMetrics(
        round_index=round_index,
        disc_loss=float(np.mean(d_losses)),
        gen_loss=agg_loss,
        bytes_up=counts["up"],
        bytes_down=counts["down"],
        wall_ms=now_ms() - t0,
    )
    return gen, metrics


@dataclass
class Fgan1Result:
    gen: ModelParams
    nodes: list[FogNode]
    metrics: list[RoundMetrics]
    transport: Transport


def run_fgan1(
    cfg: TrainConfig,
    node_data: list[np.ndarray],
    transport: Transport | None = None,
    init_gen: ModelParams | None = None,
    init_discs: list[ModelParams] | None = None,
) -> Fgan1Result:
    """Run I rounds of the sample-exchange protocol over the given fog shards."""
    cfg.validate()
    if len(node_data) != cfg.num_nodes:
        raise ValueError(f"N={cfg.num_nodes} but {len(node_data)} datasets supplied")
    for i, data in enumerate(node_data):
        if data.shape[0] < cfg.batch_size:
            raise ValueError(f"node {i} holds {data.shape[0]} samples, batch needs {cfg.batch_size}")
        if data.shape[1] != cfg.sample_len:
            raise ValueError(f"node {i} sample length {data.shape[1]} != {cfg.sample_len}")

    gen = init_gen if init_gen is not None else init_model(
        default_generator_arch(cfg.noise_dim, cfg.sample_len, cfg.gen_hidden),
        derive_seed(cfg.seed, STREAM_MODEL, 0, 0), "generator")
    nodes = []
    for i, data in enumerate(node_data):
        disc = init_discs[i] if init_discs is not None else init_model(
            default_discriminator_arch(cfg.sample_len, cfg.disc_hidden),
            derive_seed(cfg.seed, STREAM_MODEL, i, 1), "discriminator")
        nodes.append(FogNode(node_id=i, data=data, disc=disc))

    if transport is None:
        transport = Transport()
    transport.register(COORDINATOR)
    for node in nodes:
        transport.register(node_name(node.node_id))

    gen_opt = SgdState(cfg.momentum) if cfg.momentum else None
    disc_opts = ({n.node_id: SgdState(cfg.momentum) for n in nodes}
                 if cfg.momentum else None)
    real_ref = evaluation.real_reference(node_data, cfg) if cfg.mmd_every else None

    metrics: list[RoundMetrics] = []
    for round_index in range(1, cfg.rounds + 1):
        gen, m = coordinator_round_fgan1(gen, nodes, cfg, transport, round_index,
                                         gen_opt, disc_opts)
        if cfg.mmd_every and (round_index % cfg.mmd_every == 0 or round_index == cfg.rounds):
            m.mmd = evaluation.synth_mmd(gen, real_ref, cfg, round_index)
        metrics.append(m)

    transport.assert_synthetic_only()
    return Fgan1Result(gen=gen, nodes=nodes, metrics=metrics, transport=transport)
