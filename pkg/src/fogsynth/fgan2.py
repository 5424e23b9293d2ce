"""Communication-efficient protocol: full GANs at every node, averaged each round.

Per round the coordinator broadcasts the global parameter pair, every node
copies it, runs E local epochs (discriminator ascent, then generator
descent, both on locally generated batches), and uploads its parameters.
The coordinator aggregates with an unweighted elementwise mean. Only
parameter vectors ever transit, so the per-round overhead is independent
of the batch size.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import evaluation
from .federation import (
    DOWN,
    KIND_PARAMS,
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
class Fgan2ParamMsg:
    """Parameter pair on the wire; node_id is -1 for the downlink broadcast."""

    node_id: int
    gen: ModelParams
    disc: ModelParams

    def wire_values(self):
        return [self.gen.values, self.disc.values]


def local_update_fgan2(
    gen: ModelParams,
    disc: ModelParams,
    data: np.ndarray,
    epochs: int,
    batch_size: int,
    lr_g: float,
    lr_d: float,
    noise_rng: np.random.Generator,
    real_rng: np.random.Generator,
    non_saturating: bool = False,
    momentum: float = 0.0,
) -> tuple[ModelParams, ModelParams, float, float]:
    """Copy the global pair, then run E epochs of D-ascent followed by G-descent.

    Every epoch draws a fresh real batch and generates both synthetic
    batches locally. Returns (generator, discriminator, last discriminator
    loss, last generator loss).
    """
    if epochs < 1:
        raise ValueError(f"local epochs must be >= 1, got {epochs}")
    noise_dim = gen.arch.sizes[0]
    opt_g = SgdState(momentum) if momentum else None
    opt_d = SgdState(momentum) if momentum else None
    d_loss = g_loss = float("nan")
    for _ in range(epochs):
        x_r = draw_real_batch(data, batch_size, real_rng)
        z_d = draw_noise(noise_rng, batch_size, noise_dim)
        x_d = gen_forward_cached(gen, z_d)[0]
        d_loss, d_grad = disc_loss_and_grad(disc, x_r, x_d)
        disc = opt_d.step(disc, d_grad, lr_d, "ascend") if opt_d else \
            sgd_step(disc, d_grad, lr_d, "ascend")

        z_g = draw_noise(noise_rng, batch_size, noise_dim)
        x_g, cache_g = gen_forward_cached(gen, z_g)
        loss_fn = gen_loss_nonsaturating if non_saturating else gen_loss_and_input_grad
        g_loss, g_x = loss_fn(disc, x_g)
        g_grad = gen_param_grad(gen, cache_g, g_x)
        gen = opt_g.step(gen, g_grad, lr_g, "descend") if opt_g else \
            sgd_step(gen, g_grad, lr_g, "descend")
    return gen, disc, d_loss, g_loss


def fedavg(params: list[ModelParams]) -> ModelParams:
    """Elementwise arithmetic mean of identically laid-out parameter vectors."""
    if not params:
        raise ValueError("cannot average an empty parameter list")
    first = params[0]
    for p in params[1:]:
        if p.layout != first.layout:
            raise ValueError("parameter layouts do not match")
    mean = np.mean(np.stack([p.values for p in params]), axis=0)
    return ModelParams(mean, first.layout, first.role, first.arch)


@dataclass
class Fgan2Result:
    gen: ModelParams
    disc: ModelParams
    nodes: list[FogNode]
    metrics: list[RoundMetrics]
    transport: Transport


def run_fgan2(
    cfg: TrainConfig,
    node_data: list[np.ndarray],
    transport: Transport | None = None,
    init_gen: ModelParams | None = None,
    init_disc: ModelParams | None = None,
) -> Fgan2Result:
    """Run I rounds of the parameter-averaging protocol over the given shards."""
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
    disc = init_disc if init_disc is not None else init_model(
        default_discriminator_arch(cfg.sample_len, cfg.disc_hidden),
        derive_seed(cfg.seed, STREAM_MODEL, 0, 1), "discriminator")
    nodes = [FogNode(node_id=i, data=data) for i, data in enumerate(node_data)]

    if transport is None:
        transport = Transport()
    transport.register(COORDINATOR)
    for node in nodes:
        transport.register(node_name(node.node_id))

    real_ref = evaluation.real_reference(node_data, cfg) if cfg.mmd_every else None

    metrics: list[RoundMetrics] = []
    for round_index in range(1, cfg.rounds + 1):
        t0 = now_ms()
        for node in nodes:
            transport.send(COORDINATOR, node_name(node.node_id), KIND_PARAMS,
                           Fgan2ParamMsg(-1, gen, disc), round_index, DOWN)

        def run_node(node: FogNode) -> tuple[float, float]:
            received = transport.receive(node_name(node.node_id))
            w_n, t_n, d_loss, g_loss = local_update_fgan2(
                received.gen, received.disc, node.data,
                cfg.local_epochs, cfg.batch_size, cfg.lr_g, cfg.lr_d,
                stream_rng(cfg.seed, STREAM_NOISE, node.node_id, round_index),
                stream_rng(cfg.seed, STREAM_REAL, node.node_id, round_index),
                cfg.non_saturating, cfg.momentum,
            )
            node.gen, node.disc = w_n, t_n
            transport.send(node_name(node.node_id), COORDINATOR, KIND_PARAMS,
                           Fgan2ParamMsg(node.node_id, w_n, t_n), round_index, UP)
            return d_loss, g_loss

        if cfg.parallel and len(nodes) > 1:
            with ThreadPoolExecutor(max_workers=len(nodes)) as pool:
                losses = list(pool.map(run_node, nodes))
        else:
            losses = [run_node(node) for node in nodes]

        uploads: dict[int, Fgan2ParamMsg] = {}
        for _ in range(len(nodes)):
            msg = transport.receive(COORDINATOR)
            uploads[msg.node_id] = msg
        order = sorted(uploads)
        gen = fedavg([uploads[n].gen for n in order])
        disc = fedavg([uploads[n].disc for n in order])

        counts = transport.bytes_for_round(round_index)
        m = RoundMetrics(
            round_index=round_index,
            disc_loss=float(np.mean([d for d, _ in losses])),
            gen_loss=float(np.mean([g for _, g in losses])),
            bytes_up=counts["up"],
            bytes_down=counts["down"],
            wall_ms=now_ms() - t0,
        )
        if cfg.mmd_every and (round_index % cfg.mmd_every == 0 or round_index == cfg.rounds):
            m.mmd = evaluation.synth_mmd(gen, real_ref, cfg, round_index)
        metrics.append(m)

    transport.assert_synthetic_only()
    return Fgan2Result(gen=gen, disc=disc, nodes=nodes, metrics=metrics,
                       transport=transport)
