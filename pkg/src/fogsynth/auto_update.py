"""Unknown-service detection and the resynthesize/relabel/retrain cycle.

A monitored sample whose top classifier probability falls below the
threshold alpha is treated as an unknown service. Once enough unknowns
accumulate, they are appended to the fog dataset of the node that observed
them, the federated GAN is retrained, the refreshed synthetic corpus is
re-clustered and pseudo-labeled, and a new classifier is trained and
broadcast. Completed cycles keep the previous classifier so a rollback
stays possible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .classifier import (
    ClassifierConfig,
    ClassifierModel,
    load_classifier,
    predict_batch,
    save_classifier,
    train_classifier,
)
from .dec_labeling import DecConfig, SynthDataset, assign_pseudo_labels, select_k
from .federation import (
    DOWN,
    KIND_PARAMS,
    STREAM_UPDATE,
    TrainConfig,
    derive_seed,
    stream_rng,
)
from .gan_core import draw_noise, gen_forward_cached, load_checkpoint, save_checkpoint
from .nn import ModelParams


@dataclass
class UpdatePolicy:
    alpha: float = 0.5            # o* below this marks a sample unknown
    monitor_batch: int = 256
    retrain_trigger: int = 20     # minimum unknown count before a cycle runs
    # Cold restart by default: a warm-started generator tends to abandon the
    # previously covered modes once the merged dataset shifts the equilibrium.
    warm_start: bool = False

    def validate(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha: must be in (0, 1), got {self.alpha}")
        if self.monitor_batch < 1:
            raise ValueError("monitor_batch: must be >= 1")
        if self.retrain_trigger < 1:
            raise ValueError("retrain_trigger: must be >= 1")

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha, "monitor_batch": self.monitor_batch,
            "retrain_trigger": self.retrain_trigger, "warm_start": self.warm_start,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "UpdatePolicy":
        known = {"alpha", "monitor_batch", "retrain_trigger", "warm_start"}
        for key in raw:
            if key not in known:
                raise ValueError(f"{key}: unknown policy key")
        policy = cls(**raw)
        policy.validate()
        return policy


def confidence(probs: np.ndarray) -> float:
    """Confidence score of a classifier output: its maximum entry."""
    probs = np.asarray(probs)
    if probs.ndim != 1 or probs.size == 0 or np.any(probs < 0.0):
        raise ValueError("need a non-empty probability vector")
    return float(probs.max())


def filter_unknown(model: ClassifierModel, batch: np.ndarray, alpha: float
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Split a batch by the confidence rule: o* < alpha means unknown.

    The boundary o* == alpha counts as known. Returns (known, unknown) row
    matrices whose sizes always add up to the batch size.
    """
    scores = predict_batch(model, batch).max(axis=1)
    unknown_mask = scores < alpha
    return batch[~unknown_mask], batch[unknown_mask]


@dataclass
class AlphaCalibration:
    alpha: float
    table: list[dict]  # per candidate alpha: false-unknown rate (+ recall if known)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "table": self.table}


def calibrate_alpha(model: ClassifierModel, known_validation: np.ndarray,
                    max_false_unknown: float = 0.2,
                    unknown_validation: np.ndarray | None = None) -> AlphaCalibration:
    """Pick the largest alpha whose false-unknown rate stays within budget.

    Raising alpha can only grow the unknown set, so the largest admissible
    alpha maximizes unknown-service recall subject to the false-unknown
    constraint. The sweep table doubles as a detection ROC.
    """
    known_scores = np.sort(predict_batch(model, known_validation).max(axis=1))
    n = len(known_scores)
    unknown_scores = None
    if unknown_validation is not None and len(unknown_validation):
        unknown_scores = predict_batch(model, unknown_validation).max(axis=1)

    table = []
    for cand in np.unique(known_scores):
        entry = {"alpha": float(cand),
                 "false_unknown": float(np.mean(known_scores < cand))}
        if unknown_scores is not None:
            entry["unknown_recall"] = float(np.mean(unknown_scores < cand))
        table.append(entry)

    budget = int(np.floor(max_false_unknown * n))
    if budget >= n:
        alpha = float(np.nextafter(1.0, 0.0))
    else:
        alpha = float(known_scores[budget])
    alpha = min(max(alpha, np.nextafter(0.0, 1.0)), np.nextafter(1.0, 0.0))
    return AlphaCalibration(alpha=alpha, table=table)


@dataclass
class PipelineState:
    """Everything the detect-and-retrain loop owns, versioned per cycle."""

    train_cfg: TrainConfig
    dec_cfg: DecConfig
    clf_cfg: ClassifierConfig
    policy: UpdatePolicy
    fog_data: list[np.ndarray]
    gen: ModelParams
    classifier: ClassifierModel
    disc: ModelParams | None = None                  # fgan2 global discriminator
    node_discs: list[ModelParams] | None = None      # fgan1 per-node discriminators
    cluster_k: int | None = None
    synth_size: int = 600
    version: int = 0
    monitor_log: list[dict] = field(default_factory=list)
    classifier_history: list[ClassifierModel] = field(default_factory=list)
    last_cluster_report: dict | None = None


def synthesize_corpus(gen: ModelParams, count: int, seed: int,
                      noise_dim: int) -> SynthDataset:
    """Draw `count` samples from the generator, deterministically."""
    rng = stream_rng(seed, STREAM_UPDATE, 0, 0)
    noise = draw_noise(rng, count, noise_dim)
    return SynthDataset(gen_forward_cached(gen, noise)[0])


def _monitor_entry(version: int, node_id: int, scores: np.ndarray, alpha: float) -> dict:
    hist, edges = np.histogram(scores, bins=10, range=(0.0, 1.0))
    return {
        "version": version,
        "node": node_id,
        "known": int(np.sum(scores >= alpha)),
        "unknown": int(np.sum(scores < alpha)),
        "confidence_histogram": hist.tolist(),
        "bin_edges": edges.tolist(),
    }


def update_cycle(state: PipelineState,
                 incoming: list[tuple[int, np.ndarray]]) -> PipelineState:
    """Run one monitor/retrain cycle; returns a new state, leaving `state` intact.

    incoming pairs (node_id, sample matrix) attribute each monitored batch
    to the fog node that observed it. When the unknown count stays below
    the policy trigger the cycle is a no-op apart from the monitoring log.
    """
    from .fgan1 import run_fgan1
    from .fgan2 import run_fgan2

    state.policy.validate()
    log_entries = []
    unknown_per_node: dict[int, list[np.ndarray]] = {}
    total_unknown = 0
    for node_id, batch in incoming:
        if not 0 <= node_id < len(state.fog_data):
            raise ValueError(f"unknown fog node {node_id}")
        scores = predict_batch(state.classifier, batch).max(axis=1)
        log_entries.append(_monitor_entry(state.version, node_id, scores, state.policy.alpha))
        _, unknown = filter_unknown(state.classifier, batch, state.policy.alpha)
        if len(unknown):
            unknown_per_node.setdefault(node_id, []).append(unknown)
            total_unknown += len(unknown)

    if total_unknown < state.policy.retrain_trigger:
        return replace(state, monitor_log=state.monitor_log + log_entries)

    # Locality: unknowns join the dataset of the node that observed them.
    new_fog = [data.copy() for data in state.fog_data]
    for node_id, chunks in unknown_per_node.items():
        new_fog[node_id] = np.vstack([new_fog[node_id], *chunks])

    new_version = state.version + 1
    retrain_cfg = replace(state.train_cfg,
                          seed=derive_seed(state.train_cfg.seed, STREAM_UPDATE, 1, new_version))
    warm = state.policy.warm_start
    if state.train_cfg.protocol == "fgan1":
        result = run_fgan1(retrain_cfg, new_fog,
                           init_gen=state.gen if warm else None,
                           init_discs=state.node_discs if warm else None)
        gen, disc, node_discs = result.gen, None, [n.disc for n in result.nodes]
    else:
        result = run_fgan2(retrain_cfg, new_fog,
                           init_gen=state.gen if warm else None,
                           init_disc=state.disc if warm else None)
        gen, disc, node_discs = result.gen, result.disc, None

    corpus = synthesize_corpus(gen, state.synth_size, retrain_cfg.seed,
                               retrain_cfg.noise_dim)
    selection = select_k(corpus, state.dec_cfg)
    relabeled = assign_pseudo_labels(corpus, selection.model)
    new_classifier = train_classifier(relabeled, state.clf_cfg)

    # Broadcast the refreshed classifier over the run's transport.
    broadcast_round = retrain_cfg.rounds + 1
    for node in result.nodes:
        result.transport.send("coordinator", f"node-{node.node_id}", KIND_PARAMS,
                              new_classifier.params, broadcast_round, DOWN)

    return replace(
        state,
        fog_data=new_fog,
        gen=gen,
        disc=disc,
        node_discs=node_discs,
        classifier=new_classifier,
        cluster_k=selection.k,
        version=new_version,
        monitor_log=state.monitor_log + log_entries,
        classifier_history=state.classifier_history + [state.classifier],
        last_cluster_report=selection.report(),
    )


# ---------------------------------------------------------------------------
# State directory layout. Checkpoints are versioned: each completed cycle
# writes classifier-v{N} while leaving the previous versions untouched.


def save_state(state: PipelineState, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_checkpoint(state.gen, directory / "gen.ckpt")
    if state.disc is not None:
        save_checkpoint(state.disc, directory / "disc.ckpt")
    if state.node_discs is not None:
        for i, disc in enumerate(state.node_discs):
            save_checkpoint(disc, directory / f"disc-{i:03d}.ckpt")
    for i, data in enumerate(state.fog_data):
        np.save(directory / f"fog-{i:03d}.npy", data)
    save_classifier(state.classifier, directory / f"classifier-v{state.version:03d}.ckpt")
    manifest = {
        "version": state.version,
        "synth_size": state.synth_size,
        "cluster_k": state.cluster_k,
        "num_nodes": len(state.fog_data),
        "train": state.train_cfg.to_dict(),
        "dec": state.dec_cfg.to_dict(),
        "classifier": state.clf_cfg.to_dict(),
        "policy": state.policy.to_dict(),
        "monitor_log": state.monitor_log,
        "classifier_versions": sorted(
            int(p.stem.split("-v")[1]) for p in directory.glob("classifier-v*.ckpt")
        ),
        "last_cluster_report": state.last_cluster_report,
    }
    (directory / "state.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_state(directory: str | Path) -> PipelineState:
    directory = Path(directory)
    manifest = json.loads((directory / "state.json").read_text(encoding="utf-8"))
    train_cfg = TrainConfig.from_dict(manifest["train"])
    version = manifest["version"]
    node_discs = None
    disc = None
    if train_cfg.protocol == "fgan1":
        node_discs = [load_checkpoint(directory / f"disc-{i:03d}.ckpt")
                      for i in range(manifest["num_nodes"])]
    else:
        disc = load_checkpoint(directory / "disc.ckpt")
    history = [
        load_classifier(directory / f"classifier-v{v:03d}.ckpt")
        for v in manifest["classifier_versions"] if v < version
    ]
    return PipelineState(
        train_cfg=train_cfg,
        dec_cfg=DecConfig.from_dict(manifest["dec"]),
        clf_cfg=ClassifierConfig.from_dict(manifest["classifier"]),
        policy=UpdatePolicy.from_dict(manifest["policy"]),
        fog_data=[np.load(directory / f"fog-{i:03d}.npy")
                  for i in range(manifest["num_nodes"])],
        gen=load_checkpoint(directory / "gen.ckpt"),
        classifier=load_classifier(directory / f"classifier-v{version:03d}.ckpt"),
        disc=disc,
        node_discs=node_discs,
        cluster_k=manifest.get("cluster_k"),
        synth_size=manifest["synth_size"],
        version=version,
        monitor_log=manifest.get("monitor_log", []),
        classifier_history=history,
        last_cluster_report=manifest.get("last_cluster_report"),
    )
