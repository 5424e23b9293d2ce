"""Federated GAN traffic synthesis with clustering-based automatic classification.

Two federation protocols train a generative model over decentralized fog
datasets without moving raw samples: a sample-exchange protocol (one global
generator vs. per-node discriminators) and a parameter-averaging protocol
(full GANs everywhere). The synthesized corpus is pseudo-labeled by deep
embedded clustering with BIC cluster-count selection, a global service
classifier is trained on it, and a confidence-threshold monitor detects
unknown services and drives the retrain cycle. Communication costs are
accounted byte-exactly by the in-process transport.
"""

__version__ = "0.1.0"

from .auto_update import (
    PipelineState,
    UpdatePolicy,
    calibrate_alpha,
    confidence,
    filter_unknown,
    synthesize_corpus,
    update_cycle,
)
from .classifier import ClassifierConfig, ClassifierModel, evaluate, predict, train_classifier
from .data_pipeline import (
    CorpusSpec,
    FogDataset,
    TrafficSample,
    ingest_bytes,
    partition,
    reshape_grid,
    split_known_unknown,
    synth_corpus,
)
from .dec_labeling import (
    ClusterModel,
    DecConfig,
    SynthDataset,
    assign_pseudo_labels,
    bic,
    dec_train,
    kl_loss,
    pretrain_encoder,
    select_k,
    soft_assign,
    target_dist,
)
from .evaluation import KernelSpec, mmd2, round_timer
from .federation import FogNode, RoundMetrics, TrainConfig, Transport
from .fgan1 import aggregate_gen_loss, run_fgan1
from .fgan2 import fedavg, run_fgan2
from .gan_core import (
    Batch,
    NoiseSpec,
    disc_forward,
    disc_loss,
    gen_forward,
    gen_loss_local,
    init_model,
    load_checkpoint,
    sample_noise,
    save_checkpoint,
    sgd_step,
)
from .nn import ModelParams

__all__ = [
    "Batch",
    "ClassifierConfig",
    "ClassifierModel",
    "ClusterModel",
    "CorpusSpec",
    "DecConfig",
    "FogDataset",
    "FogNode",
    "KernelSpec",
    "ModelParams",
    "NoiseSpec",
    "PipelineState",
    "RoundMetrics",
    "SynthDataset",
    "TrafficSample",
    "TrainConfig",
    "Transport",
    "UpdatePolicy",
    "aggregate_gen_loss",
    "assign_pseudo_labels",
    "bic",
    "calibrate_alpha",
    "confidence",
    "dec_train",
    "disc_forward",
    "disc_loss",
    "evaluate",
    "fedavg",
    "filter_unknown",
    "gen_forward",
    "gen_loss_local",
    "ingest_bytes",
    "init_model",
    "kl_loss",
    "load_checkpoint",
    "mmd2",
    "partition",
    "predict",
    "pretrain_encoder",
    "reshape_grid",
    "round_timer",
    "run_fgan1",
    "run_fgan2",
    "sample_noise",
    "save_checkpoint",
    "select_k",
    "sgd_step",
    "soft_assign",
    "split_known_unknown",
    "synth_corpus",
    "synthesize_corpus",
    "target_dist",
    "train_classifier",
    "update_cycle",
    "__version__",
]
