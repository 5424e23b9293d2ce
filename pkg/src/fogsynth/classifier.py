"""Global service classifier trained on pseudo-labeled synthetic traffic.

Three architectures are supported: a fully-connected net on the flat
1 x L vector, a 1-D conv net on the same, and a 2-D conv net on the
grid-reshaped sample. Evaluation reports the pair-counting recall /
precision / F1 (a true positive is a pair of same-class samples placed in
the same predicted class) alongside conventional per-class metrics; since
pseudo-label ids are arbitrary, predicted labels are aligned to ground
truth with an optimal one-to-one matching first.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data_pipeline import TrafficSample, features_matrix, labels_vector
from .gan_core import load_checkpoint, save_checkpoint
from .nn import Conv1dNet, Conv2dNet, Mlp, ModelParams, init_params, net_backward, net_forward

ARCH_KINDS = ("mlp", "conv1d", "conv2d")


@dataclass
class ClassifierConfig:
    arch: str = "mlp"
    epochs: int = 40
    lr: float = 0.1
    batch_size: int = 32
    hidden: tuple[int, ...] = (128, 64)
    grid: tuple[int, int] | None = None  # conv2d reshape; default square
    seed: int = 0

    def validate(self) -> None:
        if self.arch not in ARCH_KINDS:
            raise ValueError(f"arch: expected one of {ARCH_KINDS}, got {self.arch!r}")
        if self.epochs < 0:
            raise ValueError("epochs: must be >= 0")
        if self.lr < 0:
            raise ValueError("lr: must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size: must be >= 1")

    def to_dict(self) -> dict:
        return {
            "arch": self.arch, "epochs": self.epochs, "lr": self.lr,
            "batch_size": self.batch_size, "hidden": list(self.hidden),
            "grid": list(self.grid) if self.grid else None, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ClassifierConfig":
        known = {"arch", "epochs", "lr", "batch_size", "hidden", "grid", "seed"}
        for key in raw:
            if key not in known:
                raise ValueError(f"{key}: unknown classifier key")
        kwargs = dict(raw)
        if "hidden" in kwargs:
            kwargs["hidden"] = tuple(kwargs["hidden"])
        if kwargs.get("grid") is not None:
            kwargs["grid"] = tuple(kwargs["grid"])
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg


@dataclass
class ClassifierModel:
    params: ModelParams
    arch_kind: str
    num_classes: int
    classes: list[int]  # output index -> dataset class id (pseudo or true)

    def validate(self) -> None:
        if len(self.classes) != self.num_classes:
            raise ValueError("class mapping size != num_classes")


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _build_arch(kind: str, sample_len: int, num_classes: int, cfg: ClassifierConfig):
    if kind == "mlp":
        return Mlp((sample_len, *cfg.hidden, num_classes), hidden="relu", out="linear")
    if kind == "conv1d":
        return Conv1dNet(sample_len, num_classes)
    if kind == "conv2d":
        grid = cfg.grid
        if grid is None:
            side = math.isqrt(sample_len)
            if side * side != sample_len:
                raise ValueError(
                    f"sample length {sample_len} is not square; pass an explicit grid"
                )
            grid = (side, side)
        if grid[0] * grid[1] != sample_len:
            raise ValueError(f"grid {grid} does not cover sample length {sample_len}")
        return Conv2dNet(grid, num_classes)
    raise ValueError(f"unknown classifier arch {kind!r}")


def train_classifier(labeled: list[TrafficSample], cfg: ClassifierConfig) -> ClassifierModel:
    """Minibatch cross-entropy training; deterministic for a fixed seed."""
    cfg.validate()
    if not labeled:
        raise ValueError("training set is empty")
    x = features_matrix(labeled)
    raw_labels = labels_vector(labeled)
    if np.any(raw_labels < 0):
        raise ValueError("every training sample needs a class id")
    classes = sorted(set(raw_labels.tolist()))
    if len(classes) < 2:
        raise ValueError(f"need at least 2 classes to train, got {len(classes)}")
    index_of = {c: i for i, c in enumerate(classes)}
    y = np.array([index_of[c] for c in raw_labels])

    arch = _build_arch(cfg.arch, x.shape[1], len(classes), cfg)
    params = init_params(arch, cfg.seed, "classifier")
    rng = np.random.default_rng(cfg.seed)
    n = len(x)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            logits, cache = net_forward(params, x[idx])
            probs = _softmax(logits)
            grad = probs.copy()
            grad[np.arange(len(idx)), y[idx]] -= 1.0
            grad /= len(idx)
            g_flat, _ = net_backward(params, cache, grad)
            params = ModelParams(params.values - cfg.lr * g_flat,
                                 params.layout, params.role, params.arch)
    model = ClassifierModel(params, cfg.arch, len(classes), classes)
    model.validate()
    return model


def predict(model: ClassifierModel, sample: TrafficSample | np.ndarray) -> np.ndarray:
    """Probability vector over the model's classes for one sample."""
    features = sample.features if isinstance(sample, TrafficSample) else sample
    return predict_batch(model, features[None, :])[0]


def predict_batch(model: ClassifierModel, x: np.ndarray) -> np.ndarray:
    logits, _ = net_forward(model.params, x)
    return _softmax(logits)


def predicted_class_ids(model: ClassifierModel, x: np.ndarray) -> np.ndarray:
    """Argmax predictions mapped back to dataset class ids."""
    probs = predict_batch(model, x)
    lut = np.array(model.classes)
    return lut[np.argmax(probs, axis=1)]


# ---------------------------------------------------------------------------
# Metrics


def contingency_table(y_true: np.ndarray, y_pred: np.ndarray,
                      true_ids: list[int], pred_ids: list[int]) -> np.ndarray:
    table = np.zeros((len(true_ids), len(pred_ids)), dtype=np.int64)
    t_index = {c: i for i, c in enumerate(true_ids)}
    p_index = {c: i for i, c in enumerate(pred_ids)}
    for t, p in zip(y_true, y_pred):
        table[t_index[int(t)], p_index[int(p)]] += 1
    return table


def pairwise_counts(table: np.ndarray) -> tuple[int, int, int, int]:
    """Pair-decision counts (TP, FP, FN, TN) from a true-by-predicted table.

    A pair counts as TP when both samples share a true class and a predicted
    class; FP pairs share only the prediction, FN pairs only the true class.
    """

    def pairs(v) -> int:
        v = np.asarray(v, dtype=np.int64)
        return int((v * (v - 1) // 2).sum())

    n = int(table.sum())
    tp = pairs(table.ravel())
    fp = pairs(table.sum(axis=0)) - tp
    fn = pairs(table.sum(axis=1)) - tp
    tn = n * (n - 1) // 2 - tp - fp - fn
    return tp, fp, fn, tn


def pairwise_metrics(table: np.ndarray) -> tuple[float, float, float]:
    tp, fp, fn, _ = pairwise_counts(table)
    recall = tp / (tp + fn) if tp + fn else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return recall, precision, f1


def align_labels(table: np.ndarray, true_ids: list[int],
                 pred_ids: list[int]) -> dict[int, int]:
    """Optimal one-to-one matching of predicted label ids onto true class ids."""
    rows, cols = linear_sum_assignment(-table)
    return {pred_ids[c]: true_ids[r] for r, c in zip(rows, cols)}


@dataclass
class EvalReport:
    pairwise_recall: float
    pairwise_precision: float
    pairwise_f1: float
    macro_recall: float
    macro_precision: float
    macro_f1: float
    accuracy: float
    confusion: np.ndarray  # true classes x raw predicted labels
    true_ids: list[int]
    pred_ids: list[int]
    mapping: dict[int, int]
    per_class_recall: dict[int, float]

    def to_dict(self) -> dict:
        return {
            "pairwise": {
                "recall": self.pairwise_recall,
                "precision": self.pairwise_precision,
                "f1": self.pairwise_f1,
            },
            "macro": {
                "recall": self.macro_recall,
                "precision": self.macro_precision,
                "f1": self.macro_f1,
            },
            "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(),
            "true_ids": self.true_ids,
            "pred_ids": self.pred_ids,
            "mapping": {str(k): v for k, v in sorted(self.mapping.items())},
            "per_class_recall": {str(k): v for k, v in sorted(self.per_class_recall.items())},
        }


def evaluate(model: ClassifierModel, test: list[TrafficSample],
             align: bool = True) -> EvalReport:
    """Score the classifier on ground-truth-labeled samples."""
    if not test:
        raise ValueError("test set is empty")
    y_true = labels_vector(test)
    if np.any(y_true < 0):
        raise ValueError("every test sample needs a ground-truth class")
    y_pred = predicted_class_ids(model, features_matrix(test))
    return evaluate_predictions(y_true, y_pred, align=align)


def evaluate_predictions(y_true: np.ndarray, y_pred: np.ndarray,
                         align: bool = True) -> EvalReport:
    true_ids = sorted(set(int(v) for v in y_true))
    pred_ids = sorted(set(int(v) for v in y_pred))
    table = contingency_table(y_true, y_pred, true_ids, pred_ids)
    pw_recall, pw_precision, pw_f1 = pairwise_metrics(table)

    if align:
        mapping = align_labels(table, true_ids, pred_ids)
    else:
        mapping = {c: c for c in pred_ids}
    aligned = np.array([mapping.get(int(p), -1) for p in y_pred])

    recalls, precisions, f1s, per_class = [], [], [], {}
    for t in true_ids:
        tp = int(np.sum((y_true == t) & (aligned == t)))
        support = int(np.sum(y_true == t))
        claimed = int(np.sum(aligned == t))
        recall = tp / support if support else 0.0
        precision = tp / claimed if claimed else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        recalls.append(recall)
        precisions.append(precision)
        f1s.append(f1)
        per_class[t] = recall
    accuracy = float(np.mean(aligned == y_true))

    return EvalReport(
        pairwise_recall=pw_recall,
        pairwise_precision=pw_precision,
        pairwise_f1=pw_f1,
        macro_recall=float(np.mean(recalls)),
        macro_precision=float(np.mean(precisions)),
        macro_f1=float(np.mean(f1s)),
        accuracy=accuracy,
        confusion=table,
        true_ids=true_ids,
        pred_ids=pred_ids,
        mapping=mapping,
        per_class_recall=per_class,
    )


# ---------------------------------------------------------------------------
# Persistence: shared checkpoint format plus a JSON sidecar for the class map.


def save_classifier(model: ClassifierModel, path: str | Path) -> None:
    path = Path(path)
    save_checkpoint(model.params, path)
    sidecar = {"arch_kind": model.arch_kind, "classes": model.classes}
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, sort_keys=True), encoding="utf-8")


def load_classifier(path: str | Path) -> ClassifierModel:
    path = Path(path)
    params = load_checkpoint(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
    model = ClassifierModel(params, sidecar["arch_kind"],
                            len(sidecar["classes"]), list(sidecar["classes"]))
    model.validate()
    return model
