"""Run configuration: one JSON file per run, with CLI overrides on top.

Top-level keys carry the federation hyperparameters (protocol, I, E, b, N,
lr_g, lr_d, seed, noise_dim, ...); the corpus, clustering, classifier, and
update-policy settings live in their own sections. parse -> serialize ->
parse is the identity, and every artifact directory receives the exact
config that produced it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .auto_update import UpdatePolicy
from .classifier import ClassifierConfig
from .data_pipeline import CorpusSpec
from .dec_labeling import DecConfig
from .federation import ConfigError, TrainConfig

DEFAULT_STAGES = ("synth-data", "train", "label", "classify", "evaluate")

_TRAIN_KEYS = tuple(ext for _, ext in TrainConfig._KEY_MAP)
_TOP_KEYS = set(_TRAIN_KEYS) | {
    "corpus", "dec", "classifier", "policy", "alpha", "n_synth",
    "run_name", "stages", "paths",
}


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    corpus: CorpusSpec | None = None
    dec: DecConfig = field(default_factory=DecConfig)
    clf: ClassifierConfig = field(default_factory=ClassifierConfig)
    policy: UpdatePolicy = field(default_factory=UpdatePolicy)
    n_synth: int = 600
    run_name: str = "run"
    stages: tuple[str, ...] = DEFAULT_STAGES
    artifact_root: str | None = None

    def validate(self) -> None:
        self.train.validate()
        if self.corpus is not None:
            try:
                self.corpus.validate()
            except ValueError as err:
                raise ConfigError(f"corpus.{err}") from err
        for section, cfg in (("dec", self.dec), ("classifier", self.clf),
                             ("policy", self.policy)):
            try:
                cfg.validate()
            except ValueError as err:
                raise ConfigError(f"{section}.{err}") from err
        if self.n_synth < 1:
            raise ConfigError("n_synth: must be >= 1")
        for stage in self.stages:
            if stage not in DEFAULT_STAGES + ("update",):
                raise ConfigError(f"stages: unknown stage {stage!r}")

    def to_dict(self) -> dict:
        out = self.train.to_dict()
        out["corpus"] = self.corpus.to_dict() if self.corpus else None
        out["dec"] = self.dec.to_dict()
        out["classifier"] = self.clf.to_dict()
        policy = self.policy.to_dict()
        out["alpha"] = policy.pop("alpha")
        out["policy"] = policy
        out["n_synth"] = self.n_synth
        out["run_name"] = self.run_name
        out["stages"] = list(self.stages)
        out["paths"] = {"artifact_root": self.artifact_root}
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        for key in raw:
            if key not in _TOP_KEYS:
                raise ConfigError(f"{key}: unknown configuration key")
        train_raw = {k: v for k, v in raw.items() if k in _TRAIN_KEYS}
        train = TrainConfig.from_dict(train_raw)

        corpus = None
        if raw.get("corpus") is not None:
            try:
                corpus = CorpusSpec.from_dict(raw["corpus"])
            except ValueError as err:
                raise ConfigError(f"corpus.{err}") from err
        try:
            dec = DecConfig.from_dict(raw.get("dec", {}))
        except ValueError as err:
            raise ConfigError(f"dec.{err}") from err
        try:
            clf = ClassifierConfig.from_dict(raw.get("classifier", {}))
        except ValueError as err:
            raise ConfigError(f"classifier.{err}") from err

        policy_raw = dict(raw.get("policy", {}))
        if "alpha" in raw:
            policy_raw["alpha"] = raw["alpha"]
        try:
            policy = UpdatePolicy.from_dict(policy_raw)
        except ValueError as err:
            raise ConfigError(f"policy.{err}") from err

        paths = raw.get("paths", {}) or {}
        cfg = cls(
            train=train,
            corpus=corpus,
            dec=dec,
            clf=clf,
            policy=policy,
            n_synth=raw.get("n_synth", 600),
            run_name=raw.get("run_name", "run"),
            stages=tuple(raw.get("stages", DEFAULT_STAGES)),
            artifact_root=paths.get("artifact_root"),
        )
        cfg.validate()
        return cfg


def load_config(path: str | Path) -> dict:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: not valid JSON ({err})") from err
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return raw


def apply_overrides(raw: dict, overrides: list[str]) -> list[str]:
    """Apply `--set dotted.key=value` overrides in place; returns log lines."""
    log = []
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, _, text = item.partition("=")
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text  # bare string
        node = raw
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{key}: cannot descend into non-object {part!r}")
        node[parts[-1]] = value
        log.append(f"override {key}={text}")
    return log


def parse_config(path: str | Path, overrides: list[str] | None = None
                 ) -> tuple[RunConfig, dict, list[str]]:
    """Load + override + validate; returns (config, raw dict echo, override log)."""
    raw = load_config(path)
    log = apply_overrides(raw, overrides or [])
    cfg = RunConfig.from_dict(raw)
    return cfg, cfg.to_dict(), log
