"""Batch entry point: synth-data, train, label, classify, update, evaluate,
compare, report, and a `run` command that chains the configured stages.

Every command takes a JSON run configuration (`--config`), with individual
keys overridable via repeated `--set section.key=value` flags (flags win and
the override is logged). Artifacts land in `--out`, defaulting to
$FOGSYNTH_ARTIFACTS/<run_name> (or ./artifacts/<run_name>). A lock file
keeps two runs from writing the same directory.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation
from .auto_update import load_state, save_state, synthesize_corpus, update_cycle
from .classifier import evaluate as evaluate_classifier
from .classifier import load_classifier, save_classifier, train_classifier
from .config import RunConfig, parse_config
from .data_pipeline import (
    features_matrix,
    load_dataset,
    partition,
    save_dataset_text,
    split_known_unknown,
    synth_corpus,
)
from .dec_labeling import assign_pseudo_labels, select_k
from .federation import ConfigError, RoundMetrics, TransportError
from .fgan1 import run_fgan1
from .fgan2 import run_fgan2
from .gan_core import load_checkpoint, save_checkpoint

LOCK_NAME = ".lock"


class RunDirLock:
    """Exclusive ownership of an artifact directory for the life of a command."""

    def __init__(self, directory: Path):
        self.path = directory / LOCK_NAME
        self._fd = None

    def __enter__(self):
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(
                f"{self.path} exists: another run owns this directory "
                "(remove the lock file if that run is dead)"
            ) from None
        os.write(self._fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        if self._fd is not None:
            os.close(self._fd)
            self.path.unlink(missing_ok=True)


def artifact_dir(args, cfg: RunConfig) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get("FOGSYNTH_ARTIFACTS") or cfg.artifact_root or "artifacts"
    return Path(root) / cfg.run_name


def prepare_dir(directory: Path, config_echo: dict) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.json").write_text(
        json.dumps(config_echo, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _load_run_config(args) -> tuple[RunConfig, dict]:
    cfg, echo, log = parse_config(args.config, getattr(args, "set", None) or [])
    for line in log:
        print(line)
    return cfg, echo


# ---------------------------------------------------------------------------
# Stage implementations (shared between the stand-alone commands and `run`)


def stage_synth_data(cfg: RunConfig, out: Path) -> None:
    if cfg.corpus is None:
        raise ConfigError("corpus: section required for synth-data")
    samples = synth_corpus(cfg.corpus)
    save_dataset_text(samples, out / "data.csv")
    known, unknown = split_known_unknown(samples, cfg.corpus.unknown_classes)
    if unknown:
        save_dataset_text(known, out / "data_known.csv")
        save_dataset_text(unknown, out / "data_unknown.csv")
    print(f"synth-data: {len(samples)} samples "
          f"({len(known)} known / {len(unknown)} unknown) -> {out}")


def stage_train(cfg: RunConfig, echo: dict, out: Path, data_path: Path) -> None:
    samples = load_dataset(data_path)
    shards = partition(samples, cfg.train.num_nodes, cfg.train.seed)
    node_data = [features_matrix(s.samples) for s in shards]
    runner = run_fgan1 if cfg.train.protocol == "fgan1" else run_fgan2
    result = runner(cfg.train, node_data)

    save_checkpoint(result.gen, out / "gen.ckpt")
    if cfg.train.protocol == "fgan1":
        for node in result.nodes:
            save_checkpoint(node.disc, out / f"disc-{node.node_id:03d}.ckpt")
    else:
        save_checkpoint(result.disc, out / "disc.ckpt")

    overhead = result.transport.overhead_report()
    (out / "overhead.json").write_text(
        evaluation.canonical_json(overhead), encoding="utf-8")
    result.transport.export_log(out / "envelopes.jsonl")
    evaluation.emit_trace(result.metrics, out / "trace.jsonl")
    evaluation.emit_timing(result.metrics, out / "timing.json")
    report = evaluation.build_report(echo, result.metrics, overhead)
    evaluation.emit_report(report, out / "report.json")
    if result.metrics:
        print(f"train: {cfg.train.protocol} I={cfg.train.rounds} "
              f"N={cfg.train.num_nodes} -> {out} "
              f"(final gen loss {result.metrics[-1].gen_loss:.4f})")
    else:
        print(f"train: 0 rounds -> {out}")


def stage_label(cfg: RunConfig, out: Path, gen_path: Path) -> None:
    gen = load_checkpoint(gen_path)
    corpus = synthesize_corpus(gen, cfg.n_synth, cfg.train.seed, cfg.train.noise_dim)
    selection = select_k(corpus, cfg.dec)
    labeled = assign_pseudo_labels(corpus, selection.model)
    save_dataset_text(labeled, out / "t_new.csv")
    (out / "cluster_report.json").write_text(
        evaluation.canonical_json(selection.report()), encoding="utf-8")
    print(f"label: n_T={corpus.count} k*={selection.k} -> {out / 't_new.csv'}")


def stage_classify(cfg: RunConfig, out: Path, data_path: Path,
                   test_path: Path | None) -> None:
    labeled = load_dataset(data_path)
    model = train_classifier(labeled, cfg.clf)
    save_classifier(model, out / "classifier.ckpt")
    print(f"classify: arch={cfg.clf.arch} classes={model.num_classes} "
          f"-> {out / 'classifier.ckpt'}")
    if test_path is not None:
        report = evaluate_classifier(model, load_dataset(test_path))
        (out / "eval_report.json").write_text(
            evaluation.canonical_json(report.to_dict()), encoding="utf-8")
        print(f"classify: eval accuracy={report.accuracy:.4f} "
              f"pairwise F1={report.pairwise_f1:.4f}")


def stage_evaluate(cfg: RunConfig, out: Path) -> None:
    gen_path = out / "gen.ckpt"
    data_path = out / "data.csv"
    result: dict = {}
    if gen_path.exists() and data_path.exists():
        gen = load_checkpoint(gen_path)
        real = features_matrix(load_dataset(data_path))
        synth = synthesize_corpus(gen, min(cfg.n_synth, len(real)),
                                  cfg.train.seed, cfg.train.noise_dim)
        result["mmd"] = evaluation.mmd2(real[: synth.count], synth.samples)
    clf_path = out / "classifier.ckpt"
    if clf_path.exists() and data_path.exists():
        model = load_classifier(clf_path)
        labeled = [s for s in load_dataset(data_path) if s.true_class is not None]
        if labeled:
            result["classifier"] = evaluate_classifier(model, labeled).to_dict()
    (out / "evaluation.json").write_text(
        evaluation.canonical_json(result), encoding="utf-8")
    mmd_txt = f"mmd={result['mmd']:.4f}" if "mmd" in result else "mmd=n/a"
    print(f"evaluate: {mmd_txt} -> {out / 'evaluation.json'}")


# ---------------------------------------------------------------------------
# Commands


def cmd_synth_data(args) -> int:
    cfg, echo = _load_run_config(args)
    out = artifact_dir(args, cfg)
    prepare_dir(out, echo)
    with RunDirLock(out):
        stage_synth_data(cfg, out)
    return 0


def cmd_train(args) -> int:
    cfg, echo = _load_run_config(args)
    out = artifact_dir(args, cfg)
    prepare_dir(out, echo)
    with RunDirLock(out):
        stage_train(cfg, echo, out, Path(args.data))
    return 0


def cmd_label(args) -> int:
    cfg, echo = _load_run_config(args)
    out = artifact_dir(args, cfg)
    prepare_dir(out, echo)
    with RunDirLock(out):
        stage_label(cfg, out, Path(args.gen))
    return 0


def cmd_classify(args) -> int:
    cfg, echo = _load_run_config(args)
    out = artifact_dir(args, cfg)
    prepare_dir(out, echo)
    with RunDirLock(out):
        stage_classify(cfg, out, Path(args.data),
                       Path(args.test) if args.test else None)
    return 0


def cmd_run(args) -> int:
    """Execute the configured stages end to end in one artifact directory."""
    cfg, echo = _load_run_config(args)
    out = artifact_dir(args, cfg)
    prepare_dir(out, echo)
    with RunDirLock(out):
        for stage in cfg.stages:
            if stage == "synth-data":
                stage_synth_data(cfg, out)
            elif stage == "train":
                data = out / ("data_known.csv" if (out / "data_known.csv").exists()
                              else "data.csv")
                stage_train(cfg, echo, out, data)
            elif stage == "label":
                stage_label(cfg, out, out / "gen.ckpt")
            elif stage == "classify":
                stage_classify(cfg, out, out / "t_new.csv", None)
            elif stage == "evaluate":
                stage_evaluate(cfg, out)
            else:
                raise ConfigError(f"stages: {stage!r} is not runnable here")
    return 0


def cmd_update(args) -> int:
    cfg, _ = _load_run_config(args)
    state_dir = Path(args.state)
    if not (state_dir / "state.json").exists():
        print(f"error: no pipeline state in {state_dir}", file=sys.stderr)
        return 2
    state = load_state(state_dir)
    incoming = []
    for item in args.incoming:
        node_text, _, path = item.partition(":")
        if not path:
            raise ConfigError(f"--incoming needs NODE:PATH, got {item!r}")
        batch = features_matrix(load_dataset(path))
        incoming.append((int(node_text), batch))
    new_state = update_cycle(state, incoming)
    out = Path(args.out) if args.out else state_dir
    save_state(new_state, out)
    if new_state.version == state.version:
        print(f"update: below retrain trigger; state v{state.version} unchanged "
              f"(monitor log +{len(new_state.monitor_log) - len(state.monitor_log)})")
    else:
        print(f"update: v{state.version} -> v{new_state.version}, "
              f"k*={new_state.cluster_k} -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg, echo = _load_run_config(args)
    out = artifact_dir(args, cfg)
    prepare_dir(out, echo)
    with RunDirLock(out):
        result: dict = {}
        if args.real and args.gen:
            real = features_matrix(load_dataset(args.real))
            gen = load_checkpoint(args.gen)
            synth = synthesize_corpus(gen, min(cfg.n_synth, len(real)),
                                      cfg.train.seed, cfg.train.noise_dim)
            result["mmd"] = evaluation.mmd2(real[: synth.count], synth.samples)
        if args.classifier and args.test:
            model = load_classifier(args.classifier)
            result["classifier"] = evaluate_classifier(
                model, load_dataset(args.test)).to_dict()
        if not result:
            print("error: nothing to evaluate (pass --real/--gen or "
                  "--classifier/--test)", file=sys.stderr)
            return 2
        (out / "evaluation.json").write_text(
            evaluation.canonical_json(result), encoding="utf-8")
        print(f"evaluate -> {out / 'evaluation.json'}")
    return 0


def _run_summary(run_dir: Path) -> dict:
    report = evaluation.load_report(run_dir / "report.json")
    timing_path = run_dir / "timing.json"
    wall = None
    if timing_path.exists():
        records = json.loads(timing_path.read_text(encoding="utf-8"))
        if records:
            wall = float(np.mean([r["wall_ms"] for r in records]))
    rounds = report["rounds"]
    per_round = {}
    if rounds:
        per_round = {
            "bytes_up": float(np.mean([r["bytes_up"] for r in rounds])),
            "bytes_down": float(np.mean([r["bytes_down"] for r in rounds])),
        }
    return {
        "path": str(run_dir),
        "protocol": report["config"].get("protocol"),
        "mmd_trace": report["mmd_trace"],
        "bytes_per_round": per_round,
        "time_per_round_ms": wall,
        "totals": report["overhead"].get("totals", {}),
    }


def cmd_compare(args) -> int:
    for d in (args.run_a, args.run_b):
        if not (Path(d) / "report.json").exists():
            print(f"error: {d} has no report.json", file=sys.stderr)
            return 2
    a = _run_summary(Path(args.run_a))
    b = _run_summary(Path(args.run_b))

    def final_mmd(summary):
        return summary["mmd_trace"][-1]["mmd"] if summary["mmd_trace"] else None

    deltas = {}
    if final_mmd(a) is not None and final_mmd(b) is not None:
        deltas["final_mmd"] = final_mmd(a) - final_mmd(b)
    for key in ("bytes_up", "bytes_down"):
        if key in a["bytes_per_round"] and key in b["bytes_per_round"]:
            deltas[f"{key}_per_round"] = (a["bytes_per_round"][key]
                                          - b["bytes_per_round"][key])
    comparison = {"a": a, "b": b, "deltas": deltas}
    text = json.dumps(comparison, sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"compare -> {args.out}")
    else:
        print(text, end="")
    return 0


def cmd_report(args) -> int:
    """Re-emit report.json from the persisted trace; byte-identical by design."""
    run_dir = Path(args.run)
    config_echo = json.loads((run_dir / "config.json").read_text(encoding="utf-8"))
    metrics = []
    with open(run_dir / "trace.jsonl", "r", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            metrics.append(RoundMetrics(
                round_index=rec["round"], disc_loss=rec["disc_loss"],
                gen_loss=rec["gen_loss"], bytes_up=rec["bytes_up"],
                bytes_down=rec["bytes_down"], wall_ms=rec.get("wall_ms", 0.0),
                mmd=rec.get("mmd")))
    overhead = json.loads((run_dir / "overhead.json").read_text(encoding="utf-8"))
    report = evaluation.build_report(config_echo, metrics, overhead)
    blob = evaluation.emit_report(report, run_dir / "report.json")
    print(f"report: {len(blob)} bytes -> {run_dir / 'report.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fogsynth",
        description="Federated GAN traffic synthesis and automatic classification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", required=True, help="run configuration (JSON)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable; flags win)")
        p.add_argument("--out", help="artifact directory")
        return p

    with_config(sub.add_parser("synth-data", help="generate a synthetic corpus")
                ).set_defaults(fn=cmd_synth_data)

    p = with_config(sub.add_parser("train", help="run the configured FGAN protocol"))
    p.add_argument("--data", required=True, help="dataset file to shard across nodes")
    p.set_defaults(fn=cmd_train)

    p = with_config(sub.add_parser("label", help="synthesize and pseudo-label a corpus"))
    p.add_argument("--gen", required=True, help="generator checkpoint")
    p.set_defaults(fn=cmd_label)

    p = with_config(sub.add_parser("classify", help="train the service classifier"))
    p.add_argument("--data", required=True, help="pseudo-labeled dataset file")
    p.add_argument("--test", help="optional labeled test set")
    p.set_defaults(fn=cmd_classify)

    p = with_config(sub.add_parser("run", help="execute the configured stages"))
    p.set_defaults(fn=cmd_run)

    p = with_config(sub.add_parser("update", help="run one detect-and-retrain cycle"))
    p.add_argument("--state", required=True, help="pipeline state directory")
    p.add_argument("--incoming", action="append", required=True, metavar="NODE:FILE",
                   help="monitored batch observed at a fog node (repeatable)")
    p.set_defaults(fn=cmd_update)

    p = with_config(sub.add_parser("evaluate", help="MMD and/or classifier metrics"))
    p.add_argument("--real", help="real dataset file (for MMD)")
    p.add_argument("--gen", help="generator checkpoint (for MMD)")
    p.add_argument("--classifier", help="classifier checkpoint")
    p.add_argument("--test", help="labeled test set for the classifier")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("compare", help="side-by-side report of two runs")
    p.add_argument("--run-a", required=True)
    p.add_argument("--run-b", required=True)
    p.add_argument("--out", help="write the comparison JSON here")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("report", help="re-emit report.json from persisted state")
    p.add_argument("--run", required=True, help="run directory")
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (TransportError, ValueError, FileNotFoundError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
