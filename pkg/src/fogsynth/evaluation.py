"""Sample-quality measurement (MMD), wall-time scopes, and run reports."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

REPORT_SCHEMA = "fogsynth.report/1"


@dataclass(frozen=True)
class KernelSpec:
    """Kernel for the squared-MMD estimator.

    bandwidth applies to the radial-basis family: either an explicit
    positive lengthscale or "median" for the median pairwise distance of
    the pooled sample.
    """

    family: str = "rbf"
    bandwidth: float | str = "median"

    def validate(self) -> None:
        if self.family not in ("rbf", "linear"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "median":
                raise ValueError(f"bandwidth must be positive or 'median', got {self.bandwidth!r}")
        elif self.bandwidth <= 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth}")


def median_heuristic(pooled: np.ndarray) -> float:
    """Median pairwise Euclidean distance; falls back to 1.0 when degenerate."""
    dists = cdist(pooled, pooled)
    off_diag = dists[~np.eye(len(pooled), dtype=bool)]
    med = float(np.median(off_diag)) if off_diag.size else 0.0
    return med if med > 0.0 else 1.0


def _gram(x: np.ndarray, y: np.ndarray, spec: KernelSpec, bandwidth: float) -> np.ndarray:
    if spec.family == "linear":
        return x @ y.T
    sq = cdist(x, y, "sqeuclidean")
    return np.exp(-sq / (2.0 * bandwidth**2))


def mmd2(x_real: np.ndarray, x_synth: np.ndarray,
         kernel: KernelSpec = KernelSpec()) -> float:
    """Biased (V-statistic) squared maximum mean discrepancy.

    The diagonal terms are included, so identical sample sets score exactly
    zero and the value is always non-negative for a positive-definite kernel.
    """
    kernel.validate()
    x_real = np.atleast_2d(np.asarray(x_real, dtype=np.float64))
    x_synth = np.atleast_2d(np.asarray(x_synth, dtype=np.float64))
    if x_real.shape[0] == 0 or x_synth.shape[0] == 0:
        raise ValueError("both sample sets must be non-empty")
    if kernel.family == "rbf" and kernel.bandwidth == "median":
        bandwidth = median_heuristic(np.vstack([x_real, x_synth]))
    else:
        bandwidth = kernel.bandwidth if isinstance(kernel.bandwidth, float) else 1.0
    k_rr = _gram(x_real, x_real, kernel, bandwidth)
    k_rg = _gram(x_real, x_synth, kernel, bandwidth)
    k_gg = _gram(x_synth, x_synth, kernel, bandwidth)
    return float(k_rr.mean() - 2.0 * k_rg.mean() + k_gg.mean())


class round_timer:
    """Monotonic wall-clock scope: `with round_timer() as t: ...; t.ms`."""

    def __enter__(self) -> "round_timer":
        self._start = time.perf_counter()
        self.ms = 0.0
        return self

    def __exit__(self, *exc) -> None:
        self.ms = (time.perf_counter() - self._start) * 1000.0


# ---------------------------------------------------------------------------
# Helpers used by the protocol runners for per-round MMD snapshots.


def real_reference(node_data: list[np.ndarray], cfg) -> tuple[np.ndarray, float]:
    """Deterministic pooled subsample of the fog shards, for MMD snapshots.

    Also fixes the kernel bandwidth from the real sample alone so the
    per-round MMD trace is comparable across rounds.
    """
    from .federation import STREAM_EVAL, stream_rng

    pooled = np.vstack(node_data)
    n = min(cfg.mmd_sample, pooled.shape[0])
    idx = stream_rng(cfg.seed, STREAM_EVAL, 0, 0).choice(pooled.shape[0], size=n, replace=False)
    ref = pooled[idx]
    return ref, median_heuristic(ref)


def synth_mmd(gen, real_ref: tuple[np.ndarray, float], cfg, round_index: int) -> float:
    """MMD between the real reference and a fresh synthetic batch."""
    from .federation import STREAM_EVAL, stream_rng
    from .gan_core import draw_noise, gen_forward_cached

    ref, bandwidth = real_ref
    rng = stream_rng(cfg.seed, STREAM_EVAL, 0, round_index)
    noise = draw_noise(rng, ref.shape[0], cfg.noise_dim)
    synth = gen_forward_cached(gen, noise)[0]
    return mmd2(ref, synth, KernelSpec("rbf", bandwidth))


# ---------------------------------------------------------------------------
# Structured run reports. The canonical report excludes wall-clock readings
# so a repeated run with the same config and seed is byte-identical; the
# volatile timings go to a sidecar file.


def canonical_json(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"


def build_report(config: dict, round_metrics: list, overhead: dict,
                 eval_metrics: dict | None = None, extra: dict | None = None) -> dict:
    report = {
        "schema": REPORT_SCHEMA,
        "config": config,
        "rounds": [m.to_dict(include_wall=False) for m in round_metrics],
        "mmd_trace": [
            {"round": m.round_index, "mmd": m.mmd}
            for m in round_metrics if m.mmd is not None
        ],
        "overhead": overhead,
        "eval": eval_metrics or {},
    }
    if extra:
        report.update(extra)
    return report


def emit_report(report: dict, path: str | Path) -> bytes:
    """Write the canonical report; returns the exact bytes written."""
    if report.get("schema") != REPORT_SCHEMA:
        raise ValueError(f"report schema must be {REPORT_SCHEMA!r}")
    blob = canonical_json(report).encode("utf-8")
    Path(path).write_bytes(blob)
    return blob


def load_report(path: str | Path) -> dict:
    report = json.loads(Path(path).read_text(encoding="utf-8"))
    if report.get("schema") != REPORT_SCHEMA:
        raise ValueError(f"{path}: unsupported report schema {report.get('schema')!r}")
    return report


def emit_timing(round_metrics: list, path: str | Path) -> None:
    """Volatile wall-clock sidecar, one record per round."""
    records = [{"round": m.round_index, "wall_ms": m.wall_ms} for m in round_metrics]
    Path(path).write_text(json.dumps(records, sort_keys=True) + "\n", encoding="utf-8")


def emit_trace(round_metrics: list, path: str | Path) -> None:
    """Full per-round trace (losses, bytes, wall time), one JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for m in round_metrics:
            fh.write(json.dumps(m.to_dict(include_wall=True), sort_keys=True) + "\n")
