"""Metrics (ADE, FDE, FDE@t), evaluation over mini-tracks, analytic
baselines, cross-validation aggregation, the trajectories-per-second
benchmark, and the loss-mode ablation harness.

Displacement metrics use box centroids only; width/height errors never
enter them.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, replace

import numpy as np

from .data import MiniTrack, SynthSpec, boxes_to_array, synth_tracks
from .errors import ConfigError, DataError, ShapeError
from .model import (
    LOSS_MODES,
    ModelParams,
    build_features,
    predict,
    predict_from_window,
)
from .training import train

BASELINE_KINDS = ("constant-velocity", "constant-acceleration", "stationary")

__all__ = [
    "BASELINE_KINDS",
    "BenchReport",
    "MetricReport",
    "ablation_run",
    "ade",
    "baseline_predict",
    "benchmark_tps",
    "evaluate",
    "evaluate_baseline",
    "evaluate_predictions",
    "evaluate_with",
    "fde",
    "fde_at",
    "summarize_folds",
]


@dataclass
class MetricReport:
    """Aggregate displacement metrics over a set of mini-tracks.

    ``fde_at`` maps every 1-based horizon step t to the mean displacement at
    that step, so ``fde == fde_at[p]``. ``nonpositive_size_count`` counts
    predicted boxes whose width or height came out <= 0 (they are reported,
    never clamped, since the metrics only read centroids).
    """

    ade: float
    fde: float
    fde_at: dict[int, float]
    n_samples: int
    horizon_p: int
    input_k: int
    nonpositive_size_count: int = 0


def _centroid_displacements(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    if pred.ndim != 2 or pred.shape[0] < 1 or pred.shape[1] != 4:
        raise ShapeError(f"expected (p, 4) box sequences, got {pred.shape}")
    d = pred[:, :2] - gt[:, :2]
    return np.hypot(d[:, 0], d[:, 1])


def ade(pred, gt) -> float:
    """Mean centroid Euclidean distance over all steps."""
    return float(np.mean(_centroid_displacements(pred, gt)))


def fde_at(pred, gt, t: int) -> float:
    """Centroid Euclidean distance at 1-based future step t."""
    disp = _centroid_displacements(pred, gt)
    if not 1 <= t <= disp.shape[0]:
        raise IndexError(
            f"step t={t} outside the horizon 1..{disp.shape[0]}")
    return float(disp[t - 1])


def fde(pred, gt) -> float:
    """Centroid Euclidean distance at the final step."""
    disp = _centroid_displacements(pred, gt)
    return float(disp[-1])


def evaluate_predictions(pairs: list[tuple[np.ndarray, np.ndarray]],
                         input_k: int) -> MetricReport:
    """Aggregate a list of (predicted, ground-truth) box sequences."""
    if not pairs:
        raise ConfigError("nothing to evaluate: empty prediction set")
    disp = np.stack([_centroid_displacements(pr, gt) for pr, gt in pairs])
    p = disp.shape[1]
    per_step = disp.mean(axis=0)
    bad = sum(int(np.count_nonzero(np.asarray(pr)[:, 2:] <= 0))
              for pr, _ in pairs)
    return MetricReport(
        ade=float(disp.mean()),
        fde=float(per_step[-1]),
        fde_at={t: float(per_step[t - 1]) for t in range(1, p + 1)},
        n_samples=len(pairs),
        horizon_p=p,
        input_k=input_k,
        nonpositive_size_count=bad,
    )


def evaluate_with(predict_fn, minitracks: list[MiniTrack], k: int, p: int
                  ) -> MetricReport:
    """Shared protocol: forecast from each mini-track's first k boxes and
    score against its last p. ``predict_fn(boxes, predecessor)`` must return
    a (p, 4) box array."""
    if not minitracks:
        raise ConfigError("nothing to evaluate: empty mini-track set")
    pairs = []
    for j, mt in enumerate(minitracks):
        if len(mt) != k + p:
            raise DataError(
                f"mini-track {j} has {len(mt)} boxes, expected k+p={k + p}")
        pred = predict_fn(mt.boxes[:k], mt.predecessor)
        gt = boxes_to_array(mt.boxes[k:])
        pairs.append((pred, gt))
    return evaluate_predictions(pairs, input_k=k)


def evaluate(params: ModelParams, minitracks: list[MiniTrack]) -> MetricReport:
    """Evaluate a trained model over mini-tracks of length k + p."""
    d = params.dims
    return evaluate_with(
        lambda boxes, predecessor: predict(params, boxes, predecessor),
        minitracks, d.k, d.p)


def evaluate_baseline(kind: str, minitracks: list[MiniTrack], k: int, p: int
                      ) -> MetricReport:
    """Evaluate one analytic baseline under the same protocol as `evaluate`."""
    return evaluate_with(
        lambda boxes, _pred: baseline_predict(kind, boxes, p),
        minitracks, k, p)


def summarize_folds(reports: list[MetricReport]) -> dict:
    """Cross-validation summary: equal weight per fold (mean of fold means),
    regardless of how many samples each fold holds."""
    if not reports:
        raise ConfigError("no fold reports to summarize")
    return {
        "n_folds": len(reports),
        "ade": float(np.mean([r.ade for r in reports])),
        "fde": float(np.mean([r.fde for r in reports])),
        "n_samples": int(sum(r.n_samples for r in reports)),
        "weighting": "equal weight per fold (mean of fold means)",
    }


# ---------------------------------------------------------------------------
# analytic baselines


def baseline_predict(kind: str, past_boxes, steps: int) -> np.ndarray:
    """Extrapolate ``steps`` future boxes from past boxes without a model.

    constant-velocity       repeats the last observed per-frame change
    constant-acceleration   fits velocity and acceleration to the last three
    stationary              repeats the last box
    """
    if kind not in BASELINE_KINDS:
        raise ConfigError(
            f"unknown baseline {kind!r}; pick one of {BASELINE_KINDS}")
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    arr = past_boxes if isinstance(past_boxes, np.ndarray) \
        else boxes_to_array(past_boxes)
    n = arr.shape[0]
    anchor = arr[-1]
    i = np.arange(1, steps + 1, dtype=np.float64)[:, None]
    if kind == "stationary":
        if n < 1:
            raise DataError("stationary baseline needs at least 1 box")
        return np.tile(anchor, (steps, 1))
    if kind == "constant-velocity":
        if n < 2:
            raise DataError("constant-velocity baseline needs at least 2 boxes")
        v = arr[-1] - arr[-2]
        return anchor + i * v
    if n < 3:
        raise DataError("constant-acceleration baseline needs at least 3 boxes")
    v2 = arr[-1] - arr[-2]
    v1 = arr[-2] - arr[-3]
    a = v2 - v1
    # under constant acceleration the i-th future step advances by
    # i*v2 + (1+2+...+i)*a
    return anchor + i * v2 + (i * (i + 1) / 2.0) * a


# ---------------------------------------------------------------------------
# throughput benchmark


@dataclass
class BenchReport:
    """One benchmark run at a fixed thread count.

    ``trajectories_per_second`` counts complete k-in/p-out forecasts;
    ``equivalent_fps`` converts to frames per second as TPS * p (each
    forecast covers p future frames). The timed region spans only the
    predict calls: windows are built beforehand and parameters are shared
    read-only across threads.
    """

    threads: int
    trajectories_per_second: float
    equivalent_fps: float
    n_predictions: int
    per_thread: list[int]
    elapsed_s: float
    duration_s: float
    k: int
    p: int
    hidden: int
    latent: int
    dtype: str = "float32"


def benchmark_tps(params: ModelParams, threads: int = 1, duration: float = 1.0,
                  n_windows: int = 32, seed: int = 0) -> BenchReport:
    """Measure forecast throughput on shared read-only parameters.

    Inference runs in single precision. Each thread loops over pre-built
    feature windows calling the predict path until the duration elapses;
    TPS is total completed forecasts over the measured wall-clock.
    """
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}")
    if not duration > 0:
        raise ConfigError(f"duration must be positive, got {duration}")
    d = params.dims
    p32 = params if params.dtype == np.float32 else params.astype(np.float32)
    spec = SynthSpec(kind="constant-velocity", length=d.k, noise_std=1.0,
                     start_jitter=50.0, velocity_jitter=2.0, seed=seed)
    windows = [build_features(t.boxes).astype(np.float32)
               for t in synth_tracks(spec, n_windows)]

    counts = [0] * threads
    stop = threading.Event()
    barrier = threading.Barrier(threads + 1)

    def worker(ti: int) -> None:
        barrier.wait()
        n = 0
        while not stop.is_set():
            predict_from_window(p32, windows[n % len(windows)])
            n += 1
        counts[ti] = n

    pool = [threading.Thread(target=worker, args=(ti,), daemon=True)
            for ti in range(threads)]
    for th in pool:
        th.start()
    barrier.wait()
    t0 = time.perf_counter()
    time.sleep(duration)
    stop.set()
    for th in pool:
        th.join()
    elapsed = time.perf_counter() - t0
    total = int(sum(counts))
    return BenchReport(
        threads=threads,
        trajectories_per_second=total / elapsed,
        equivalent_fps=total / elapsed * d.p,
        n_predictions=total,
        per_thread=list(counts),
        elapsed_s=elapsed,
        duration_s=duration,
        k=d.k, p=d.p, hidden=d.hidden, latent=d.latent,
    )


# ---------------------------------------------------------------------------
# ablation harness


def ablation_run(minitracks: list[MiniTrack], cfg, modes=LOSS_MODES,
                 horizons=(15, 30, 45, 60), eval_minitracks=None,
                 retrain_per_horizon: bool = False) -> list[dict]:
    """Train one model per loss mode (shared seed) and score it at several
    horizons.

    By default one model per mode is trained at the full horizon cfg.p and
    shorter horizons are scored by truncating its predictions, matching how
    a single deployed model would be used; ``retrain_per_horizon`` instead
    fits a separate model with p set to each horizon. Returns one row dict
    (mode, horizon, ade, fde) per combination, in mode-major order.
    ``eval_minitracks`` defaults to the training set.
    """
    horizons = sorted(int(h) for h in horizons)
    if not horizons or horizons[0] < 1:
        raise ConfigError(f"bad horizons {horizons}")
    for m in modes:
        if m not in LOSS_MODES:
            raise ConfigError(f"unknown loss mode {m!r}")
    if eval_minitracks is None:
        eval_minitracks = minitracks
    rows: list[dict] = []
    for mode in modes:
        if retrain_per_horizon:
            for h in horizons:
                cfg_h = replace(cfg, loss_mode=mode, p=h)
                pars, _ = train(cfg_h, _truncate(minitracks, cfg.k + h))
                rep = evaluate(pars, _truncate(eval_minitracks, cfg.k + h))
                rows.append({"mode": mode, "horizon": h,
                             "ade": rep.ade, "fde": rep.fde})
            continue
        if horizons[-1] > cfg.p:
            raise ConfigError(
                f"horizon {horizons[-1]} exceeds the model horizon p={cfg.p}")
        cfg_m = replace(cfg, loss_mode=mode)
        pars, _ = train(cfg_m, minitracks)
        pairs = []
        for mt in eval_minitracks:
            pred = predict(pars, mt.boxes[:cfg.k], mt.predecessor)
            gt = boxes_to_array(mt.boxes[cfg.k:])
            pairs.append((pred, gt))
        for h in horizons:
            trunc = [(pr[:h], gt[:h]) for pr, gt in pairs]
            rep = evaluate_predictions(trunc, input_k=cfg.k)
            rows.append({"mode": mode, "horizon": h,
                         "ade": rep.ade, "fde": rep.fde})
    return rows


def _truncate(minitracks: list[MiniTrack], length: int) -> list[MiniTrack]:
    out = []
    for mt in minitracks:
        if len(mt) < length:
            raise DataError(
                f"mini-track of length {len(mt)} too short to truncate to "
                f"{length}")
        out.append(replace(mt, boxes=mt.boxes[:length]))
    return out
