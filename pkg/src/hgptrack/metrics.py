"""Tracking-error and warning-accuracy metrics, plus a fit-time profiler."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_THRESHOLDS = tuple(round(0.2 * k, 1) for k in range(1, 9))  # 0.2 ... 1.6 m


def pte_series(truth, estimates) -> np.ndarray:
    """Per-sample 2-D Euclidean position error.

    ``truth`` is a Trip or an (n, 2) array; ``estimates`` an (n, 2) array on
    the same 10 Hz instants.
    """
    t = truth.positions if hasattr(truth, "positions") else np.asarray(truth, dtype=float)
    e = np.asarray(estimates, dtype=float)
    if t.shape != e.shape:
        raise ValueError(f"truth {t.shape} and estimates {e.shape} differ in shape")
    return np.hypot(e[:, 0] - t[:, 0], e[:, 1] - t[:, 1])


def percentile_nearest_rank(values, q: float = 95.0) -> float:
    """The ceil(q/100 * n)-th smallest value."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size == 0:
        raise ValueError("no samples")
    rank = max(math.ceil(q / 100.0 * v.size), 1)
    return float(v[rank - 1])


def exceed_counts(errors, thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> dict[float, int]:
    """Number of errors strictly above each threshold."""
    e = np.asarray(errors, dtype=float)
    return {float(th): int(np.count_nonzero(e > th)) for th in thresholds}


@dataclass(frozen=True)
class PteSummary:
    p95: float
    mean: float
    exceed_counts: dict[float, int] = field(default_factory=dict)
    n_samples: int = 0


def summarize_pte(errors, thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> PteSummary:
    e = np.asarray(errors, dtype=float)
    e = e[np.isfinite(e)]
    return PteSummary(percentile_nearest_rank(e), float(e.mean()),
                      exceed_counts(e, thresholds), int(e.size))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else float("nan")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.tn + other.tn,
                               self.fp + other.fp, self.fn + other.fn)


def _is_decisions(stream) -> bool:
    return bool(stream) and hasattr(stream[0], "warn")


def _by_key(stream) -> dict:
    return {(round(d.t, 6), d.rv_id): bool(d.warn) for d in stream}


def fcw_accuracy(gt_stream, test_stream) -> ConfusionCounts:
    """Compare warn flags instant by instant against the ground truth.

    Streams are either equal-length sequences of warn booleans or
    sequences of decisions with ``t``, ``rv_id`` and ``warn``. Decision
    streams are aligned on (t, rv_id); an instant where one stream has no
    decision for an RV (it was not routed to FCW) counts as no warning.
    """
    gt_stream, test_stream = list(gt_stream), list(test_stream)
    if _is_decisions(gt_stream) or _is_decisions(test_stream):
        g_map, w_map = _by_key(gt_stream), _by_key(test_stream)
        keys = sorted(set(g_map) | set(w_map))
        g = np.array([g_map.get(k, False) for k in keys], dtype=bool)
        w = np.array([w_map.get(k, False) for k in keys], dtype=bool)
    else:
        if len(gt_stream) != len(test_stream):
            raise ValueError("streams are not aligned: different lengths")
        g = np.asarray(gt_stream, dtype=bool)
        w = np.asarray(test_stream, dtype=bool)
    return ConfusionCounts(int(np.sum(g & w)), int(np.sum(~g & ~w)),
                           int(np.sum(~g & w)), int(np.sum(g & ~w)))


@dataclass(frozen=True)
class FitProfile:
    tw: tuple[int, ...]
    medians: tuple[float, ...]
    samples: tuple[tuple[float, ...], ...]
    quad_coeffs: tuple[float, float, float]
    rmse: float


_PROFILE_SCRIPT = {
    "initial_speed": 15.0, "max_jerk": 2.0, "max_yaw_accel": 0.1,
    "segments": [
        {"kind": "cruise", "duration": 4.0},
        {"kind": "brake", "duration": 5.0, "accel": -2.0},
        {"kind": "turn", "duration": 6.0, "yaw_rate": 0.15},
        {"kind": "accelerate", "duration": 6.0, "accel": 1.5},
        {"kind": "lane-change", "duration": 5.0, "offset": 3.5},
        {"kind": "brake", "duration": 4.0, "accel": -3.0},
        {"kind": "cruise", "duration": 4.0},
        {"kind": "accelerate", "duration": 6.0, "accel": 1.0},
    ],
}


def profile_fit_time(tw_grid: Sequence[int] = (10, 20, 30, 40), repeats: int = 80,
                     seed: int = 0, restarts: int = 4,
                     speed_noise: float = 0.1) -> FitProfile:
    """Median wall-clock time of one GP fit per window size.

    Windows are cut from the speed trace of a scripted stop-and-go trip
    with Gaussian measurement noise. Each repeat picks one end instant and
    every window size fits the samples leading up to it, so the sizes are
    compared on the same stretch of driving. A quadratic in TW is fitted
    to the medians by least squares.
    """
    from .gp import TimeSeriesWindow, fit
    from .trajectory import ManeuverScript, generate_synthetic_trip

    trip = generate_synthetic_trip(ManeuverScript.from_dict(_PROFILE_SCRIPT))
    rng = np.random.default_rng(seed)
    n_max = max(tw_grid)
    if len(trip) <= n_max:
        raise ValueError(f"window size {n_max} exceeds the profiling trace")
    per_tw = {tw: [] for tw in tw_grid}
    for _ in range(repeats):
        end = int(rng.integers(n_max, len(trip) + 1))
        t = trip.t[end - n_max:end]
        v = trip.speed[end - n_max:end] + rng.normal(0.0, speed_noise, n_max)
        for tw in tw_grid:
            w = TimeSeriesWindow(t[-tw:], v[-tw:], "speed")
            start = time.perf_counter()
            fit(w, restarts=restarts, seed=seed)
            per_tw[tw].append(time.perf_counter() - start)
    samples = [tuple(per_tw[tw]) for tw in tw_grid]
    medians = [float(np.median(per_tw[tw])) for tw in tw_grid]
    x = np.asarray(tw_grid, dtype=float)
    deg = min(2, len(x) - 1)
    coeffs = np.polyfit(x, medians, deg)
    coeffs = np.concatenate([np.zeros(3 - len(coeffs)), coeffs])
    rmse = float(np.sqrt(np.mean((np.polyval(coeffs, x) - medians) ** 2)))
    return FitProfile(tuple(int(v) for v in tw_grid), tuple(medians), tuple(samples),
                      tuple(float(c) for c in coeffs), rmse)
