"""Experiment orchestration: bank training, channel sweeps and result tables.

The receiver pipeline for one remote vehicle is the same everywhere: the
host's local map takes every delivered BSM, a CAM snapshot is taken at
each 10 Hz instant, the tracking error is measured against the remote
vehicle's true position, and FCW is evaluated on the snapshot. The
ground-truth warning stream is the same pipeline on a lossless 10 Hz
channel.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..bank import BankConfig, BankStats, KernelBank, build_bank, cluster_bank, evaluate_bank
from ..catc import LocalMap, TcConfig, snapshot, update_record
from ..channel import ChannelConfig, emit
from ..forecast.predictors import PredictorConfig, create, needs_bank
from ..metrics import (DEFAULT_THRESHOLDS, ConfusionCounts, exceed_counts, fcw_accuracy,
                       percentile_nearest_rank)
from ..safety import FcwConfig, FcwDecision, fcw_stream, write_decision_log
from ..trajectory import Trip, load_trip_csv
from . import config as C
from .scenario import IdmParams, follower_trip, synthetic_suite, transmitted

logger = logging.getLogger(__name__)

BASE_RATE = 10


# ---------------------------------------------------------------------------
# inputs


def load_trips(src: C.TripSource, root_seed: int, stream: int, prefix: str) -> list[Trip]:
    """Trips from CSV paths when given, otherwise a seeded synthetic suite."""
    if src.paths:
        return [load_trip_csv(p) for p in src.paths]
    return synthetic_suite(src.synthetic, C.derive_seed(root_seed, stream), src.duration, prefix)


def predictor_config(cfg: C.ExperimentConfig) -> PredictorConfig:
    p = cfg.predictor
    return PredictorConfig(tw=cfg.bank.tw, history_span=p.history_span, min_window=p.min_window,
                           extend_bank=p.extend_bank, pte_threshold=cfg.bank.pte_threshold)


def bank_config(params: C.BankParams, seed: int) -> BankConfig:
    return BankConfig(tw=params.tw, pte_threshold=params.pte_threshold, horizon=params.horizon,
                      seed=seed, restarts=params.restarts)


# ---------------------------------------------------------------------------
# bank training


@dataclass
class TrainResult:
    full: KernelBank
    reduced: KernelBank
    stats: BankStats


def train_bank(trips: Sequence[Trip], params: C.BankParams = C.BankParams(), seed: int = 0) -> TrainResult:
    """Grow a bank over ``trips`` and cluster it to ``params.c_size``."""
    full, stats = build_bank(trips, bank_config(params, seed))
    return TrainResult(full, cluster_bank(full, params.c_size, seed), stats)


def mp_vs_cluster_size(full: KernelBank, trips: Sequence[Trip], sizes: Sequence[int],
                       params: C.BankParams = C.BankParams(), seed: int = 0) -> list[dict]:
    """Mean model persistency of the fixed reduced bank at each cluster size."""
    rows = []
    for c in sizes:
        reduced = cluster_bank(full, c, seed)
        stats = evaluate_bank(reduced, trips, bank_config(params, seed))
        rows.append({"c_size": c, "models": len(reduced), "mean_mp": stats.mean_persistency,
                     "breaches": stats.breaches, "steps": stats.total_steps})
    return rows


def quarter_rates(stats: BankStats, quarters: int = 4, chunks_per_quarter: int = 5) -> tuple[np.ndarray, list[float]]:
    """New-model rate per chunk and the pooled rate per quarter of the evaluation."""
    chunk = max(stats.total_steps // (quarters * chunks_per_quarter), 1)
    series = stats.new_model_series(chunk)
    pooled = [float(q.mean()) for q in np.array_split(series, quarters)]
    return series, pooled


# ---------------------------------------------------------------------------
# receiver pipeline


@dataclass
class ReceiverRun:
    t: np.ndarray
    pte: np.ndarray          # NaN before the first delivered BSM
    decisions: list[FcwDecision]
    sources: list[str]
    dropped: np.ndarray      # per emitted packet
    cams: list = field(default_factory=list)  # per-instant snapshots when kept


def run_receiver(truth: Trip, tx: Trip, hv: Trip, channel: ChannelConfig, predictor_factory,
                 fcw: FcwConfig = FcwConfig(), tc: TcConfig = TcConfig(),
                 keep_cams: bool = False) -> ReceiverRun:
    """One remote vehicle seen by the host through ``channel``."""
    packets = emit(tx, channel)
    t0, dt = float(tx.t[0]), tx.sample_period
    arrivals = {}
    for p in packets:
        if not p.dropped:
            arrivals.setdefault(int(round((p.rx_time - t0) / dt)), []).append(p)
    lmap = LocalMap(predictor_factory, tc)
    n = len(truth)
    pte = np.full(n, np.nan)
    sources = [""] * n
    frames = []
    for k in range(n):
        now = float(truth.t[k])
        host = hv.state(k)
        for p in arrivals.get(k, ()):
            update_record(lmap, p.state, p.rx_time, p.vehicle_id, host)
        cam = snapshot(lmap, now, host)
        for e in cam:
            pte[k] = math.hypot(e.x - truth.x[k], e.y - truth.y[k])
            sources[k] = e.source
        frames.append((host, cam))
    return ReceiverRun(np.asarray(truth.t), pte, fcw_stream(frames, fcw, tc), sources,
                       np.array([p.dropped for p in packets], dtype=bool),
                       [cam for _, cam in frames] if keep_cams else [])


# ---------------------------------------------------------------------------
# sweep


@dataclass(frozen=True, order=True)
class Cell:
    per: float
    rate: float

    @property
    def label(self) -> str:
        return f"per{self.per:g}_rate{self.rate:g}"


def paper_cells(per_grid: Sequence[float], rate_grid: Sequence[float]) -> list[Cell]:
    """PER varies at 10 Hz; rate varies at zero loss."""
    cells = [Cell(float(p), BASE_RATE) for p in per_grid]
    cells += [Cell(0.0, float(r)) for r in rate_grid if float(r) != BASE_RATE]
    return sorted(set(cells), key=lambda c: (c.rate != BASE_RATE, c.per, -c.rate))


@dataclass
class SweepRecord:
    cell: Cell
    predictor: str
    replication: int
    trip: str
    run: ReceiverRun


@dataclass
class SweepResult:
    cells: list[Cell]
    predictors: list[str]
    replications: int
    records: list[SweepRecord] = field(default_factory=list)
    # ground-truth decisions per (trip, replication)
    ground_truth: dict = field(default_factory=dict)

    def errors(self, cell: Cell, predictor: str) -> np.ndarray:
        parts = [r.run.pte for r in self.records if r.cell == cell and r.predictor == predictor]
        e = np.concatenate(parts) if parts else np.empty(0)
        return e[np.isfinite(e)]

    def p95(self, cell: Cell, predictor: str) -> float:
        return percentile_nearest_rank(self.errors(cell, predictor), 95.0)

    def confusion(self, cell: Cell, predictor: str) -> ConfusionCounts:
        total = ConfusionCounts()
        for r in self.records:
            if r.cell == cell and r.predictor == predictor:
                total = total + fcw_accuracy(self.ground_truth[(r.trip, r.replication)], r.run.decisions)
        return total

    def per_cells(self) -> list[Cell]:
        return [c for c in self.cells if c.rate == BASE_RATE]

    def rate_cells(self) -> list[Cell]:
        return [c for c in self.cells if c.per == 0.0]


@dataclass(frozen=True)
class _Job:
    trip_index: int
    replication: int
    truth: Trip
    hv: Trip
    cells: tuple
    predictors: tuple
    bank: KernelBank | None
    pcfg: PredictorConfig
    fcw: FcwConfig
    root_seed: int
    accel_sigma: float
    loss_model: str
    burst_length: float


def factory_for(name: str, pcfg: PredictorConfig, bank):
    return lambda: create(name, pcfg, bank)


def _run_job(job: _Job):
    tx = transmitted(job.truth, C.derive_seed(job.root_seed, C.STREAM_NOISE, job.trip_index, job.replication),
                     job.accel_sigma)
    # one drop stream per (trip, replication), shared by every cell and predictor
    ch_seed = C.derive_seed(job.root_seed, C.STREAM_CHANNEL, job.trip_index, job.replication)

    def channel(cell: Cell) -> ChannelConfig:
        return ChannelConfig(per=cell.per, rate_hz=cell.rate, seed=ch_seed,
                             loss_model=job.loss_model, burst_length=job.burst_length)

    gt = run_receiver(job.truth, tx, job.hv, channel(Cell(0.0, BASE_RATE)),
                      factory_for("bsm", job.pcfg, None), job.fcw).decisions
    out = []
    for cell in job.cells:
        for name in job.predictors:
            run = run_receiver(job.truth, tx, job.hv, channel(cell), factory_for(name, job.pcfg, job.bank), job.fcw)
            out.append(SweepRecord(cell, name, job.replication, job.truth.vehicle_id, run))
    return job.truth.vehicle_id, job.replication, gt, out


def sweep(trips: Sequence[Trip], predictors: Sequence[str], cells: Sequence[Cell],
          replications: int = 1, bank: KernelBank | None = None,
          pcfg: PredictorConfig = PredictorConfig(), fcw: FcwConfig = FcwConfig(),
          root_seed: int = 0, accel_sigma: float = 1.0, host: IdmParams = IdmParams(),
          loss_model: str = "bernoulli", burst_length: float = 4.0, workers: int = 1) -> SweepResult:
    """Run every (cell, predictor, replication) over every trip.

    Drop patterns come from one uniform stream per (trip, replication), so
    all predictors in a cell see the same losses and the lost set grows
    monotonically with PER. Jobs are independent per (trip, replication)
    and may run in a process pool; results are assembled in job order.
    """
    for name in predictors:
        if needs_bank(name) and bank is None:
            raise ValueError(f"predictor {name!r} needs a kernel bank")
    ids = [t.vehicle_id for t in trips]
    if len(set(ids)) != len(ids):
        raise ValueError("trip vehicle ids must be unique within a sweep")
    cells = list(cells)
    jobs = [
        _Job(i, r, trip, follower_trip(trip, host), tuple(cells), tuple(predictors), bank, pcfg, fcw,
             root_seed, accel_sigma, loss_model, burst_length)
        for r in range(replications) for i, trip in enumerate(trips)
    ]
    result = SweepResult(cells, list(predictors), replications)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_run_job, jobs))
    else:
        outputs = [_run_job(j) for j in jobs]
    for trip_id, rep, gt, records in outputs:
        result.ground_truth[(trip_id, rep)] = gt
        result.records.extend(records)
    return result


# ---------------------------------------------------------------------------
# outputs


def _fmt(v: float) -> str:
    return "nan" if not math.isfinite(v) else f"{v:.3f}"


def write_table(path, predictors: Sequence[str], columns: Sequence, values: dict) -> None:
    """Rows are predictors, columns the grid, cells ``values[(predictor, column)]``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["predictor", *[f"{c:g}" for c in columns]])
        for p in predictors:
            w.writerow([p, *[_fmt(values[(p, c)]) for c in columns]])


def tables(result: SweepResult) -> dict[str, tuple[list, dict]]:
    """Table-I-shaped summaries keyed by output file stem."""
    out = {}
    for axis, cells in (("per", result.per_cells()), ("rate", result.rate_cells())):
        cols = [c.per if axis == "per" else c.rate for c in cells]
        pte = {(p, col): result.p95(c, p) for p in result.predictors for c, col in zip(cells, cols)}
        acc = {(p, col): result.confusion(c, p).accuracy for p in result.predictors for c, col in zip(cells, cols)}
        out[f"pte_vs_{axis}"] = (cols, pte)
        out[f"fcw_vs_{axis}"] = (cols, acc)
    return out


def write_sweep(result: SweepResult, out_dir, raw: bool = True, masks: bool = False,
                thresholds: Sequence[float] = DEFAULT_THRESHOLDS) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for stem, (cols, values) in tables(result).items():
        path = out_dir / f"{stem}.csv"
        write_table(path, result.predictors, cols, values)
        written.append(path)
    path = out_dir / "exceed_counts.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["predictor", "per", "rate", "n_samples", *[f"{th:g}" for th in thresholds]])
        for c in result.cells:
            for p in result.predictors:
                e = result.errors(c, p)
                counts = exceed_counts(e, thresholds)
                w.writerow([p, f"{c.per:g}", f"{c.rate:g}", e.size, *[counts[float(th)] for th in thresholds]])
    written.append(path)
    if raw:
        path = out_dir / "pte_records.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["per", "rate", "predictor", "replication", "trip", "t", "pte"])
            for r in result.records:
                for t, e in zip(r.run.t, r.run.pte):
                    if math.isfinite(e):
                        w.writerow([f"{r.cell.per:g}", f"{r.cell.rate:g}", r.predictor, r.replication,
                                    r.trip, f"{t:.1f}", f"{e:.6f}"])
        written.append(path)
        dec_dir = out_dir / "decisions"
        dec_dir.mkdir(exist_ok=True)
        groups: dict = {}
        for r in result.records:
            groups.setdefault((r.cell, r.predictor, r.replication), []).extend(r.run.decisions)
        for (cell, pred, rep), decisions in groups.items():
            path = dec_dir / f"{cell.label}_{pred}_rep{rep}.csv"
            with open(path, "w", newline="", encoding="utf-8") as fh:
                write_decision_log(decisions, fh)
            written.append(path)
        for rep in range(result.replications):
            path = dec_dir / f"ground_truth_rep{rep}.csv"
            gt = [d for (trip, r), ds in result.ground_truth.items() if r == rep for d in ds]
            with open(path, "w", newline="", encoding="utf-8") as fh:
                write_decision_log(gt, fh)
            written.append(path)
    if masks:
        written.append(write_masks(result, out_dir / "drop_masks.csv"))
    return written


def write_masks(result: SweepResult, path) -> Path:
    """Lost (1) or delivered (0) per emitted packet, for auditing the channel."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["per", "rate", "replication", "trip", "dropped"])
        seen = set()
        for r in result.records:
            key = (r.cell, r.replication, r.trip)
            if key in seen:
                continue
            seen.add(key)
            bits = "".join("1" if d else "0" for d in r.run.dropped)
            w.writerow([f"{r.cell.per:g}", f"{r.cell.rate:g}", r.replication, r.trip, bits])
    return Path(path)
