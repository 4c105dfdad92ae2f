"""Kernel bank: offline generation, clustering, and forecast-time selection.

A bank is an ordered list of model pairs. In the indirect mode a pair holds
a speed model and a heading model; in the direct mode it holds x and y
models. While a pair keeps forecasting positions within the tracking-error
threshold it stays current; on a breach the bank is searched and, if no
member is good enough, a new pair is fitted on the latest window.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import gp
from .forecast.hgp import forecast_batch
from .trajectory import Trip

logger = logging.getLogger(__name__)

INDIRECT = ("speed", "heading")
DIRECT = ("x", "y")


class ModelSelectionError(LookupError):
    """No bank member gives a finite likelihood for the window."""


@dataclass
class ModelPair:
    first: gp.GpModel
    second: gp.GpModel
    id: int = 0
    created_at: str = ""
    usage_count: int = 0
    # set when the two slots were selected from different bank entries
    source_ids: tuple[int, int] | None = None

    @property
    def kinds(self) -> tuple[str, str]:
        return self.first.kind, self.second.kind

    @property
    def speed_model(self) -> gp.GpModel:
        return self.first

    @property
    def heading_model(self) -> gp.GpModel:
        return self.second

    def log_theta(self) -> np.ndarray:
        return np.concatenate([self.first.theta.log(), self.second.theta.log()])

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            f"{self.first.kind}_model": self.first.to_dict(),
            f"{self.second.kind}_model": self.second.to_dict(),
            "created_at": self.created_at,
            "usage_count": self.usage_count,
        }

    @classmethod
    def from_dict(cls, d: dict, kinds: tuple[str, str] = INDIRECT) -> "ModelPair":
        return cls(
            gp.GpModel.from_dict(d[f"{kinds[0]}_model"]),
            gp.GpModel.from_dict(d[f"{kinds[1]}_model"]),
            id=int(d["id"]),
            created_at=str(d.get("created_at", "")),
            usage_count=int(d.get("usage_count", 0)),
        )


@dataclass
class KernelBank:
    models: list[ModelPair] = field(default_factory=list)
    pte_threshold: float = 0.5
    tw: int = 30
    kinds: tuple[str, str] = INDIRECT
    created: str = ""

    def __post_init__(self):
        if not self.pte_threshold > 0:
            raise ValueError("pte_threshold must be positive")
        ids = [m.id for m in self.models]
        if len(set(ids)) != len(ids):
            raise ValueError("model ids must be unique")
        for m in self.models:
            if m.kinds != tuple(self.kinds):
                raise ValueError(f"model {m.id} has kinds {m.kinds}, bank expects {self.kinds}")

    def __len__(self) -> int:
        return len(self.models)

    def __iter__(self):
        return iter(self.models)

    @property
    def next_id(self) -> int:
        return max((m.id for m in self.models), default=-1) + 1

    def thetas(self, slot: int) -> np.ndarray:
        if not self.models:
            return np.empty((0, 3))
        attr = "first" if slot == 0 else "second"
        return np.array([getattr(m, attr).theta.as_array() for m in self.models])

    def append(self, pair: ModelPair) -> ModelPair:
        if pair.kinds != tuple(self.kinds):
            raise ValueError(f"pair kinds {pair.kinds} do not match bank kinds {self.kinds}")
        if any(m.id == pair.id for m in self.models):
            raise ValueError(f"duplicate model id {pair.id}")
        self.models.append(pair)
        return pair

    def find(self, first: gp.GpHyperparams, second: gp.GpHyperparams) -> ModelPair | None:
        for m in self.models:
            if m.first.theta == first and m.second.theta == second:
                return m
        return None

    def copy(self) -> "KernelBank":
        return copy.deepcopy(self)

    def select(self, first_window: gp.TimeSeriesWindow,
               second_window: gp.TimeSeriesWindow) -> ModelPair:
        return select_model(self, first_window, second_window)

    # -- serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "tw": self.tw,
            "pte_threshold": self.pte_threshold,
            "created": self.created,
            "kinds": list(self.kinds),
            "models": [m.to_dict() for m in self.models],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelBank":
        kinds = tuple(d.get("kinds", INDIRECT))
        return cls(
            models=[ModelPair.from_dict(m, kinds) for m in d["models"]],
            pte_threshold=float(d["pte_threshold"]),
            tw=int(d["tw"]),
            kinds=kinds,
            created=str(d.get("created", "")),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "KernelBank":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class BankEvent:
    trip: str
    trip_index: int  # position in the processed sequence (trip ids may repeat)
    step: int
    kind: str  # switch, new, reuse
    model_id: int


@dataclass
class BankStats:
    model_persistency_samples: list[float] = field(default_factory=list)
    new_model_events: int = 0
    total_steps: int = 0
    breaches: int = 0
    events: list[BankEvent] = field(default_factory=list)
    # (trip id, steps, new models) per processed trip
    per_trip: list[tuple[str, int, int]] = field(default_factory=list)

    @property
    def mean_persistency(self) -> float:
        """Mean interval over every model selection, zero-length ones included."""
        s = self.model_persistency_samples
        return float(np.mean(s)) if s else 0.0

    @property
    def new_model_rate(self) -> float:
        return self.new_model_events / self.total_steps if self.total_steps else 0.0

    def new_model_series(self, chunk: int) -> np.ndarray:
        """New-model rate per consecutive block of ``chunk`` evaluated steps."""
        flags = np.zeros(self.total_steps)
        offsets = np.concatenate([[0], np.cumsum([steps for _, steps, _ in self.per_trip])])
        for e in self.events:
            if e.kind == "new":
                flags[offsets[e.trip_index] + e.step] = 1.0
        n = len(flags) // chunk
        return flags[: n * chunk].reshape(n, chunk).mean(axis=1)


@dataclass(frozen=True)
class BankConfig:
    tw: int = 30
    pte_threshold: float = 0.5
    horizon: int = 10
    seed: int = 0
    restarts: int = 4
    direct: bool = False

    @property
    def kinds(self) -> tuple[str, str]:
        return DIRECT if self.direct else INDIRECT


# ---------------------------------------------------------------------------
# model selection


def select_model(bank: KernelBank, first_window: gp.TimeSeriesWindow,
                 second_window: gp.TimeSeriesWindow) -> ModelPair:
    """Most likely model for each series, assembled into one pair.

    Each series is scored independently by its log marginal likelihood, so
    the two winners may come from different bank entries. Ties go to the
    lowest id.
    """
    if len(bank) == 0:
        raise ModelSelectionError("empty kernel bank")
    if len(first_window) == 0 or len(second_window) == 0:
        raise ValueError("empty window")
    if not np.array_equal(first_window.times, second_window.times):
        raise ValueError("windows must share timestamps")
    winners = []
    ids = np.array([m.id for m in bank.models])
    for slot, window in ((0, first_window), (1, second_window)):
        ll = gp.batch_log_marginal(window, bank.thetas(slot))
        if not np.isfinite(ll).any():
            raise ModelSelectionError(f"no finite likelihood for the {window.kind} window; fit a new model")
        best = np.flatnonzero(ll == ll.max())
        winners.append(int(best[np.argmin(ids[best])]))
    i, j = winners
    a, b = bank.models[i], bank.models[j]
    if i == j:
        return a
    return ModelPair(a.first, b.second, id=a.id, created_at=a.created_at,
                     source_ids=(a.id, b.id))


# ---------------------------------------------------------------------------
# training


def trip_windows(trip: Trip, i: int, tw: int, kinds: tuple[str, str]) -> tuple[gp.TimeSeriesWindow, gp.TimeSeriesWindow]:
    sl = slice(i - tw + 1, i + 1)
    t = trip.t[sl]
    return tuple(gp.TimeSeriesWindow(t, getattr(trip, k)[sl], k) for k in kinds)


def fit_pair(windows, seed: int = 0, restarts: int = 4, model_id: int = 0,
             created_at: str = "") -> ModelPair:
    first, second = (gp.fit(w, restarts=restarts, seed=seed) for w in windows)
    return ModelPair(first, second, id=model_id, created_at=created_at)


def _forecast_errors(bank_thetas, trip: Trip, i: int, windows, kinds, horizon: int) -> np.ndarray:
    """Max position error over the horizon for each row of stacked thetas."""
    anchor = trip.state(i)
    truth = trip.positions[i + 1: i + 1 + horizon]
    if kinds == INDIRECT:
        pos = forecast_batch(anchor, windows[0], windows[1], bank_thetas[0], bank_thetas[1], horizon)
    else:
        q = anchor.t + trip.sample_period * np.arange(1, horizon + 1)
        mx, _, okx = gp.batch_posterior(windows[0], bank_thetas[0], q)
        my, _, oky = gp.batch_posterior(windows[1], bank_thetas[1], q)
        pos = np.stack([mx, my], axis=-1)
        pos[~(okx & oky)] = np.nan
    err = np.linalg.norm(pos - truth[None], axis=-1).max(axis=-1)
    return np.where(np.isfinite(err), err, np.inf)


def _pair_thetas(pairs: Sequence[ModelPair]):
    return (np.array([p.first.theta.as_array() for p in pairs]),
            np.array([p.second.theta.as_array() for p in pairs]))


def _run_algorithm(trips: Iterable[Trip], bank: KernelBank, cfg: BankConfig, extend: bool,
                   stats: BankStats | None = None) -> BankStats:
    stats = stats or BankStats()
    kinds = tuple(bank.kinds)
    current: ModelPair | None = None
    for trip in trips:
        n = len(trip)
        if n < cfg.tw + cfg.horizon:
            logger.warning("trip %s has %d samples, needs %d; skipped",
                           trip.vehicle_id, n, cfg.tw + cfg.horizon)
            continue
        trip_index = len(stats.per_trip)
        run, steps, new_here = 0, 0, 0

        def record(kind: str, pair: ModelPair) -> ModelPair:
            nonlocal new_here
            stats.events.append(BankEvent(trip.vehicle_id, trip_index, step, kind, pair.id))
            if kind == "new":
                stats.new_model_events += 1
                new_here += 1
            return pair

        def fit_here() -> ModelPair:
            return fit_pair(windows, cfg.seed, cfg.restarts, bank.next_id,
                            f"{trip.vehicle_id}@{trip.t[i]:.1f}")

        for i in range(cfg.tw - 1, n - cfg.horizon):
            windows = trip_windows(trip, i, cfg.tw, kinds)
            step = steps
            steps += 1
            if current is None:
                if bank.models:
                    current = bank.models[0]
                elif extend:
                    current = record("new", bank.append(fit_here()))
                else:
                    raise ModelSelectionError("cannot evaluate an empty bank")
            err = _forecast_errors(_pair_thetas([current]), trip, i, windows, kinds, cfg.horizon)[0]
            if err < cfg.pte_threshold:
                run += 1
                continue
            # breach: close the persistency interval and search the bank. A
            # model that fails its first check still counts, with length zero.
            stats.breaches += 1
            stats.model_persistency_samples.append(run * trip.sample_period)
            run = 0
            errs = _forecast_errors(_pair_thetas(bank.models), trip, i, windows, kinds, cfg.horizon)
            best = int(np.argmin(errs))
            if errs[best] < cfg.pte_threshold or not extend:
                current = record("switch", bank.models[best])
                continue
            cand = fit_here()
            existing = bank.find(cand.first.theta, cand.second.theta)
            if existing is not None:
                current = record("reuse", existing)
            else:
                current = record("new", bank.append(cand))
        if run:
            stats.model_persistency_samples.append(run * trip.sample_period)
        stats.total_steps += steps
        stats.per_trip.append((trip.vehicle_id, steps, new_here))
    return stats


def build_bank(trips: Sequence[Trip], config: BankConfig = BankConfig(),
               bank: KernelBank | None = None) -> tuple[KernelBank, BankStats]:
    """Grow a kernel bank over the training trips, in order.

    Passing an existing ``bank`` continues training it in place.
    """
    if bank is None:
        bank = KernelBank(pte_threshold=config.pte_threshold, tw=config.tw, kinds=config.kinds,
                          created=f"build_bank seed={config.seed} trips={len(trips)}")
    stats = _run_algorithm(trips, bank, config, extend=True)
    _count_usage(bank, stats)
    return bank, stats


def evaluate_bank(bank: KernelBank, trips: Sequence[Trip], config: BankConfig = BankConfig(),
                  extend: bool = False) -> BankStats:
    """Replay the bank over ``trips`` and record persistency statistics.

    With ``extend=False`` the bank is fixed: on a breach the best member is
    selected even if it misses the threshold. With ``extend=True`` the bank
    passed in is grown exactly as during training.
    """
    return _run_algorithm(trips, bank, config, extend=extend)


def _count_usage(bank: KernelBank, stats: BankStats) -> None:
    by_id = {m.id: m for m in bank.models}
    for e in stats.events:
        if e.model_id in by_id:
            by_id[e.model_id].usage_count += 1


def maybe_extend_bank(bank: KernelBank, windows, pte_observed: float, seed: int = 0,
                      restarts: int = 4, created_at: str = "") -> tuple[KernelBank, ModelPair | None]:
    """Fit a pair on ``windows`` and append it when the observed error breached.

    Returns the bank and the appended (or matching existing) pair. A failed
    fit leaves the bank unchanged and returns ``None`` so the caller can
    fall back to a kinematic forecast.
    """
    if pte_observed < bank.pte_threshold:
        return bank, None
    try:
        cand = fit_pair(windows, seed, restarts, bank.next_id, created_at)
    except (ValueError, np.linalg.LinAlgError) as exc:
        logger.warning("on-the-fly fit failed: %s", exc)
        return bank, None
    existing = bank.find(cand.first.theta, cand.second.theta)
    if existing is not None:
        return bank, existing
    return bank, bank.append(cand)


# ---------------------------------------------------------------------------
# clustering


def cluster_bank(bank: KernelBank, c_size: int = 16, seed: int = 0) -> KernelBank:
    """Reduce the bank to ``c_size`` medoid pairs.

    K-means runs on the standardised 6-D log-hyperparameter vectors; each
    cluster is represented by the member with the smallest summed distance
    to the rest of its cluster, so every output pair is a genuinely fitted
    model. Banks with at most ``c_size`` members are returned unchanged.
    """
    from sklearn.cluster import KMeans

    if c_size < 1:
        raise ValueError("c_size must be at least 1")
    if len(bank) <= c_size:
        logger.info("bank has %d models, not more than c_size=%d; unchanged", len(bank), c_size)
        return bank.copy()
    feats = np.array([m.log_theta() for m in bank.models])
    _, first_idx = np.unique(feats, axis=0, return_index=True)
    first_idx = np.sort(first_idx)
    if len(first_idx) <= c_size:
        keep = first_idx
    else:
        x = feats[first_idx]
        sd = x.std(axis=0)
        z = (x - x.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
        labels = KMeans(n_clusters=c_size, n_init=10, random_state=seed).fit_predict(z)
        keep = []
        for c in range(c_size):
            members = np.flatnonzero(labels == c)
            if members.size == 0:
                continue
            d = np.linalg.norm(z[members, None] - z[None, members], axis=-1).sum(axis=1)
            keep.append(first_idx[members[np.argmin(d)]])
        keep = np.sort(keep)
    out = bank.copy()
    out.models = [out.models[i] for i in keep]
    out.created = f"{bank.created}; cluster c_size={c_size} seed={seed}"
    return out
