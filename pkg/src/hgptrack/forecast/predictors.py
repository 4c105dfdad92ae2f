"""Per-RV predictor state machines behind one interface.

A predictor is fed every BSM the receiver accepts (``observe``) and is asked
for position estimates at arbitrary later instants (``estimate``). Between
BSMs the estimate comes from a forecast anchored at the last BSM; at a BSM
instant it is the BSM itself.

New kinds can be added with :func:`register`; a factory receives the
:class:`PredictorConfig` and the bank handle (may be ``None``).
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .. import gp
from ..trajectory import SAMPLE_PERIOD, VehicleState
from .hgp import DEFAULT_LIMITS, Limits, hgp_direct, hgp_indirect
from .kinematic import (KF_Q, KF_R, ForecastPoint, KalmanState, ca_propagate,
                        constant_accel, constant_speed, hold_last, kalman_step)


class PredictorKind(str, enum.Enum):
    BSM_DEPENDENT = "bsm"
    CONSTANT_SPEED = "cs"
    CONSTANT_ACCEL = "ca"
    KALMAN_CA = "kf"
    HGP_INDIRECT = "hgp"
    HGP_DIRECT = "hgp-d"


@dataclass(frozen=True)
class PredictorConfig:
    tw: int = 30
    # drop window samples older than this many seconds (None keeps all tw);
    # the default is tw samples at the full 10 Hz rate, so under heavy loss
    # the window shrinks instead of reaching back to stale driving
    history_span: float | None = 3.0
    min_window: int = 3
    limits: Limits = DEFAULT_LIMITS
    dt: float = SAMPLE_PERIOD
    # grow a private copy of the bank when a gap forecast misses the threshold
    extend_bank: bool = False
    pte_threshold: float = 0.5
    fit_seed: int = 0
    kf_q: tuple[float, float, float] = tuple(np.diag(KF_Q))
    kf_r: tuple[float, float, float] = tuple(np.diag(KF_R))


class Predictor:
    """Base state machine: caches a forecast from the last observation."""

    kind = "base"
    initial_horizon = 20

    def __init__(self, config: PredictorConfig = PredictorConfig()):
        self.config = config
        self.last: VehicleState | None = None
        self._cache: list[ForecastPoint] = []

    def observe(self, bsm: VehicleState) -> None:
        if self.last is not None and bsm.t <= self.last.t:
            raise ValueError("BSMs must arrive in increasing time order")
        self._update(bsm)
        self.last = bsm
        self._cache = []

    def _update(self, bsm: VehicleState) -> None:
        """Hook for stateful predictors; called before ``last`` moves."""

    def _forecast(self, horizon: int) -> list[ForecastPoint]:
        raise NotImplementedError

    def forecast(self, horizon: int) -> list[ForecastPoint]:
        """Forecast ``horizon`` steps after the last observation."""
        if self.last is None:
            raise RuntimeError("no BSM observed yet")
        if horizon <= 0:
            return []
        if len(self._cache) < horizon:
            # forecasts are prefix-consistent, so a longer horizon can replace the cache
            self._cache = self._forecast(max(horizon, 2 * len(self._cache), self.initial_horizon))
        return self._cache[:horizon]

    def steps_after_last(self, t: float) -> int:
        return int(round((t - self.last.t) / self.config.dt))

    def estimate(self, t: float) -> ForecastPoint:
        k = self.steps_after_last(t)
        if k <= 0:
            return ForecastPoint.from_state(self.last)
        return self.forecast(k)[k - 1]


class BsmDependent(Predictor):
    kind = PredictorKind.BSM_DEPENDENT.value

    def _forecast(self, horizon):
        return hold_last(self.last, horizon, self.config.dt)


class ConstantSpeed(Predictor):
    kind = PredictorKind.CONSTANT_SPEED.value

    def _forecast(self, horizon):
        return constant_speed(self.last, horizon, self.config.dt)


class ConstantAccel(Predictor):
    kind = PredictorKind.CONSTANT_ACCEL.value

    def _forecast(self, horizon):
        return constant_accel(self.last, horizon, self.config.dt)


class KalmanCA(Predictor):
    """Longitudinal CA Kalman filter on arc length.

    The filter runs a time update every sample period and a measurement
    update whenever a BSM arrives. The measured arc length is the prior
    plus the along-track component of the BSM's offset from the predicted
    position. Forecasts take the filtered speed and acceleration and are
    laid out from the last BSM position along its heading.
    """

    kind = PredictorKind.KALMAN_CA.value

    def __init__(self, config: PredictorConfig = PredictorConfig()):
        super().__init__(config)
        self.kf: KalmanState | None = None

    def _update(self, bsm):
        c = self.config
        if self.kf is None:
            R = np.diag(c.kf_r)
            self.kf = KalmanState(np.array([0.0, bsm.speed, bsm.accel]), R.copy(),
                                  np.diag(c.kf_q), R)
            return
        steps = max(self.steps_after_last(bsm.t), 1)
        p_last = self.kf.x_hat[0]
        kf = self.kf
        for _ in range(steps - 1):
            kf = kalman_step(kf, None, c.dt)
        prior = kalman_step(kf, None, c.dt)
        moved = prior.x_hat[0] - p_last
        h0 = self.last.heading
        pred_xy = np.array([self.last.x + moved * math.cos(h0), self.last.y + moved * math.sin(h0)])
        u = np.array([math.cos(bsm.heading), math.sin(bsm.heading)])
        z_p = prior.x_hat[0] + float(np.dot(np.array([bsm.x, bsm.y]) - pred_xy, u))
        self.kf = kalman_step(kf, np.array([z_p, bsm.speed, bsm.accel]), c.dt)

    def _forecast(self, horizon):
        _, s, a = self.kf.x_hat
        dist, speeds, accels = ca_propagate(0.0, max(float(s), 0.0), float(a), horizon, self.config.dt)
        last = self.last
        c, sn = math.cos(last.heading), math.sin(last.heading)
        return [
            ForecastPoint(last.t + (k + 1) * self.config.dt, last.x + d * c, last.y + d * sn,
                          float(v), 0.0, last.heading, 0.0, "kf", float(acc))
            for k, (d, v, acc) in enumerate(zip(dist, speeds, accels))
        ]


class _WindowedGp(Predictor):
    """Shared history handling for the GP predictors."""

    series: tuple[str, str] = ("speed", "heading")

    def __init__(self, config: PredictorConfig = PredictorConfig(), bank=None):
        super().__init__(config)
        if bank is None:
            raise ValueError(f"{self.kind} predictor needs a kernel bank")
        self.bank = bank.copy() if config.extend_bank else bank
        self.history: deque[VehicleState] = deque(maxlen=config.tw)
        self.new_models = 0

    def windows(self) -> tuple[gp.TimeSeriesWindow, gp.TimeSeriesWindow] | None:
        hist = list(self.history)
        span = self.config.history_span
        if span is not None and hist:
            hist = [s for s in hist if hist[-1].t - s.t <= span + 1e-9]
        if len(hist) < self.config.min_window:
            return None
        t = [s.t for s in hist]
        return tuple(gp.TimeSeriesWindow(t, [getattr(s, k) for s in hist], k) for k in self.series)

    def _update(self, bsm):
        if self.config.extend_bank and self.last is not None and self._cache:
            k = self.steps_after_last(bsm.t)
            if 0 < k <= len(self._cache):
                p = self._cache[k - 1]
                err = math.hypot(p.x - bsm.x, p.y - bsm.y)
                self.history.append(bsm)
                self._maybe_extend(err)
                return
        self.history.append(bsm)

    def _maybe_extend(self, err: float) -> None:
        from ..bank import maybe_extend_bank

        w = self.windows()
        if w is None or len(w[0]) < 5 or err < self.config.pte_threshold:
            return
        before = len(self.bank)
        maybe_extend_bank(self.bank, w, err, seed=self.config.fit_seed)
        self.new_models += len(self.bank) - before

    def _fallback(self, horizon):
        return [replace(p, source="ca-fallback") for p in constant_accel(self.last, horizon, self.config.dt)]


class HgpIndirect(_WindowedGp):
    kind = PredictorKind.HGP_INDIRECT.value

    def _forecast(self, horizon):
        w = self.windows()
        if w is None:
            return self._fallback(horizon)
        return hgp_indirect(w[0], w[1], self.bank, self.last, horizon,
                            self.config.limits, self.config.dt)


class HgpDirect(_WindowedGp):
    kind = PredictorKind.HGP_DIRECT.value
    series = ("x", "y")

    def _forecast(self, horizon):
        w = self.windows()
        if w is None:
            return self._fallback(horizon)
        return hgp_direct(w[0], w[1], self.bank, horizon, self.last,
                          self.config.limits, self.config.dt)


Factory = Callable[[PredictorConfig, object], Predictor]

_REGISTRY: dict[str, Factory] = {}


def register(name: str, factory: Factory, replace_existing: bool = False) -> None:
    """Make a predictor kind available to :func:`create` and the sweep.

    ``factory(config, bank)`` must return a fresh per-RV state machine with
    ``observe`` and ``estimate`` methods.
    """
    if name in _REGISTRY and not replace_existing:
        raise ValueError(f"predictor kind {name!r} is already registered")
    _REGISTRY[name] = factory


def available() -> list[str]:
    return list(_REGISTRY)


def create(name: str, config: PredictorConfig = PredictorConfig(), bank=None) -> Predictor:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown predictor kind {name!r}; known: {', '.join(_REGISTRY)}") from None
    return factory(config, bank)


def needs_bank(name: str) -> bool:
    return name in (PredictorKind.HGP_INDIRECT.value, PredictorKind.HGP_DIRECT.value)


register("bsm", lambda cfg, bank: BsmDependent(cfg))
register("cs", lambda cfg, bank: ConstantSpeed(cfg))
register("ca", lambda cfg, bank: ConstantAccel(cfg))
register("kf", lambda cfg, bank: KalmanCA(cfg))
register("hgp", lambda cfg, bank: HgpIndirect(cfg, bank))
register("hgp-d", lambda cfg, bank: HgpDirect(cfg, bank))
