"""Hybrid GP position forecasting.

Speed and heading are forecast as independent GP series; positions are
dead-reckoned from the predictive marginals using the expectation of the
heading's cosine/sine under a Gaussian. Whenever the GP forecast leaves the
physically plausible envelope, the rest of the horizon is handed to a
constant-acceleration (or constant-speed) continuation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import gp
from ..trajectory import SAMPLE_PERIOD, VehicleState
from .kinematic import ForecastPoint, ca_propagate, constant_accel


@dataclass(frozen=True)
class Limits:
    v_max: float = 60.0
    a_min: float = -9.0
    a_max: float = 6.0
    accel_stale_after: float = 2.0


DEFAULT_LIMITS = Limits()


def expected_cos(mu, var):
    """E[cos h] for h ~ N(mu, var)."""
    return np.exp(-np.asarray(var) / 2.0) * np.cos(mu)


def expected_sin(mu, var):
    return np.exp(-np.asarray(var) / 2.0) * np.sin(mu)


def integrate_positions(x0: float, y0: float, speed_mean, heading_mean, heading_var,
                        dt: float = SAMPLE_PERIOD) -> np.ndarray:
    """Piecewise-linear expected positions.

    ``speed_mean`` etc. hold the marginals at t0, t0+dt, ...; the returned
    array (n-1, 2) holds positions at t0+dt, ... where step j uses the
    marginals at t_j. Works on stacked rows as well (leading batch axis).
    """
    s = np.asarray(speed_mean)[..., :-1]
    mu = np.asarray(heading_mean)[..., :-1]
    var = np.asarray(heading_var)[..., :-1]
    dx = np.cumsum(dt * s * expected_cos(mu, var), axis=-1)
    dy = np.cumsum(dt * s * expected_sin(mu, var), axis=-1)
    return np.stack([x0 + dx, y0 + dy], axis=-1)


def _first_violation(speeds: np.ndarray, limits: Limits, dt: float) -> np.ndarray:
    """Index (1..H) of the first implausible step per row, or 0 if none."""
    acc = np.diff(speeds, axis=-1) / dt
    bad = ((speeds[..., 1:] < 0.0) | (speeds[..., 1:] > limits.v_max)
           | (acc < limits.a_min) | (acc > limits.a_max))
    any_bad = bad.any(axis=-1)
    return np.where(any_bad, np.argmax(bad, axis=-1) + 1, 0)


def _fallback(anchor: VehicleState, j0: int, x: float, y: float, speed: float,
              heading: float, horizon: int, limits: Limits, dt: float) -> list[ForecastPoint]:
    """Continue from step ``j0 - 1`` with CA (or CS once the BSM accel is stale)."""
    elapsed = (j0 - 1) * dt
    accel_until = max(limits.accel_stale_after - elapsed, 0.0)
    remaining = horizon - j0 + 1
    dist, speeds, accels = ca_propagate(0.0, max(speed, 0.0), anchor.accel, remaining,
                                        dt, accel_until=accel_until)
    c, s = math.cos(heading), math.sin(heading)
    out = []
    for k in range(remaining):
        t_rel = elapsed + (k + 1) * dt
        source = "ca-fallback" if t_rel <= limits.accel_stale_after + 1e-9 else "cs-fallback"
        out.append(ForecastPoint(anchor.t + t_rel, x + dist[k] * c, y + dist[k] * s,
                                 float(speeds[k]), 0.0, heading, 0.0, source, float(accels[k])))
    return out


def hybrid_guard(points: list[ForecastPoint], anchor: VehicleState,
                 limits: Limits = DEFAULT_LIMITS, dt: float = SAMPLE_PERIOD) -> list[ForecastPoint]:
    """Replace the horizon from the first implausible GP step onwards.

    A step is implausible when its speed is outside [0, v_max] or the
    acceleration implied by consecutive speeds is outside [a_min, a_max].
    Plausible forecasts pass through unchanged.
    """
    if not points:
        return points
    speeds = np.array([anchor.speed] + [p.speed_mean for p in points])
    j = int(_first_violation(speeds, limits, dt))
    if j == 0:
        return points
    prev = anchor if j == 1 else points[j - 2]
    if isinstance(prev, VehicleState):
        x, y, v, h = prev.x, prev.y, prev.speed, prev.heading
    else:
        x, y, v, h = prev.x, prev.y, prev.speed_mean, prev.heading_mean
    return points[:j - 1] + _fallback(anchor, j, x, y, v, h, len(points), limits, dt)


def horizon_times(t0: float, horizon: int, dt: float = SAMPLE_PERIOD) -> np.ndarray:
    return t0 + dt * np.arange(horizon + 1)


def forecast_batch(anchor: VehicleState, speed_window: gp.TimeSeriesWindow,
                   heading_window: gp.TimeSeriesWindow, speed_thetas, heading_thetas,
                   horizon: int, limits: Limits = DEFAULT_LIMITS,
                   dt: float = SAMPLE_PERIOD) -> np.ndarray:
    """Guarded position forecasts for a stack of (speed, heading) models.

    Returns an array (B, horizon, 2); rows whose kernels cannot be factorised
    are NaN.
    """
    q = horizon_times(anchor.t, horizon, dt)
    sm, _, ok_s = gp.batch_posterior(speed_window, speed_thetas, q)
    hm, hv, ok_h = gp.batch_posterior(heading_window, heading_thetas, q)
    pos = integrate_positions(anchor.x, anchor.y, sm, hm, hv, dt)
    viol = _first_violation(sm, limits, dt)
    for b in np.nonzero(viol)[0]:
        j = int(viol[b])
        if j == 1:
            x, y = anchor.x, anchor.y
        else:
            x, y = pos[b, j - 2]
        tail = _fallback(anchor, j, x, y, sm[b, j - 1], hm[b, j - 1], horizon, limits, dt)
        pos[b, j - 1:] = [(p.x, p.y) for p in tail]
    pos[~(ok_s & ok_h)] = np.nan
    return pos


def forecast_with_models(anchor: VehicleState, speed_window: gp.TimeSeriesWindow,
                         heading_window: gp.TimeSeriesWindow, speed_theta: gp.GpHyperparams,
                         heading_theta: gp.GpHyperparams, horizon: int,
                         limits: Limits = DEFAULT_LIMITS, dt: float = SAMPLE_PERIOD) -> list[ForecastPoint]:
    q = horizon_times(anchor.t, horizon, dt)
    sp = gp.posterior(speed_window, speed_theta, q)
    hp = gp.posterior(heading_window, heading_theta, q)
    return points_from_marginals(anchor, sp, hp, limits, dt)


def points_from_marginals(anchor: VehicleState, speed: gp.PredictiveSeries,
                          heading: gp.PredictiveSeries, limits: Limits = DEFAULT_LIMITS,
                          dt: float = SAMPLE_PERIOD) -> list[ForecastPoint]:
    """Dead-reckon guarded forecast points from marginals at t0, t0+dt, ..."""
    pos = integrate_positions(anchor.x, anchor.y, speed.means, heading.means, heading.variances, dt)
    points = [
        ForecastPoint(float(speed.times[j]), float(pos[j - 1, 0]), float(pos[j - 1, 1]),
                      float(speed.means[j]), float(speed.variances[j]),
                      float(heading.means[j]), float(heading.variances[j]), "gp",
                      float((speed.means[j] - speed.means[j - 1]) / dt))
        for j in range(1, len(speed.times))
    ]
    return hybrid_guard(points, anchor, limits, dt)


def hgp_indirect(speed_window: gp.TimeSeriesWindow, heading_window: gp.TimeSeriesWindow,
                 bank, last_state: VehicleState, horizon: int,
                 limits: Limits = DEFAULT_LIMITS, dt: float = SAMPLE_PERIOD) -> list[ForecastPoint]:
    """Select the most likely bank models for the windows and forecast.

    Falls back to a full-horizon CA forecast (tagged ``ca-fallback``) when
    the bank cannot supply a model.
    """
    if horizon <= 0:
        return []
    try:
        pair = bank.select(speed_window, heading_window)
        return forecast_with_models(last_state, speed_window, heading_window,
                                    pair.first.theta, pair.second.theta, horizon, limits, dt)
    except (gp.IllConditionedKernelError, LookupError, ValueError):
        return [_tag(p, "ca-fallback") for p in constant_accel(last_state, horizon, dt)]


def _tag(p: ForecastPoint, source: str) -> ForecastPoint:
    return ForecastPoint(p.t, p.x, p.y, p.speed_mean, p.speed_var, p.heading_mean,
                         p.heading_var, source, p.accel)


def hgp_direct(x_window: gp.TimeSeriesWindow, y_window: gp.TimeSeriesWindow, bank_xy,
               horizon: int, last_state: VehicleState | None = None,
               limits: Limits = DEFAULT_LIMITS, dt: float = SAMPLE_PERIOD) -> list[ForecastPoint]:
    """Forecast x and y directly as two independent GP series."""
    if len(x_window) == 0 or len(y_window) == 0:
        raise ValueError("empty window")
    if horizon <= 0:
        return []
    t0 = float(x_window.times[-1])
    if last_state is None:
        last_state = VehicleState(t0, float(x_window.values[-1]), float(y_window.values[-1]), 0.0, 0.0)
    try:
        pair = bank_xy.select(x_window, y_window)
    except (gp.IllConditionedKernelError, LookupError, ValueError):
        return [_tag(p, "ca-fallback") for p in constant_accel(last_state, horizon, dt)]
    q = horizon_times(t0, horizon, dt)[1:]
    px = gp.posterior(x_window, pair.first.theta, q)
    py = gp.posterior(y_window, pair.second.theta, q)
    xs = np.concatenate([[last_state.x], px.means])
    ys = np.concatenate([[last_state.y], py.means])
    vx, vy = np.diff(xs) / dt, np.diff(ys) / dt
    speed = np.hypot(vx, vy)
    heading = np.unwrap(np.concatenate([[last_state.heading], np.arctan2(vy, vx)]))[1:]
    acc = np.diff(np.concatenate([[last_state.speed], speed])) / dt
    points = [
        ForecastPoint(float(q[k]), float(px.means[k]), float(py.means[k]), float(speed[k]),
                      float(px.variances[k] + py.variances[k]), float(heading[k]), 0.0, "gp",
                      float(acc[k]))
        for k in range(horizon)
    ]
    return _guard_direct(points, last_state, limits, dt)


def _guard_direct(points, anchor, limits, dt):
    # only speed bounds: the speed implied by a direct forecast is a finite difference
    speeds = np.array([p.speed_mean for p in points])
    bad = np.nonzero(speeds > limits.v_max)[0]
    if bad.size == 0:
        return points
    j = int(bad[0]) + 1
    prev = anchor if j == 1 else points[j - 2]
    if isinstance(prev, VehicleState):
        x, y, v, h = prev.x, prev.y, prev.speed, prev.heading
    else:
        x, y, v, h = prev.x, prev.y, min(prev.speed_mean, limits.v_max), prev.heading_mean
    return points[:j - 1] + _fallback(anchor, j, x, y, v, h, len(points), limits, dt)
