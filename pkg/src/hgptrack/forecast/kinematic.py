"""Kinematic baselines: hold-last, constant speed, constant acceleration, KF."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..trajectory import SAMPLE_PERIOD, VehicleState

SOURCES = ("bsm", "gp", "ca-fallback", "cs-fallback", "hold", "cs", "ca", "kf")


@dataclass(frozen=True)
class ForecastPoint:
    t: float
    x: float
    y: float
    speed_mean: float
    speed_var: float
    heading_mean: float
    heading_var: float
    source: str
    accel: float = 0.0

    @classmethod
    def from_state(cls, s: VehicleState, source: str = "bsm") -> "ForecastPoint":
        return cls(s.t, s.x, s.y, s.speed, 0.0, s.heading, 0.0, source, s.accel)


def transition(dt: float = SAMPLE_PERIOD, accel: bool = True) -> np.ndarray:
    if accel:
        return np.array([[1.0, dt, 0.5 * dt * dt], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])
    return np.array([[1.0, dt, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]])


def ca_propagate(p: float, s: float, a: float, steps: int, dt: float = SAMPLE_PERIOD,
                 accel_until: float = math.inf) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Constant-acceleration propagation of (arc length, speed, accel).

    Speed is clamped at zero: a vehicle braking to a stop stays stopped.
    Acceleration is applied only while elapsed time <= ``accel_until``.
    Returns arrays for steps 1..steps.
    """
    ps, ss, acc = np.empty(steps), np.empty(steps), np.empty(steps)
    for k in range(steps):
        a_k = a if (k + 1) * dt <= accel_until + 1e-9 else 0.0
        s_new = s + a_k * dt
        if s_new < 0.0:
            # stops inside the step
            p += s * s / (-2.0 * a_k) if a_k < 0 else 0.0
            s, a_k = 0.0, 0.0
        else:
            p += s * dt + 0.5 * a_k * dt * dt
            s = s_new
        ps[k], ss[k], acc[k] = p, s, a_k
    return ps, ss, acc


def _along_heading(last: VehicleState, dist, speeds, accels, dt, source) -> list[ForecastPoint]:
    c, s = math.cos(last.heading), math.sin(last.heading)
    return [
        ForecastPoint(last.t + (k + 1) * dt, last.x + d * c, last.y + d * s,
                      float(v), 0.0, last.heading, 0.0, source, float(a))
        for k, (d, v, a) in enumerate(zip(dist, speeds, accels))
    ]


def hold_last(last_state: VehicleState, horizon: int, dt: float = SAMPLE_PERIOD) -> list[ForecastPoint]:
    """BSM-dependent baseline: the last received state is repeated."""
    return [
        replace(ForecastPoint.from_state(last_state, "hold"), t=last_state.t + (k + 1) * dt)
        for k in range(horizon)
    ]


def constant_speed(last_state: VehicleState, horizon: int, dt: float = SAMPLE_PERIOD) -> list[ForecastPoint]:
    v = max(last_state.speed, 0.0)
    dist = v * dt * np.arange(1, horizon + 1)
    return _along_heading(last_state, dist, np.full(horizon, v), np.zeros(horizon), dt, "cs")


def constant_accel(last_state: VehicleState, horizon: int, dt: float = SAMPLE_PERIOD) -> list[ForecastPoint]:
    dist, speeds, accels = ca_propagate(0.0, max(last_state.speed, 0.0), last_state.accel, horizon, dt)
    return _along_heading(last_state, dist, speeds, accels, dt, "ca")


# ---------------------------------------------------------------------------
# Kalman filter on longitudinal (arc length, speed, accel)

KF_R = np.diag([10.0, 1.0, 0.5])
# tuned on training trips: a loose speed term lets the exact transmitted
# speeds steer the filter, so it beats CA when the accel channel is noisy
KF_Q = np.diag([1e-3, 1.0, 1e-2])


@dataclass(frozen=True, eq=False)
class KalmanState:
    x_hat: np.ndarray
    P: np.ndarray
    Q: np.ndarray = field(default_factory=lambda: KF_Q.copy())
    R: np.ndarray = field(default_factory=lambda: KF_R.copy())
    clamped: bool = False


def _psd_repair(P: np.ndarray) -> tuple[np.ndarray, bool]:
    P = 0.5 * (P + P.T)
    w, v = np.linalg.eigh(P)
    if w.min() >= 0:
        return P, False
    return (v * np.maximum(w, 0.0)) @ v.T, True


def kalman_step(state: KalmanState, measurement=None, dt: float = SAMPLE_PERIOD) -> KalmanState:
    """One CA time update, followed by a measurement update if one is given.

    The measurement model is the 3x3 identity: a BSM reports position
    (arc length), speed and acceleration.
    """
    A = transition(dt)
    x = A @ state.x_hat
    P = A @ state.P @ A.T + state.Q
    if measurement is not None:
        z = np.asarray(measurement, dtype=float)
        S = P + state.R
        K = np.linalg.solve(S.T, P.T).T
        x = x + K @ (z - x)
        P = (np.eye(3) - K) @ P
    P, clamped = _psd_repair(P)
    return KalmanState(x, P, state.Q, state.R, clamped or state.clamped)
