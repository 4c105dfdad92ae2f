"""Software V2X channel: BSM decimation and packet erasure.

Drop decisions are driven by uniforms drawn from a stream that depends only
on the seed, never on the PER or on packet contents. A packet is dropped
when its uniform falls below the PER, so for a fixed seed the set of lost
packets grows monotonically with the PER (common random numbers across
the whole PER grid as well as across predictors).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .trajectory import SAMPLE_PERIOD, Trip, VehicleState, unwrap_to, wrap_angle

BASE_RATE_HZ = 10
LOSS_MODELS = ("bernoulli", "gilbert-elliott")


@dataclass(frozen=True)
class ChannelConfig:
    per: float = 0.0
    rate_hz: float = 10
    latency: float = 0.0
    seed: int = 0
    loss_model: str = "bernoulli"
    # mean burst length in packets for the Gilbert-Elliott mode
    burst_length: float = 4.0

    def __post_init__(self):
        if not 0.0 <= self.per <= 1.0:
            raise ValueError(f"per must be in [0, 1], got {self.per}")
        if self.latency < 0:
            raise ValueError("latency must be non-negative")
        if self.loss_model not in LOSS_MODELS:
            raise ValueError(f"unknown loss model {self.loss_model!r}")
        if self.burst_length < 1:
            raise ValueError("burst_length must be at least one packet")
        decimation(self.rate_hz)


@dataclass(frozen=True)
class BsmPacket:
    vehicle_id: str
    state: VehicleState
    tx_time: float
    rx_time: float
    dropped: bool


def decimation(rate_hz: float, base_hz: int = BASE_RATE_HZ) -> int:
    """Keep every n-th sample of the base grid; ``rate_hz`` must divide it."""
    if rate_hz <= 0 or rate_hz > base_hz:
        raise ValueError(f"rate {rate_hz} Hz outside (0, {base_hz}]")
    n = base_hz / rate_hz
    if abs(n - round(n)) > 1e-9:
        raise ValueError(f"rate {rate_hz} Hz does not divide the {base_hz} Hz grid")
    return int(round(n))


def drop_uniforms(seed, n: int) -> np.ndarray:
    return np.random.default_rng(seed).random(n)


def drop_mask(n: int, per: float, seed, loss_model: str = "bernoulli",
              burst_length: float = 4.0) -> np.ndarray:
    """Boolean mask of dropped packets.

    In the Bernoulli mode packet i is dropped iff ``u_i < per``. In the
    Gilbert-Elliott mode a two-state chain (good: no loss, bad: all lost)
    has stationary loss probability ``per`` and mean bad-run length
    ``burst_length``; the chain is driven by the same uniforms.
    """
    u = drop_uniforms(seed, n)
    if loss_model == "bernoulli":
        return u < per
    if per <= 0.0:
        return np.zeros(n, bool)
    if per >= 1.0:
        return np.ones(n, bool)
    p_bg = 1.0 / burst_length
    p_gb = min(per / (1.0 - per) * p_bg, 1.0)
    out = np.empty(n, bool)
    bad = u[0] < per if n else False
    for i in range(n):
        if i:
            bad = (u[i] >= p_bg) if bad else (u[i] < p_gb)
        out[i] = bad
    return out


def emit(trip: Trip, cfg: ChannelConfig) -> list[BsmPacket]:
    """Decimate ``trip`` to the channel rate and apply erasure.

    Every decimated sample yields one packet; dropped ones are kept in the
    list (flagged) for auditing. Headings are wrapped to [-pi, pi) as on the
    air; receivers unwrap them again.
    """
    step = decimation(cfg.rate_hz)
    idx = np.arange(0, len(trip), step)
    dropped = drop_mask(len(idx), cfg.per, cfg.seed, cfg.loss_model, cfg.burst_length)
    packets = []
    for i, d in zip(idx, dropped):
        s = trip.state(int(i))
        s = VehicleState(s.t, s.x, s.y, s.speed, float(wrap_angle(s.heading)), s.accel)
        packets.append(BsmPacket(trip.vehicle_id, s, s.t, s.t + cfg.latency, bool(d)))
    return packets


def delivered(packets: Sequence[BsmPacket]) -> list[BsmPacket]:
    return [p for p in packets if not p.dropped]


class Receiver:
    """Restores continuous headings on a delivered packet stream."""

    def __init__(self):
        self.prev: float | None = None

    def __call__(self, packet: BsmPacket) -> VehicleState:
        s = packet.state
        h = s.heading if self.prev is None else unwrap_to(self.prev, s.heading)
        self.prev = h
        return VehicleState(s.t, s.x, s.y, s.speed, h, s.accel)


def estimate_trajectory(trip_tx: Trip, packets: Sequence[BsmPacket], predictor,
                        dt: float = SAMPLE_PERIOD) -> dict[str, np.ndarray]:
    """Run one predictor over a packet stream; estimates at every base sample.

    Before the first delivered packet there is nothing to estimate from, so
    those instants are NaN. Returns columns x, y, speed, heading, accel and
    a boolean ``fresh`` marking instants where a BSM was just received.
    """
    n = len(trip_tx)
    out = {k: np.full(n, np.nan) for k in ("x", "y", "speed", "heading", "accel")}
    fresh = np.zeros(n, bool)
    source = np.empty(n, dtype=object)
    rx = Receiver()
    by_index = {}
    t0 = float(trip_tx.t[0])
    for p in packets:
        if not p.dropped:
            k = int(round((p.rx_time - t0) / dt))
            if 0 <= k < n:
                by_index[k] = p
    for k in range(n):
        p = by_index.get(k)
        if p is not None:
            predictor.observe(rx(p))
            fresh[k] = True
        if getattr(predictor, "last", None) is None:
            continue
        e = predictor.estimate(float(trip_tx.t[k]))
        out["x"][k], out["y"][k] = e.x, e.y
        out["speed"][k], out["heading"][k], out["accel"][k] = e.speed_mean, e.heading_mean, e.accel
        source[k] = e.source
    out["fresh"] = fresh
    out["source"] = source
    return out
