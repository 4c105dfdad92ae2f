"""Synthetic driving suites and a car-following host vehicle.

The randomized suite mixes cruising, acceleration, braking, turns and lane
changes under jerk and yaw-acceleration limits, so speed and heading are
smooth the way recorded driving is. The host vehicle follows a lead trip
along the lead's own path with an intelligent-driver-model controller
that reacts to the lead with a perception delay, which is what makes
closing-speed episodes (and forward collision warnings) happen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..trajectory import (SAMPLE_PERIOD, ManeuverScript, Segment, Trip,
                          add_measurement_noise, generate_synthetic_trip)

MANEUVERS = ("cruise", "accelerate", "brake", "turn", "lane-change")
MANEUVER_WEIGHTS = (0.15, 0.2, 0.25, 0.25, 0.15)


def random_script(rng: np.random.Generator, duration: float = 40.0,
                  max_jerk: float = 2.0, max_yaw_accel: float = 0.1) -> ManeuverScript:
    """Draw a road-like maneuver script of at least ``duration`` seconds."""
    v0 = float(rng.uniform(10.0, 22.0))
    segs = [Segment("cruise", float(rng.uniform(3.0, 5.0)))]
    total, v = segs[0].duration, v0
    while total < duration:
        kind = str(rng.choice(MANEUVERS, p=MANEUVER_WEIGHTS))
        d = float(np.round(rng.uniform(4.0, 10.0), 1))
        if kind == "accelerate":
            a = float(rng.uniform(0.5, 2.0))
            d = min(d, max((28.0 - v) / a, 2.0))
            v += a * d
            segs.append(Segment("accelerate", d, accel=a))
        elif kind == "brake":
            a = -float(rng.uniform(1.0, 3.5))
            d = min(d, max((v - 4.0) / -a, 2.0))
            v = max(v + a * d, 0.0)
            segs.append(Segment("brake", d, accel=a))
        elif kind == "turn":
            # keep lateral acceleration under about 3 m/s^2
            limit = min(0.3, 3.0 / max(v, 1.0))
            rate = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.05, limit))
            segs.append(Segment("turn", d, yaw_rate=rate))
        elif kind == "lane-change":
            segs.append(Segment("lane-change", float(rng.uniform(4.0, 6.0)),
                                offset=float(rng.choice([-3.5, 3.5]))))
        else:
            segs.append(Segment("cruise", d))
        total += segs[-1].duration
    return ManeuverScript(tuple(segs), initial_speed=v0,
                          initial_heading=float(rng.uniform(-math.pi, math.pi)),
                          max_jerk=max_jerk, max_yaw_accel=max_yaw_accel)


def synthetic_suite(n: int, seed, duration: float = 40.0, prefix: str = "trip") -> list[Trip]:
    """``n`` noise-free trips from independent random scripts."""
    rng = np.random.default_rng(seed)
    return [generate_synthetic_trip(random_script(rng, duration), vehicle_id=f"{prefix}{i:03d}")
            for i in range(n)]


def transmitted(trip: Trip, seed, accel_sigma: float = 1.0) -> Trip:
    """The copy a vehicle puts on the air: exact pose, noisy acceleration.

    On-board acceleration comes from a differentiated or inertial signal
    and is far noisier than the GNSS-filtered pose, so only the
    acceleration column gets measurement noise.
    """
    return add_measurement_noise(trip, seed, pos_sigma=0.0, accel_sigma=accel_sigma)


# ---------------------------------------------------------------------------
# host vehicle


@dataclass(frozen=True)
class IdmParams:
    desired_speed: float = 30.0
    time_headway: float = 1.0
    min_gap: float = 2.0
    max_accel: float = 1.5
    comfort_decel: float = 2.0
    exponent: float = 4.0
    reaction_delay: float = 1.0
    max_decel: float = 9.0
    vehicle_length: float = 4.5


def idm_accel(v: float, dv: float, gap: float, p: IdmParams) -> float:
    """IDM acceleration for own speed ``v``, closing speed ``dv`` and net gap."""
    s_star = p.min_gap + max(0.0, v * p.time_headway + v * dv / (2.0 * math.sqrt(p.max_accel * p.comfort_decel)))
    a = p.max_accel * (1.0 - (v / p.desired_speed) ** p.exponent - (s_star / max(gap, 0.1)) ** 2)
    return max(a, -p.max_decel)


class PathLookup:
    """Position and heading along a trip's driven path by arc length.

    Before the start of the path it continues straight backwards along the
    initial heading.
    """

    def __init__(self, trip: Trip):
        step = np.hypot(np.diff(trip.x), np.diff(trip.y))
        self.s = np.concatenate([[0.0], np.cumsum(step)])
        self.x, self.y, self.heading = trip.x, trip.y, trip.heading

    def __call__(self, s: float) -> tuple[float, float, float]:
        if s <= 0.0:
            h = float(self.heading[0])
            return float(self.x[0]) + s * math.cos(h), float(self.y[0]) + s * math.sin(h), h
        x = float(np.interp(s, self.s, self.x))
        y = float(np.interp(s, self.s, self.y))
        return x, y, float(np.interp(s, self.s, self.heading))


def follower_trip(lead: Trip, params: IdmParams = IdmParams(), vehicle_id: str = "hv") -> Trip:
    """Host vehicle driving behind ``lead`` on the same path.

    The follower starts at the lead's speed and the IDM equilibrium gap.
    Its acceleration at step k uses the state seen ``reaction_delay``
    earlier (own speed, lead speed and gap). Arc length uses the same
    left-Riemann update as the trip generator.
    """
    dt = lead.sample_period
    path = PathLookup(lead)
    delay = int(round(params.reaction_delay / dt))
    v = float(lead.speed[0])
    gap0 = params.min_gap + v * params.time_headway
    s = -(gap0 + params.vehicle_length)
    s_hist, v_hist = [], []
    rows = []
    for k in range(len(lead)):
        s_hist.append(s)
        v_hist.append(v)
        j = max(k - delay, 0)
        gap = path.s[j] - s_hist[j] - params.vehicle_length
        a = idm_accel(v_hist[j], v_hist[j] - float(lead.speed[j]), gap, params)
        v_next = max(v + a * dt, 0.0)
        x, y, h = path(s)
        rows.append((float(lead.t[k]), x, y, v, h, (v_next - v) / dt))
        s += dt * v
        v = v_next
    data = np.array(rows)
    return Trip(vehicle_id, *data.T, sample_period=dt)


def braking_lead_script(initial_speed: float = 20.0, brake: float = -6.0,
                        brake_time: float = 3.0) -> ManeuverScript:
    """Cruise, brake hard, then stop: the canonical forward-collision case."""
    return ManeuverScript(
        (Segment("cruise", 5.0), Segment("brake", brake_time, accel=brake), Segment("cruise", 6.0)),
        initial_speed=initial_speed, max_jerk=15.0,
    )


def demo_pair(script: ManeuverScript | None = None,
              params: IdmParams = IdmParams()) -> tuple[Trip, Trip]:
    """(host, remote) trips for the single-scenario demo."""
    lead = generate_synthetic_trip(script or braking_lead_script(), vehicle_id="rv")
    return follower_trip(lead, params), lead


__all__ = [
    "IdmParams", "MANEUVERS", "PathLookup", "braking_lead_script", "demo_pair", "follower_trip",
    "idm_accel", "random_script", "synthetic_suite", "transmitted", "SAMPLE_PERIOD",
]
