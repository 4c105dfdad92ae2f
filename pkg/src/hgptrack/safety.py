"""CAMP linear forward collision warning.

The warning range is the brake-onset range plus the closing distance
covered during the driver and brake delay. The brake-onset range has three
cases: RV stationary, RV moving throughout the encounter, and RV stopping
before the HV would close the gap.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .catc import CamEntry, TcConfig, classify, relative_offsets, zones_to_apps
from .trajectory import VehicleState

STATIONARY_SPEED = 0.5  # m/s


class BorCase(enum.IntEnum):
    STATIONARY = 1
    MOVING = 2
    STOPPING = 3


@dataclass(frozen=True)
class FcwConfig:
    t_d: float = 1.5
    a_req: float = -5.0
    eval_period: float = 0.1
    # bumper-to-bumper range = longitudinal offset minus this length
    vehicle_length: float = 4.5

    def __post_init__(self):
        if not self.t_d > 0:
            raise ValueError("t_d must be positive")
        if not self.a_req < 0:
            raise ValueError("a_req must be negative")
        if not self.eval_period > 0:
            raise ValueError("eval_period must be positive")


@dataclass(frozen=True)
class FcwDecision:
    t: float
    rv_id: str
    range: float
    r_w: float
    warn: bool
    case: BorCase
    source: str = "bsm"


def bor_case(v_hvp: float, v_rvp: float, a_rv: float, a_req: float) -> BorCase:
    """Pick the brake-onset case.

    Stationary when the RV's predicted speed is below 0.5 m/s. Stopping
    when the RV decelerates and comes to rest before the relative speed
    under the HV's required braking would reach zero (or the HV never
    catches up with the RV's deceleration at all).
    """
    if v_rvp < STATIONARY_SPEED:
        return BorCase.STATIONARY
    if a_rv < 0:
        t_stop = -v_rvp / a_rv
        if a_rv <= a_req:
            return BorCase.STOPPING
        t_match = (v_hvp - v_rvp) / (a_rv - a_req)
        if t_stop < t_match:
            return BorCase.STOPPING
    return BorCase.MOVING


def bor(v_hvp: float, v_rvp: float, a_rv: float, a_req: float,
        case: BorCase | int | None = None) -> tuple[float, BorCase]:
    """Brake-onset range (m, clamped at 0) and the case used."""
    if not a_req < 0:
        raise ValueError("a_req must be negative")
    case = bor_case(v_hvp, v_rvp, a_rv, a_req) if case is None else BorCase(case)
    hv_stop = v_hvp ** 2 / (-2.0 * a_req)
    if case is BorCase.STATIONARY:
        value = hv_stop
    elif case is BorCase.MOVING:
        closing = v_hvp - v_rvp
        if closing <= 0:
            value = 0.0
        elif a_req == a_rv:
            value = math.inf
        else:
            value = closing ** 2 / (-2.0 * (a_req - a_rv))
    else:
        if not a_rv < 0:
            raise ValueError("the stopping case needs a decelerating RV")
        value = hv_stop - v_rvp ** 2 / (-2.0 * a_rv)
    return max(value, 0.0), case


def warning_range(v_hv: float, a_hv: float, v_rv: float, a_rv: float,
                  cfg: FcwConfig = FcwConfig()) -> tuple[float, BorCase]:
    """Warning range r_w and the brake-onset case.

    Predicted speeds after the delay are clamped at zero. r_w is clamped
    from below at the brake-onset range.
    """
    v_hvp = max(v_hv + a_hv * cfg.t_d, 0.0)
    v_rvp = max(v_rv + a_rv * cfg.t_d, 0.0)
    b, case = bor(v_hvp, v_rvp, a_rv, cfg.a_req)
    r_w = b + (v_hv - v_rv) * cfg.t_d + 0.5 * (a_hv - a_rv) * cfg.t_d ** 2
    return max(r_w, b), case


def decide(t: float, rv_id: str, gap: float, hv: VehicleState, rv: VehicleState,
           cfg: FcwConfig = FcwConfig(), source: str = "bsm") -> FcwDecision:
    r_w, case = warning_range(hv.speed, hv.accel, rv.speed, rv.accel, cfg)
    return FcwDecision(t, rv_id, gap, r_w, gap < r_w, case, source)


def fcw_stream(frames: Iterable[tuple[VehicleState, Sequence[CamEntry]]],
               cfg: FcwConfig = FcwConfig(), tc: TcConfig = TcConfig(),
               apps_table: dict | None = None) -> list[FcwDecision]:
    """Evaluate FCW on a sequence of (host state, CAM snapshot) frames.

    Only RVs whose zone routes to FCW are evaluated; each decision records
    whether the RV state came from a fresh BSM or from a forecast.
    """
    out = []
    for hv, cam in frames:
        for e in cam:
            zone, direction = classify(hv, e.state, tc)
            if "FCW" not in zones_to_apps(zone, direction, apps_table):
                continue
            xrel, _ = relative_offsets(hv, e.state)
            out.append(decide(hv.t, e.id, xrel - cfg.vehicle_length, hv, e.state, cfg, e.source))
    return out


def write_decision_log(decisions: Iterable[FcwDecision], fh) -> None:
    fh.write("t,rv_id,range,r_w,warn,case,source\n")
    for d in decisions:
        fh.write(f"{d.t!r},{d.rv_id},{d.range!r},{d.r_w!r},{int(d.warn)},{int(d.case)},{d.source}\n")
