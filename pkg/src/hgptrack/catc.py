"""Context-aware target classification.

The local map keeps one record per remote vehicle: last accepted BSM, a
bounded path history, the per-RV predictor, and the zone relative to the
host vehicle. Zones come from the RV's offset in the host's heading frame
(longitudinal ahead/behind, five lateral bins by lane width) plus a
direction bucket from the heading difference.
"""

from __future__ import annotations

import enum
import json
import math
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Callable, Iterable

from .forecast.kinematic import ForecastPoint
from .trajectory import SAMPLE_PERIOD, VehicleState, unwrap_to, wrap_angle


class Longitudinal(str, enum.Enum):
    AHEAD = "Ahead"
    BEHIND = "Behind"


class Lateral(str, enum.Enum):
    FAR_LEFT = "FarLeft"
    LEFT = "Left"
    ON_CENTRE = "OnCentre"
    RIGHT = "Right"
    FAR_RIGHT = "FarRight"


class Direction(str, enum.Enum):
    ONGOING = "Ongoing"
    ONCOMING = "Oncoming"
    UNCLASSIFIED = "Unclassified"


@dataclass(frozen=True)
class ClassificationZone:
    longitudinal: Longitudinal
    lateral: Lateral

    def __str__(self) -> str:
        return f"{self.longitudinal.value}/{self.lateral.value}"


@dataclass(frozen=True)
class TcConfig:
    w_lane: float = 3.5
    dphi_ongoing: float = math.pi / 4
    dphi_oncoming: float = 3 * math.pi / 4
    staleness_limit: float = 10.0

    def __post_init__(self):
        if not (self.w_lane > 0 and self.dphi_ongoing > 0 and self.staleness_limit > 0):
            raise ValueError("lane width, thresholds and staleness limit must be positive")
        if not self.dphi_ongoing < self.dphi_oncoming:
            raise ValueError("dphi_ongoing must be below dphi_oncoming")


def relative_offsets(hv: VehicleState, rv: VehicleState) -> tuple[float, float]:
    """(longitudinal, lateral) offset of the RV in the HV frame, left positive."""
    dx, dy = rv.x - hv.x, rv.y - hv.y
    c, s = math.cos(hv.heading), math.sin(hv.heading)
    return dx * c + dy * s, -dx * s + dy * c


def lateral_bin(ld: float, w_lane: float) -> Lateral:
    # OnCentre is closed on both ends; the outer bins own the 1.5 w boundaries
    # on the inner side, matching the printed interval brackets.
    half, outer = 0.5 * w_lane, 1.5 * w_lane
    if -half <= ld <= half:
        return Lateral.ON_CENTRE
    if half < ld <= outer:
        return Lateral.LEFT
    if ld > outer:
        return Lateral.FAR_LEFT
    if -outer <= ld < -half:
        return Lateral.RIGHT
    return Lateral.FAR_RIGHT


def direction_bucket(dphi: float, cfg: TcConfig) -> Direction:
    """Bucket an absolute heading difference in [0, pi]."""
    if dphi <= cfg.dphi_ongoing:
        return Direction.ONGOING
    if dphi >= cfg.dphi_oncoming:
        return Direction.ONCOMING
    return Direction.UNCLASSIFIED


def heading_difference(a: float, b: float) -> float:
    return abs(float(wrap_angle(a - b)))


def classify_relative(xrel: float, ld: float, dphi: float,
                      cfg: TcConfig = TcConfig()) -> tuple[ClassificationZone, Direction]:
    lon = Longitudinal.AHEAD if xrel >= 0 else Longitudinal.BEHIND
    return ClassificationZone(lon, lateral_bin(ld, cfg.w_lane)), direction_bucket(dphi, cfg)


def classify(hv: VehicleState, rv_state: VehicleState,
             cfg: TcConfig = TcConfig()) -> tuple[ClassificationZone, Direction]:
    """Zone and direction of ``rv_state`` relative to ``hv``.

    Without lane geometry the host heading stands in for the lane heading.
    """
    xrel, ld = relative_offsets(hv, rv_state)
    return classify_relative(xrel, ld, heading_difference(rv_state.heading, hv.heading), cfg)


@lru_cache(maxsize=None)
def _default_routes() -> dict:
    text = resources.files("hgptrack").joinpath("data/apps_table.json").read_text(encoding="utf-8")
    return _parse_routes(json.loads(text))


def _parse_routes(d: dict) -> dict:
    return {(r["longitudinal"], r["lateral"], r["direction"]): frozenset(r["apps"])
            for r in d["routes"]}


def load_apps_table(path=None) -> dict:
    if path is None:
        return _default_routes()
    with open(path, encoding="utf-8") as fh:
        return _parse_routes(json.load(fh))


def zones_to_apps(zone: ClassificationZone, direction: Direction, table: dict | None = None) -> frozenset:
    table = _default_routes() if table is None else table
    return table.get((zone.longitudinal.value, zone.lateral.value, direction.value), frozenset())


# ---------------------------------------------------------------------------
# local map


@dataclass
class LocalMapRecord:
    vehicle_id: str
    last_bsm: VehicleState
    last_rx_time: float
    path_history: deque
    predictor: object
    zone: ClassificationZone | None = None
    direction: Direction = Direction.UNCLASSIFIED
    rejected: int = 0

    def is_stale(self, now: float, limit: float) -> bool:
        return now - self.last_rx_time > limit

    def forecast(self, horizon: int) -> list[ForecastPoint]:
        return self.predictor.forecast(horizon)


@dataclass(frozen=True)
class CamEntry:
    id: str
    t: float
    x: float
    y: float
    speed: float
    heading: float
    accel: float
    zone: ClassificationZone | None
    direction: Direction
    stale: bool
    source: str

    @property
    def state(self) -> VehicleState:
        return VehicleState(self.t, self.x, self.y, max(self.speed, 0.0), self.heading, self.accel)

    def to_json(self) -> str:
        return json.dumps({
            "id": self.id, "t": self.t, "x": self.x, "y": self.y, "speed": self.speed,
            "heading": self.heading, "zone": None if self.zone is None else str(self.zone),
            "direction": self.direction.value, "stale": self.stale, "source": self.source,
        })


@dataclass
class LocalMap:
    """Single-writer map of remote-vehicle records.

    ``predictor_factory`` builds the per-RV predictor for a new record.
    """

    predictor_factory: Callable[[], object]
    cfg: TcConfig = field(default_factory=TcConfig)
    history_capacity: int = 30
    gate_g0: float = 5.0
    v_max: float = 60.0
    forecast_horizon: float = 10.0
    dt: float = SAMPLE_PERIOD
    records: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.history_capacity < 1:
            raise ValueError("history capacity must be positive")

    @property
    def horizon_steps(self) -> int:
        return int(round(self.forecast_horizon / self.dt))

    def gate_radius(self, elapsed: float) -> float:
        return self.gate_g0 + self.v_max * max(elapsed, 0.0)


def outlier_gate(rec: LocalMapRecord, bsm: VehicleState, lmap: LocalMap, rx_time: float) -> bool:
    """Accept a BSM near the record's forecast, or any BSM for a stale record."""
    if rec.is_stale(rx_time, lmap.cfg.staleness_limit):
        return True
    elapsed = bsm.t - rec.last_bsm.t
    if elapsed <= 0:
        return False
    f = rec.predictor.estimate(bsm.t)
    return math.hypot(bsm.x - f.x, bsm.y - f.y) <= lmap.gate_radius(elapsed)


def update_record(lmap: LocalMap, bsm: VehicleState, rx_time: float, vehicle_id: str,
                  hv: VehicleState | None = None) -> bool:
    """Apply one received BSM; returns whether it was accepted.

    Unknown vehicles get a new record. Accepted BSMs replace the anchor,
    extend the path history and restart the forecast; rejected ones leave
    the record untouched apart from a counter.
    """
    rec = lmap.records.get(vehicle_id)
    if rec is not None:
        # BSM headings arrive wrapped; keep the record's heading series continuous
        bsm = VehicleState(bsm.t, bsm.x, bsm.y, bsm.speed,
                           unwrap_to(rec.last_bsm.heading, bsm.heading), bsm.accel)
    if rec is None:
        pred = lmap.predictor_factory()
        pred.observe(bsm)
        rec = LocalMapRecord(vehicle_id, bsm, rx_time, deque([bsm], maxlen=lmap.history_capacity), pred)
        lmap.records[vehicle_id] = rec
    else:
        if not outlier_gate(rec, bsm, lmap, rx_time):
            rec.rejected += 1
            return False
        rec.predictor.observe(bsm)
        rec.last_bsm, rec.last_rx_time = bsm, rx_time
        rec.path_history.append(bsm)
    if hv is not None:
        rec.zone, rec.direction = classify(hv, bsm, lmap.cfg)
    return True


def record_entry(lmap: LocalMap, rec: LocalMapRecord, now: float,
                 hv: VehicleState | None = None) -> CamEntry:
    k = int(round((now - rec.last_bsm.t) / lmap.dt))
    stale = rec.is_stale(now, lmap.cfg.staleness_limit)
    if k > lmap.horizon_steps:
        stale = True
        k = lmap.horizon_steps
    if k <= 0:
        p = ForecastPoint.from_state(rec.last_bsm)
    else:
        p = rec.predictor.estimate(rec.last_bsm.t + k * lmap.dt)
    zone, direction = rec.zone, rec.direction
    state = VehicleState(now, p.x, p.y, max(p.speed_mean, 0.0), p.heading_mean, p.accel)
    if hv is not None:
        zone, direction = classify(hv, state, lmap.cfg)
    return CamEntry(rec.vehicle_id, now, p.x, p.y, p.speed_mean, p.heading_mean, p.accel,
                    zone, direction, stale, p.source)


def snapshot(lmap: LocalMap, now: float, hv: VehicleState | None = None) -> list[CamEntry]:
    """Every record extrapolated to ``now``; past the forecast horizon the
    last forecast point is held and the entry is flagged stale."""
    return [record_entry(lmap, rec, now, hv) for rec in lmap.records.values()]


def write_cam_ndjson(entries: Iterable[CamEntry], fh) -> None:
    for e in entries:
        fh.write(e.to_json())
        fh.write("\n")
