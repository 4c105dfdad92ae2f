"""Trip data model, geodetic conversion, CSV ingestion and synthetic trips.

Positions live in a local East-North-Up frame (metres), headings are
radians measured counter-clockwise from East and stored unwrapped.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

logger = logging.getLogger(__name__)

SAMPLE_PERIOD = 0.1
STATIONARY_SPEED = 0.1

# WGS-84
WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)

TRIP_COLUMNS = ("t", "x", "y", "speed", "heading", "accel")
GEO_COLUMNS = ("t", "lat", "lon", "alt")


class TripFormatError(ValueError):
    """Raised when trip input violates the documented format."""


@dataclass(frozen=True)
class VehicleState:
    t: float
    x: float
    y: float
    speed: float
    heading: float
    accel: float = 0.0

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class GeoSample:
    t: float
    lat: float
    lon: float
    alt: float = 0.0


def _readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Trip:
    """An immutable, uniformly sampled vehicle trip.

    Columns are stored as read-only numpy arrays; ``states`` materialises
    them as :class:`VehicleState` objects.
    """

    vehicle_id: str
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    speed: np.ndarray
    heading: np.ndarray
    accel: np.ndarray
    sample_period: float = SAMPLE_PERIOD
    flags: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        cols = {}
        for name in TRIP_COLUMNS:
            cols[name] = _readonly(getattr(self, name))
            object.__setattr__(self, name, cols[name])
        n = len(cols["t"])
        if n == 0:
            raise TripFormatError("trip has no states")
        if any(len(c) != n for c in cols.values()):
            raise TripFormatError("trip columns have different lengths")
        if np.any(np.diff(cols["t"]) <= 0):
            raise TripFormatError("trip timestamps must be strictly increasing")
        if np.any(cols["speed"] < 0):
            raise TripFormatError("negative speed in trip")

    def __len__(self) -> int:
        return len(self.t)

    def state(self, i: int) -> VehicleState:
        return VehicleState(
            float(self.t[i]), float(self.x[i]), float(self.y[i]),
            float(self.speed[i]), float(self.heading[i]), float(self.accel[i]),
        )

    @property
    def states(self) -> list[VehicleState]:
        return [self.state(i) for i in range(len(self))]

    @property
    def positions(self) -> np.ndarray:
        return np.column_stack([self.x, self.y])

    def with_columns(self, **cols) -> "Trip":
        data = {name: getattr(self, name) for name in TRIP_COLUMNS}
        data.update(cols)
        return Trip(self.vehicle_id, sample_period=self.sample_period,
                    flags=self.flags, **data)

    @classmethod
    def from_states(cls, vehicle_id: str, states: Sequence[VehicleState],
                    sample_period: float = SAMPLE_PERIOD) -> "Trip":
        cols = {name: [getattr(s, name) for s in states] for name in TRIP_COLUMNS}
        return cls(vehicle_id, sample_period=sample_period, **cols)


def unwrap_to(reference: float, heading: float) -> float:
    """Shift ``heading`` by whole turns to lie within pi of ``reference``."""
    return heading + 2.0 * math.pi * round((reference - heading) / (2.0 * math.pi))


def wrap_angle(a):
    """Wrap angle(s) to [-pi, pi)."""
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


# ---------------------------------------------------------------------------
# Geodesy


def _validate_geo(s: GeoSample, index: int):
    if not (math.isfinite(s.lat) and -90.0 <= s.lat <= 90.0):
        raise TripFormatError(f"sample {index}: latitude {s.lat} out of range")
    if not (math.isfinite(s.lon) and -180.0 <= s.lon <= 180.0):
        raise TripFormatError(f"sample {index}: longitude {s.lon} out of range")


def geodetic_to_ecef(lat_deg, lon_deg, alt) -> np.ndarray:
    lat = np.radians(lat_deg)
    lon = np.radians(lon_deg)
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * np.sin(lat) ** 2)
    return np.stack([
        (n + alt) * np.cos(lat) * np.cos(lon),
        (n + alt) * np.cos(lat) * np.sin(lon),
        (n * (1.0 - WGS84_E2) + alt) * np.sin(lat),
    ], axis=-1)


def geo_to_enu(samples: Sequence[GeoSample], origin: GeoSample) -> list[tuple[float, float, float]]:
    """Convert geodetic samples to (t, east, north) relative to ``origin``.

    Uses the WGS-84 geodetic -> ECEF -> ENU chain. Raises
    :class:`TripFormatError` naming the first invalid sample.
    """
    if len(samples) == 0:
        raise TripFormatError("no geodetic samples")
    _validate_geo(origin, -1)
    for i, s in enumerate(samples):
        _validate_geo(s, i)
    lat = np.array([s.lat for s in samples])
    lon = np.array([s.lon for s in samples])
    alt = np.array([s.alt for s in samples])
    d = geodetic_to_ecef(lat, lon, alt) - geodetic_to_ecef(origin.lat, origin.lon, origin.alt)
    phi, lam = math.radians(origin.lat), math.radians(origin.lon)
    east = -math.sin(lam) * d[:, 0] + math.cos(lam) * d[:, 1]
    north = (-math.sin(phi) * math.cos(lam) * d[:, 0]
             - math.sin(phi) * math.sin(lam) * d[:, 1]
             + math.cos(phi) * d[:, 2])
    return [(s.t, float(e), float(n)) for s, e, n in zip(samples, east, north)]


# ---------------------------------------------------------------------------
# Kinematics


def _gradient(values: np.ndarray, t: np.ndarray) -> np.ndarray:
    out = np.empty_like(values)
    out[1:-1] = (values[2:] - values[:-2]) / (t[2:] - t[:-2])
    out[0] = (values[1] - values[0]) / (t[1] - t[0])
    out[-1] = (values[-1] - values[-2]) / (t[-1] - t[-2])
    return out


def _hold_heading(raw: np.ndarray, speed: np.ndarray) -> np.ndarray:
    moving = speed > STATIONARY_SPEED
    if not moving.any():
        return np.zeros_like(raw)
    out = raw.copy()
    first = int(np.argmax(moving))
    out[:first] = raw[first]
    last = raw[first]
    for i in range(first, len(raw)):
        if moving[i]:
            last = raw[i]
        else:
            out[i] = last
    return out


def derive_kinematics(positions: Sequence[tuple[float, float, float]],
                      vehicle_id: str = "rv") -> Trip:
    """Build a trip from (t, x, y) samples using finite differences.

    Speed and heading come from central differences of position (one-sided
    at the ends), acceleration from central differences of speed. While
    stationary the last heading seen above 0.1 m/s is held.
    """
    p = np.asarray(positions, dtype=float)
    if p.ndim != 2 or p.shape[0] < 3:
        raise TripFormatError("need at least 3 samples to derive kinematics")
    t, x, y = p[:, 0], p[:, 1], p[:, 2]
    if np.any(np.diff(t) <= 0):
        raise TripFormatError("timestamps must be strictly increasing")
    vx, vy = _gradient(x, t), _gradient(y, t)
    speed = np.hypot(vx, vy)
    heading = np.unwrap(_hold_heading(np.arctan2(vy, vx), speed))
    accel = _gradient(speed, t)
    period = float(np.median(np.diff(t)))
    return Trip(vehicle_id, t, x, y, speed, heading, accel, sample_period=period)


def resample_uniform(t: np.ndarray, columns: dict[str, np.ndarray],
                     period: float = SAMPLE_PERIOD) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Linearly interpolate columns onto a uniform grid starting at t[0].

    Already-uniform input is returned untouched so round trips stay exact.
    """
    t = np.asarray(t, dtype=float)
    if len(t) < 2 or np.all(np.abs(np.diff(t) - period) <= 1e-9):
        return t, columns
    n = int(math.floor((t[-1] - t[0]) / period + 1e-9)) + 1
    grid = t[0] + period * np.arange(n)
    return grid, {k: np.interp(grid, t, v) for k, v in columns.items()}


# ---------------------------------------------------------------------------
# CSV


def save_trip_csv(trip: Trip, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIP_COLUMNS)
        for row in zip(*(getattr(trip, c) for c in TRIP_COLUMNS)):
            w.writerow([repr(float(v)) for v in row])


def _read_rows(path, required: Iterable[str]) -> tuple[list[str], list[list[float]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise TripFormatError(f"{path}: empty file") from None
        missing = [c for c in required if c not in header]
        if missing:
            raise TripFormatError(f"{path}: missing column(s) {', '.join(missing)}")
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            if not raw:
                continue
            try:
                vals = [float(v) for v in raw]
            except ValueError:
                raise TripFormatError(f"{path}: row {lineno}: non-numeric value") from None
            if len(vals) != len(header):
                raise TripFormatError(f"{path}: row {lineno}: expected {len(header)} fields")
            if not all(math.isfinite(v) for v in vals):
                raise TripFormatError(f"{path}: row {lineno}: NaN or infinite value")
            if rows and vals[header.index("t")] <= rows[-1][header.index("t")]:
                raise TripFormatError(f"{path}: row {lineno}: t is not increasing")
            rows.append(vals)
    if not rows:
        raise TripFormatError(f"{path}: no data rows")
    return header, rows


def load_trip_csv(path, vehicle_id: str | None = None,
                  period: float = SAMPLE_PERIOD) -> Trip:
    """Read a trip CSV (``t,x,y[,speed,heading,accel]``).

    Missing kinematic columns are derived from positions. Non-uniform
    input is resampled onto a ``period`` grid.
    """
    header, rows = _read_rows(path, ("t", "x", "y"))
    data = np.array(rows)
    cols = {name: data[:, header.index(name)] for name in TRIP_COLUMNS if name in header}
    t = cols.pop("t")
    t, cols = resample_uniform(t, cols, period)
    vid = vehicle_id or Path(path).stem
    if not all(c in cols for c in ("speed", "heading", "accel")):
        derived = derive_kinematics(np.column_stack([t, cols["x"], cols["y"]]), vid)
        for name in ("speed", "heading", "accel"):
            cols.setdefault(name, getattr(derived, name))
    cols["heading"] = np.unwrap(cols["heading"])
    return Trip(vid, t, sample_period=period, **cols)


def load_geo_csv(path, origin: GeoSample | None = None, vehicle_id: str | None = None,
                 period: float = SAMPLE_PERIOD) -> Trip:
    header, rows = _read_rows(path, GEO_COLUMNS)
    samples = [GeoSample(*(r[header.index(c)] for c in GEO_COLUMNS)) for r in rows]
    enu = np.array(geo_to_enu(samples, origin or samples[0]))
    t, cols = resample_uniform(enu[:, 0], {"x": enu[:, 1], "y": enu[:, 2]}, period)
    return derive_kinematics(np.column_stack([t, cols["x"], cols["y"]]),
                             vehicle_id or Path(path).stem)


# ---------------------------------------------------------------------------
# Synthetic trips

SEGMENT_KINDS = ("cruise", "accelerate", "brake", "lane-change", "turn")


@dataclass(frozen=True)
class Segment:
    kind: str
    duration: float
    accel: float = 0.0
    yaw_rate: float = 0.0
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in SEGMENT_KINDS:
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if self.duration <= 0:
            raise ValueError("segment duration must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "Segment":
        d = dict(d)
        kind = d.pop("type", None) or d.pop("kind")
        if "decel" in d:
            d["accel"] = -abs(float(d.pop("decel")))
        if kind == "brake" and d.get("accel", 0.0) > 0:
            d["accel"] = -d["accel"]
        return cls(kind=kind, **{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        d = {"type": self.kind, "duration": self.duration}
        if self.kind in ("accelerate", "brake"):
            d["accel"] = self.accel
        elif self.kind == "turn":
            d["yaw_rate"] = self.yaw_rate
        elif self.kind == "lane-change":
            d["offset"] = self.offset
        return d


@dataclass(frozen=True)
class ManeuverScript:
    """Ordered maneuver segments plus the initial condition.

    YAML schema::

        initial_speed: 15.0      # m/s
        initial_heading: 0.0     # rad
        origin: [0.0, 0.0]       # m, ENU
        segments:
          - {type: cruise, duration: 10}
          - {type: brake, duration: 5, accel: -3}
          - {type: turn, duration: 10, yaw_rate: 0.1}
          - {type: lane-change, duration: 4, offset: 3.5}   # left positive
          - {type: accelerate, duration: 5, accel: 1.5}
        max_jerk: 2.0            # m/s^3, optional; omit for step changes
        max_yaw_accel: 0.2       # rad/s^2, optional; omit for step changes

    With the two optional limits, acceleration and yaw rate move towards
    each segment's target at a bounded rate instead of jumping.
    """

    segments: tuple[Segment, ...]
    initial_speed: float = 0.0
    initial_heading: float = 0.0
    origin: tuple[float, float] = (0.0, 0.0)
    max_jerk: float | None = None
    max_yaw_accel: float | None = None

    def __post_init__(self):
        for name in ("max_jerk", "max_yaw_accel"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ManeuverScript":
        return cls(
            segments=tuple(Segment.from_dict(s) for s in d["segments"]),
            initial_speed=float(d.get("initial_speed", 0.0)),
            initial_heading=float(d.get("initial_heading", 0.0)),
            origin=tuple(float(v) for v in d.get("origin", (0.0, 0.0))),
            max_jerk=None if d.get("max_jerk") is None else float(d["max_jerk"]),
            max_yaw_accel=None if d.get("max_yaw_accel") is None else float(d["max_yaw_accel"]),
        )

    def to_dict(self) -> dict:
        d = {
            "initial_speed": self.initial_speed,
            "initial_heading": self.initial_heading,
            "origin": list(self.origin),
            "segments": [s.to_dict() for s in self.segments],
        }
        for name in ("max_jerk", "max_yaw_accel"):
            if getattr(self, name) is not None:
                d[name] = getattr(self, name)
        return d

    @classmethod
    def load(cls, path) -> "ManeuverScript":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


def _lane_change_heading(tau: float, seg: Segment, speed: float) -> float:
    # lateral profile D*(tau/T - sin(2 pi tau/T)/(2 pi)): zero lateral speed at both ends
    lat_v = seg.offset / seg.duration * (1.0 - math.cos(2.0 * math.pi * tau / seg.duration))
    if speed <= STATIONARY_SPEED:
        return 0.0
    return math.asin(max(-1.0, min(1.0, lat_v / speed)))


def _approach(current: float, target: float, limit: float | None, dt: float) -> float:
    if limit is None:
        return target
    step = limit * dt
    return current + max(-step, min(step, target - current))


def generate_synthetic_trip(script: ManeuverScript, seed: int = 0,
                            vehicle_id: str = "rv",
                            dt: float = SAMPLE_PERIOD) -> Trip:
    """Integrate a maneuver script into a noise-free trip.

    Samples are taken at the end of every ``dt`` step (t = dt, 2 dt, ...)
    and positions obey ``x[k+1] = x[k] + dt * speed[k] * cos(heading[k])``
    exactly. ``seed`` is accepted for interface symmetry; the integration
    itself is deterministic. Speeds that would go negative are clamped to
    zero and the trip carries the ``speed_clamped`` flag.
    """
    del seed
    x, y = script.origin
    s = script.initial_speed
    base_heading = script.initial_heading
    h = base_heading
    rows = []
    clamped = False
    k = 0
    a, w = 0.0, 0.0
    for seg in script.segments:
        steps = int(round(seg.duration / dt))
        for j in range(steps):
            x += dt * s * math.cos(h)
            y += dt * s * math.sin(h)
            a = _approach(a, seg.accel if seg.kind in ("accelerate", "brake") else 0.0,
                          script.max_jerk, dt)
            w = _approach(w, seg.yaw_rate if seg.kind == "turn" else 0.0, script.max_yaw_accel, dt)
            s_new = s + a * dt
            if s_new < 0.0:
                s_new, a = 0.0, 0.0
                clamped = True
            a_eff = (s_new - s) / dt
            s = s_new
            base_heading += w * dt
            h = base_heading
            if seg.kind == "lane-change":
                h += _lane_change_heading((j + 1) * dt, seg, s)
            k += 1
            rows.append((k * dt, x, y, s, h, a_eff))
        if seg.kind == "lane-change":
            h = base_heading
    if clamped:
        logger.warning("trip %s: speed clamped at zero", vehicle_id)
    data = np.array(rows)
    return Trip(vehicle_id, *data.T, sample_period=dt,
                flags=frozenset({"speed_clamped"}) if clamped else frozenset())


def add_measurement_noise(trip: Trip, seed: int | np.random.SeedSequence = 0,
                          pos_sigma: float = 0.5, speed_sigma: float = 0.0,
                          heading_sigma: float = 0.0, accel_sigma: float = 0.0) -> Trip:
    """Return the transmitted copy of ``trip`` with additive Gaussian noise.

    The input trip is left untouched so it can serve as ground truth.
    """
    rng = np.random.default_rng(seed)
    n = len(trip)
    return trip.with_columns(
        x=trip.x + pos_sigma * rng.standard_normal(n),
        y=trip.y + pos_sigma * rng.standard_normal(n),
        speed=np.maximum(trip.speed + speed_sigma * rng.standard_normal(n), 0.0),
        heading=trip.heading + heading_sigma * rng.standard_normal(n),
        accel=trip.accel + accel_sigma * rng.standard_normal(n),
    )
