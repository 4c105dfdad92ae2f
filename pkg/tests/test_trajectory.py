import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hgptrack.trajectory import (GeoSample, ManeuverScript, Segment, Trip, TripFormatError,
                                 add_measurement_noise, derive_kinematics, geo_to_enu,
                                 generate_synthetic_trip, load_trip_csv, save_trip_csv,
                                 unwrap_to, wrap_angle)

# meridian arc length of 1e-5 degree at the equator on WGS-84:
# a (1 - e^2) * 1e-5 * pi / 180, computed separately with a = 6378137, e^2 = 6.69437999014e-3
NORTH_1E5_DEG_AT_EQUATOR = 1.105743


def script(*segments, v0=0.0, **kw):
    return ManeuverScript(tuple(segments), initial_speed=v0, **kw)


class TestGeoToEnu:
    def test_origin_maps_to_zero(self):
        o = GeoSample(3.0, 42.3, -83.7, 250.0)
        (t, x, y), = geo_to_enu([o], o)
        assert t == 3.0
        assert abs(x) < 1e-9 and abs(y) < 1e-9

    def test_small_north_offset_at_equator(self):
        o = GeoSample(0.0, 0.0, 0.0)
        (_, x, y), = geo_to_enu([GeoSample(0.1, 1e-5, 0.0)], o)
        assert y == pytest.approx(NORTH_1E5_DEG_AT_EQUATOR, abs=0.01)
        assert abs(x) < 0.01

    def test_far_longitude_is_finite(self):
        o = GeoSample(0.0, 10.0, -179.9)
        out = geo_to_enu([GeoSample(0.1, 10.0, 179.9)], o)
        assert all(math.isfinite(v) for v in out[0])

    def test_out_of_range_names_sample(self):
        o = GeoSample(0.0, 0.0, 0.0)
        with pytest.raises(TripFormatError, match="sample 1"):
            geo_to_enu([o, GeoSample(0.1, 91.0, 0.0)], o)

    def test_order_and_timestamps_preserved(self):
        o = GeoSample(0.0, 42.0, -83.0)
        samples = [GeoSample(0.1 * k, 42.0 + 1e-6 * k, -83.0) for k in range(5)]
        assert [p[0] for p in geo_to_enu(samples, o)] == [s.t for s in samples]


class TestDeriveKinematics:
    def test_straight_line_east(self):
        trip = derive_kinematics([(0.1 * k, 1.0 * k, 0.0) for k in range(20)])
        np.testing.assert_allclose(trip.speed, 10.0, atol=1e-9)
        np.testing.assert_allclose(trip.heading, 0.0, atol=1e-12)

    def test_stationary_holds_last_heading(self):
        pts = [(0.1 * k, 1.0 * k, 1.0 * k) for k in range(10)]
        pts += [(0.1 * k, 9.0, 9.0) for k in range(10, 20)]
        trip = derive_kinematics(pts)
        assert trip.speed[-1] == 0.0
        assert trip.heading[-1] == pytest.approx(math.pi / 4)

    def test_circular_arc_heading_rate(self):
        v, r = 10.0, 50.0
        w = v / r
        pts = [(0.1 * k, r * math.sin(w * 0.1 * k), r - r * math.cos(w * 0.1 * k)) for k in range(80)]
        trip = derive_kinematics(pts)
        rate = np.diff(trip.heading) / 0.1
        np.testing.assert_allclose(rate[2:-2], w, rtol=0.01)

    def test_too_few_samples(self):
        with pytest.raises(TripFormatError):
            derive_kinematics([(0.0, 0.0, 0.0), (0.1, 1.0, 0.0)])


class TestSyntheticTrip:
    def test_cruise(self):
        trip = generate_synthetic_trip(script(Segment("cruise", 10.0), v0=15.0), seed=7)
        assert len(trip) == 100
        np.testing.assert_array_equal(trip.speed, 15.0)

    def test_brake_clamps_to_zero(self):
        trip = generate_synthetic_trip(script(Segment("brake", 5.0, accel=-3.0), v0=15.0))
        assert trip.speed[-1] == 0.0
        assert trip.speed.min() >= 0.0

    def test_turn_heading_change(self):
        trip = generate_synthetic_trip(script(Segment("turn", 10.0, yaw_rate=0.1), v0=10.0))
        assert trip.heading[-1] - 0.0 == pytest.approx(1.0, abs=1e-6)

    def test_positions_follow_left_riemann_rule(self):
        trip = generate_synthetic_trip(script(Segment("turn", 3.0, yaw_rate=0.2),
                                              Segment("accelerate", 2.0, accel=1.0), v0=8.0))
        dx = np.diff(trip.x)
        np.testing.assert_allclose(dx, 0.1 * trip.speed[:-1] * np.cos(trip.heading[:-1]), atol=1e-12)

    def test_jerk_limit_bounds_accel_change(self):
        trip = generate_synthetic_trip(script(Segment("cruise", 1.0), Segment("brake", 4.0, accel=-3.0),
                                              v0=20.0, max_jerk=2.0))
        assert np.abs(np.diff(trip.accel)).max() <= 2.0 * 0.1 + 1e-12

    def test_lane_change_ends_on_base_heading(self):
        trip = generate_synthetic_trip(script(Segment("lane-change", 4.0, offset=3.5), Segment("cruise", 1.0),
                                              v0=15.0))
        assert trip.heading[-1] == pytest.approx(0.0, abs=1e-12)
        assert trip.y[-1] == pytest.approx(3.5, abs=0.05)

    def test_script_yaml_round_trip(self, tmp_path):
        s = script(Segment("cruise", 2.0), Segment("brake", 1.0, accel=-2.0), v0=12.0, max_jerk=3.0)
        s.dump(tmp_path / "s.yaml")
        assert ManeuverScript.load(tmp_path / "s.yaml") == s


class TestTripCsv:
    def test_round_trip_bitwise(self, tmp_path):
        trip = generate_synthetic_trip(script(Segment("turn", 3.0, yaw_rate=0.13), v0=11.3), vehicle_id="a")
        save_trip_csv(trip, tmp_path / "a.csv")
        back = load_trip_csv(tmp_path / "a.csv")
        for c in ("t", "x", "y", "speed", "heading", "accel"):
            np.testing.assert_array_equal(getattr(back, c), getattr(trip, c))

    def test_positions_only_derives_kinematics(self, tmp_path):
        p = tmp_path / "p.csv"
        p.write_text("t,x,y\n" + "".join(f"{0.1 * k!r},{2.0 * k!r},0.0\n" for k in range(10)))
        trip = load_trip_csv(p)
        np.testing.assert_allclose(trip.speed, 20.0)

    def test_decreasing_time_names_row(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("t,x,y\n0.0,0,0\n0.2,1,0\n0.1,2,0\n")
        with pytest.raises(TripFormatError, match="row 4"):
            load_trip_csv(p)


class TestTripInvariants:
    def test_negative_speed_rejected(self):
        with pytest.raises(TripFormatError):
            Trip("v", [0.0, 0.1], [0, 1], [0, 0], [1.0, -1.0], [0, 0], [0, 0])

    def test_columns_read_only(self):
        trip = Trip("v", [0.0, 0.1], [0, 1], [0, 0], [1.0, 1.0], [0, 0], [0, 0])
        with pytest.raises(ValueError):
            trip.x[0] = 5.0

    def test_noise_leaves_truth_untouched(self):
        trip = generate_synthetic_trip(script(Segment("cruise", 2.0), v0=10.0))
        noisy = add_measurement_noise(trip, 3, pos_sigma=0.0, accel_sigma=1.0)
        np.testing.assert_array_equal(noisy.x, trip.x)
        assert not np.array_equal(noisy.accel, trip.accel)
        np.testing.assert_array_equal(trip.accel, 0.0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-50, 50), st.floats(-50, 50))
    def test_unwrap_to_stays_within_pi(self, ref, h):
        u = unwrap_to(ref, h)
        assert abs(u - ref) <= math.pi + 1e-9
        assert math.isclose(math.cos(u), math.cos(h), abs_tol=1e-9)
        assert -math.pi <= float(wrap_angle(h)) < math.pi
