import numpy as np
import pytest

from hgptrack import gp
from hgptrack.bank import (BankConfig, KernelBank, ModelPair, ModelSelectionError, build_bank,
                           cluster_bank, evaluate_bank, fit_pair, maybe_extend_bank, select_model,
                           trip_windows)
from hgptrack.gp import GpHyperparams, GpModel
from hgptrack.trajectory import ManeuverScript, generate_synthetic_trip

CFG = BankConfig(tw=20, restarts=2)


def script_trip(segments, speed=12.0, vid="t"):
    return generate_synthetic_trip(ManeuverScript.from_dict(
        {"initial_speed": speed, "vehicle_id": vid, "segments": segments}))


def cruise(duration=8.0):
    return script_trip([{"kind": "cruise", "duration": duration}])


def weave():
    turns = [{"kind": "turn", "duration": 2.5, "yaw_rate": r} for r in (0.3, -0.3, 0.3, -0.3)]
    return script_trip([{"kind": "cruise", "duration": 3.0}] + turns, vid="weave")


def pair(i, g=1.0):
    return ModelPair(GpModel("speed", GpHyperparams(g, 1.0 + i, 0.1), 0.0, 2.0),
                     GpModel("heading", GpHyperparams(g, 0.5, 0.1 * (i + 1)), 0.0, 2.0), id=i)


class TestBuild:
    def test_cruise_needs_one_model(self):
        bank, stats = build_bank([cruise()], CFG)
        assert len(bank) == 1
        assert stats.new_model_events == 1 and stats.breaches == 0
        assert stats.mean_persistency > 0

    def test_repeat_trip_adds_nothing(self):
        trip = weave()
        bank, first = build_bank([trip], CFG)
        n = len(bank)
        again = evaluate_bank(bank, [trip], CFG, extend=True)
        assert len(bank) == n and again.new_model_events == 0

    def test_fixed_bank_never_grows(self):
        bank, _ = build_bank([cruise()], CFG)
        stats = evaluate_bank(bank, [weave()], CFG)
        assert len(bank) == 1 and stats.new_model_events == 0
        assert stats.breaches > 0

    def test_empty_fixed_bank_rejected(self):
        with pytest.raises(ModelSelectionError):
            evaluate_bank(KernelBank(), [cruise()], CFG)

    def test_short_trip_skipped(self):
        bank, stats = build_bank([cruise(1.0)], CFG)
        assert len(bank) == 0 and stats.total_steps == 0

    def test_new_model_series(self):
        _, stats = build_bank([cruise(), weave()], CFG)
        series = stats.new_model_series(10)
        assert series.sum() * 10 == stats.new_model_events - sum(
            1 for e in stats.events if e.kind == "new" and
            sum(s for _, s, _ in stats.per_trip[:e.trip_index]) + e.step >= len(series) * 10)


class TestExtend:
    def test_weave_against_cruise_bank(self):
        bank, _ = build_bank([cruise()], CFG)
        stats = evaluate_bank(bank, [weave()], CFG, extend=True)
        assert stats.new_model_events >= 1
        assert evaluate_bank(bank, [weave()], CFG, extend=True).new_model_events == 0

    def test_maybe_extend_below_threshold(self):
        bank = KernelBank([pair(0)])
        assert maybe_extend_bank(bank, None, 0.1) == (bank, None)

    def test_maybe_extend_appends_once(self):
        trip = weave()
        windows = trip_windows(trip, 60, 20, ("speed", "heading"))
        bank = KernelBank([pair(0)])
        _, added = maybe_extend_bank(bank, windows, 2.0, seed=0, restarts=2)
        assert len(bank) == 2 and added.id == 1
        _, again = maybe_extend_bank(bank, windows, 2.0, seed=0, restarts=2)
        assert len(bank) == 2 and again is added


class TestSelect:
    def test_singleton(self):
        trip = weave()
        w = trip_windows(trip, 40, 20, ("speed", "heading"))
        bank = KernelBank([pair(0)])
        assert select_model(bank, *w) is bank.models[0]

    def test_own_model_preferred(self):
        trip = weave()
        w = trip_windows(trip, 70, 20, ("speed", "heading"))
        own = fit_pair(w, seed=0, restarts=2, model_id=9)
        bank = KernelBank([pair(i, g=0.05 * (i + 1)) for i in range(5)] + [own])
        chosen = select_model(bank, *w)
        assert chosen.id == 9 and chosen.source_ids is None

    def test_shift_invariant(self):
        trip = weave()
        w = trip_windows(trip, 70, 20, ("speed", "heading"))
        shifted = [gp.TimeSeriesWindow(x.times + 100.0, x.values + 5.0, x.kind) for x in w]
        bank = KernelBank([pair(i, g=0.1 * (i + 1)) for i in range(6)])
        assert select_model(bank, *w).first is select_model(bank, *shifted).first

    def test_empty_bank(self):
        w = trip_windows(cruise(), 30, 20, ("speed", "heading"))
        with pytest.raises(ModelSelectionError):
            select_model(KernelBank(), *w)


class TestCluster:
    def test_identical_members_collapse(self):
        bank = KernelBank([ModelPair(pair(0).first, pair(0).second, id=i) for i in range(16)])
        out = cluster_bank(bank, 4)
        assert len(out) == 1 and out.models[0].id == 0

    def test_medoids_are_members(self, small_training):
        full = small_training.full
        out = cluster_bank(full, 5, seed=1)
        assert len(out) == 5
        ids = {m.id for m in full}
        assert all(m.id in ids for m in out)
        assert [m.id for m in out] == sorted(m.id for m in out)

    def test_small_bank_unchanged(self):
        bank = KernelBank([pair(i) for i in range(3)])
        out = cluster_bank(bank, 8)
        assert out.to_dict() == bank.to_dict() and out is not bank

    def test_deterministic(self, small_training):
        a = cluster_bank(small_training.full, 6, seed=3)
        b = cluster_bank(small_training.full, 6, seed=3)
        assert [m.id for m in a] == [m.id for m in b]

    def test_bad_size(self):
        with pytest.raises(ValueError):
            cluster_bank(KernelBank(), 0)


class TestSerialisation:
    def test_round_trip(self, tmp_path, small_bank):
        path = tmp_path / "b.json"
        small_bank.save(path)
        back = KernelBank.load(path)
        assert back.to_dict() == small_bank.to_dict()

    def test_kind_mismatch(self):
        with pytest.raises(ValueError):
            KernelBank([pair(0)], kinds=("x", "y"))

    def test_duplicate_ids(self):
        with pytest.raises(ValueError):
            KernelBank([pair(0), pair(0)])
