import numpy as np
import pytest

from spsaoi.config import ConfigError, SystemConfig, UniformCounter
from spsaoi.pmf import Pmf, total_variation
from spsaoi.simulator import (ChannelState, _advance, empirical_slot_marginal, initial_state,
                              make_rng, read_trace_dump, run_simulation, step_frame,
                              trace_record_dtype, write_trace_dump)


def small(V=5, m=10, p=0.3, frames=2000, warmup=100, seed=1, **kw):
    return SystemConfig(V, m, p, seed=seed, warmup_frames=warmup, measured_frames=frames, **kw)


class TestInitialState:
    def test_convention_start(self):
        s = initial_state(SystemConfig(4, 6, 0.1))
        assert s.slots.tolist() == [1, 2, 3, 4]
        assert s.frame_states().tolist() == [1, 1, 1, 1]
        assert s.frame_index == 1 and s.reservation_age.tolist() == [1, 1, 1, 1]

    def test_single_node(self):
        assert initial_state(SystemConfig(1, 2, 0.5)).slots.tolist() == [1]

    def test_full_scale_empty_count(self):
        s = initial_state(SystemConfig(195, 200, 0.1))
        assert len(np.unique(s.slots)) == 195
        assert len(s.empty_slots(200)) == 5

    def test_rejects_full_frame(self):
        with pytest.raises(ConfigError):
            SystemConfig(6, 6, 0.1)


class TestStep:
    def test_movers_only_land_in_previous_empties(self):
        # four nodes, two of them sharing slot 4, so slots 1 and 3 are empty
        cfg = SystemConfig(4, 5, 0.5)
        state = ChannelState(7, np.array([0, 2, 4, 4]), np.array([3, 3, 3, 3]), np.zeros(4, np.int64))
        rng = make_rng(11)
        landed = set()
        for _ in range(400):
            nxt = step_frame(state, cfg, rng)
            moved = nxt.slots != state.slots
            landed.update(nxt.slots[moved].tolist())
            assert np.all(nxt.reservation_age[moved] == 1)
            assert np.all(nxt.reservation_age[~moved] == 4)
        assert landed == {1, 3}

    def test_no_reselection_freezes_slots(self):
        slots = np.array([1, 2, 3])
        ages = np.ones(3, np.int64)
        draws = make_rng(0).random((50, 2, 3))
        out_s = np.empty((50, 3), np.int16)
        out_st = np.empty((50, 3), np.uint8)
        out_e = np.empty(50, np.int32)
        _advance(slots, ages, np.zeros(3, np.int64), draws, 6, 0.0, False, 0, 0, 0.0,
                 out_s, out_st, out_e, True)
        assert np.all(out_s == [1, 2, 3])
        assert ages.tolist() == [51, 51, 51]

    def test_reselection_is_uniform_over_other_slots(self):
        cfg = SystemConfig(1, 4, 1.0, seed=5, warmup_frames=0, measured_frames=1_000_000)
        tr = run_simulation(cfg)
        prev, nxt = tr.all_slots[:-1, 0], tr.all_slots[1:, 0]
        for s in range(4):
            targets = nxt[prev == s]
            assert not np.any(targets == s)
            emp = Pmf.from_counts(np.bincount(targets, minlength=4))
            ref = Pmf(0, [0 if k == s else 1 / 3 for k in range(4)])
            assert total_variation(emp, ref) < 0.005

    @pytest.mark.parametrize("counter", [None, UniformCounter(2, 4, 0.3)])
    def test_step_matches_batch_run(self, counter):
        kw = {} if counter is None else {"counter": counter}
        cfg = small(V=6, m=9, warmup=37, frames=300, **kw)
        tr = run_simulation(cfg, chunk_frames=64)
        rng = make_rng(cfg.seed)
        state = initial_state(cfg, rng)
        for _ in range(cfg.warmup_frames):
            state = step_frame(state, cfg, rng)
        np.testing.assert_array_equal(state.slots, tr.all_slots[0])
        np.testing.assert_array_equal(state.reservation_age, tr.context_age)
        for i in range(cfg.measured_frames):
            state = step_frame(state, cfg, rng)
            np.testing.assert_array_equal(state.slots, tr.slots[i])
            np.testing.assert_array_equal(state.frame_states(), tr.frame_state[i])
        np.testing.assert_array_equal(state.reservation_age, tr.final_state.reservation_age)


class TestRun:
    def test_record_count_and_invariants(self):
        cfg = small(V=7, m=10, p=0.2, frames=5000)
        tr = run_simulation(cfg)
        assert len(tr) == 5000 and tr.first_frame == cfg.warmup_frames + 2
        for i in range(0, 5000, 97):
            slots = tr.slots[i].astype(int)
            counts = np.bincount(slots, minlength=10)
            assert np.array_equal(tr.frame_state[i], counts[slots])
            assert tr.empty_count[i] == 10 - len(np.unique(slots))
            assert counts.sum() == 7
            assert slots.min() >= 0 and slots.max() < 10

    def test_reservation_age_bookkeeping(self):
        tr = run_simulation(small(frames=3000))
        for v in range(tr.config.num_nodes):
            ages = tr.reservation_age(v)
            changed = tr.reselected(v)
            assert np.all(ages[1:][changed] == 1)
            assert np.all(ages[1:][~changed] == ages[:-1][~changed] + 1)
        np.testing.assert_array_equal(
            np.stack([tr.reservation_age(v)[-1] for v in range(tr.config.num_nodes)]),
            tr.final_state.reservation_age)

    def test_frame_state_non_increasing_within_reservation(self):
        tr = run_simulation(small(V=8, m=10, p=0.2, frames=20_000))
        same = ~tr.reselected()
        state = tr.all_frame_state.astype(int)
        assert np.all(state[1:][same] <= state[:-1][same])

    def test_single_node_always_singleton(self):
        tr = run_simulation(small(V=1, m=3, p=0.4, frames=1000))
        assert np.all(tr.frame_state == 1)

    def test_deterministic(self):
        a, b = run_simulation(small()), run_simulation(small())
        assert np.array_equal(a.all_slots, b.all_slots)
        assert np.array_equal(a.all_frame_state, b.all_frame_state)
        assert np.array_equal(a.context_age, b.context_age)
        c = run_simulation(small(seed=2))
        assert not np.array_equal(a.all_slots, c.all_slots)

    def test_chunking_does_not_change_trajectory(self):
        a = run_simulation(small(frames=1000), chunk_frames=7)
        b = run_simulation(small(frames=1000), chunk_frames=4096)
        assert np.array_equal(a.all_slots, b.all_slots)

    def test_uniform_counter_lengths(self):
        cfg = small(V=3, m=12, frames=20_000, counter=UniformCounter(5, 15, 0.0))
        tr = run_simulation(cfg)
        assert "counter_semantics" in tr.metadata
        for v in range(3):
            ends = np.flatnonzero(tr.reselected(v))
            lengths = np.diff(ends)
            assert lengths.min() >= 5 and lengths.max() <= 15
            # each counter value in 5..15 is about equally likely
            assert np.bincount(lengths, minlength=16)[5:].min() > 0.6 * len(lengths) / 11

    def test_uniform_counter_keep_extends_reservations(self):
        cfg = small(V=3, m=12, frames=20_000, counter=UniformCounter(5, 5, 0.5))
        tr = run_simulation(cfg)
        lengths = np.diff(np.flatnonzero(tr.reselected(0)))
        assert set(np.unique(lengths) % 5) == {0}
        assert lengths.mean() == pytest.approx(10, rel=0.1)


class TestSlotMarginal:
    def test_single_node_uniform(self):
        cfg = SystemConfig(1, 3, 1.0, seed=3, warmup_frames=10, measured_frames=1_000_000)
        assert total_variation(empirical_slot_marginal(run_simulation(cfg)), Pmf.uniform(0, 2)) < 0.005

    def test_requires_frames(self):
        tr = run_simulation(small(frames=1))
        assert empirical_slot_marginal(tr).mass == pytest.approx(1.0)

    def test_pooled_counts_every_node(self):
        tr = run_simulation(small(frames=500))
        pooled = empirical_slot_marginal(tr, pool=True)
        counts = np.bincount(tr.slots.ravel().astype(np.int64), minlength=tr.config.frame_size)
        np.testing.assert_allclose(pooled.weights, counts / counts.sum(), atol=1e-15)
        mixed = np.mean([empirical_slot_marginal(tr, v).weights for v in range(tr.config.num_nodes)], axis=0)
        np.testing.assert_allclose(pooled.weights, mixed, atol=1e-12)


class TestTraceDump:
    def test_round_trip(self, tmp_path):
        tr = run_simulation(small(V=4, m=7, frames=500))
        path = write_trace_dump(tr, tmp_path / "t.bin")
        assert path.stat().st_size == 500 * (4 + 2 * 4 + 4)
        rec = read_trace_dump(path, 4)
        assert rec["frame"][0] == tr.first_frame
        assert np.array_equal(rec["frame"], np.arange(tr.first_frame, tr.first_frame + 500))
        assert np.array_equal(rec["slots"], tr.slots)
        assert np.array_equal(rec["state"], tr.frame_state)
        assert trace_record_dtype(4).itemsize == 16
