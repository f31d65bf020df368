import itertools

import numpy as np
import pytest

from spsaoi.aoi import reservation_statistics
from spsaoi.config import ConfigError, SystemConfig
from spsaoi.pmf import Pmf, total_variation
from spsaoi.simulator import run_simulation
from spsaoi.validation import (ConditionalStatePmfs, assumption_distance, assumption_study,
                               brute_force_stationary, default_cap, empty_slot_report, exact_aoi_small,
                               exact_empty_slot_pmf, study_nodes, transition_matrix)


def codes(tr):
    m = tr.config.frame_size
    place = m ** np.arange(tr.config.num_nodes)
    return tr.all_slots.astype(np.int64) @ place


class TestStationary:
    def test_single_node_uniform(self):
        chain = brute_force_stationary(SystemConfig(1, 3, 0.5))
        np.testing.assert_allclose(chain.pi, 1 / 3, atol=1e-12)

    def test_rows_sum_to_one(self):
        t = transition_matrix(SystemConfig(3, 5, 0.3))
        np.testing.assert_allclose(np.asarray(t.sum(axis=1)).ravel(), 1.0, atol=1e-12)

    def test_fixed_point_residual(self):
        chain = brute_force_stationary(SystemConfig(2, 4, 0.3))
        assert np.abs(chain.transition.T @ chain.pi - chain.pi).max() < 1e-12

    @pytest.mark.parametrize("cfg", [(2, 4, 0.3), (3, 5, 0.5), (2, 6, 0.9), (4, 5, 0.2)])
    def test_slot_marginal_uniform(self, cfg):
        chain = brute_force_stationary(SystemConfig(*cfg))
        np.testing.assert_allclose(chain.slot_marginal.weights, 1 / cfg[1], atol=1e-10)

    def test_permutation_invariance(self):
        m = 4
        chain = brute_force_stationary(SystemConfig(2, m, 0.3))
        place = m ** np.arange(2)
        for perm in itertools.permutations(range(m)):
            permuted = np.asarray(perm)[chain.states] @ place
            np.testing.assert_allclose(chain.pi[permuted], chain.pi, atol=1e-10)

    def test_refuses_large_state_space(self):
        with pytest.raises(ConfigError):
            brute_force_stationary(SystemConfig(5, 20, 0.1))

    def test_matrix_matches_simulated_transitions(self):
        cfg = SystemConfig(2, 4, 0.3, seed=4, warmup_frames=10, measured_frames=200_000)
        tr = run_simulation(cfg)
        c = codes(tr)
        t = transition_matrix(cfg).toarray()
        counts = np.zeros_like(t)
        np.add.at(counts, (c[:-1], c[1:]), 1)
        for s in np.flatnonzero(counts.sum(axis=1) > 5000):
            emp = Pmf.from_counts(counts[s])
            assert total_variation(emp, Pmf(0, t[s])) < 0.02
            assert np.all(counts[s][t[s] == 0] == 0)

    def test_simulated_states_converge(self):
        cfg = SystemConfig(2, 4, 0.3, seed=8, warmup_frames=100, measured_frames=1_000_000)
        chain = brute_force_stationary(cfg)
        emp = Pmf.from_counts(np.bincount(codes(run_simulation(cfg))[1:], minlength=16))
        assert total_variation(emp, Pmf(0, chain.pi)) < 0.01


class TestExactAoi:
    def test_single_node(self):
        ex = exact_aoi_small(SystemConfig(1, 4, 0.3))
        assert ex.collision.prob(0) == pytest.approx(1.0, abs=1e-12)
        assert ex.collision.trim().last == 0

    def test_default_cap(self):
        assert default_cap(0.3) == 400
        assert exact_aoi_small(SystemConfig(2, 5, 0.3)).deficit < 1e-6

    def test_small_cap_warns(self):
        with pytest.warns(RuntimeWarning):
            ex = exact_aoi_small(SystemConfig(2, 5, 0.3), cap=3)
        assert ex.deficit > 1e-6
        assert ex.averaged.mass == pytest.approx(1 - ex.deficit, abs=1e-12)

    def test_size_guard(self):
        with pytest.raises(ConfigError):
            exact_aoi_small(SystemConfig(3, 40, 0.01))

    def test_empty_slot_law(self):
        chain = brute_force_stationary(SystemConfig(2, 3, 1.0))
        q = exact_empty_slot_pmf(chain).trim()
        assert q.offset >= 1 and q.last <= 2 and q.mass == pytest.approx(1.0)


class TestAssumptions:
    def test_single_node(self):
        d = assumption_distance(run_simulation(SystemConfig(1, 4, 0.3, measured_frames=5000)))
        assert d.d_collision == 0 and d.d_singleton == 0
        assert d.low_confidence

    def test_conditionals_have_unit_mass(self):
        tr = run_simulation(SystemConfig(13, 20, 0.1, seed=2, warmup_frames=2000, measured_frames=40_000))
        cond = ConditionalStatePmfs.from_statistics(reservation_statistics(tr, pool=True))
        for p in (cond.marginal, cond.given_prev_collision, cond.given_prev_singleton):
            assert p.mass == pytest.approx(1.0, abs=1e-9)
            assert p.offset == 1 and p.last <= 13
        assert cond.count_collision + cond.count_singleton == cond.count_marginal

    def test_low_confidence_flag(self):
        tr = run_simulation(SystemConfig(13, 20, 0.1, seed=2, warmup_frames=2000, measured_frames=2_000))
        assert assumption_distance(tr).low_confidence
        assert not assumption_distance(tr, min_pairs=1).low_confidence

    def test_study_rows(self):
        rows = assumption_study([10, 20], 0.5, 0.2, replications=2, warmup_frames=500,
                                measured_frames=5000)
        assert [(m, V) for m, V, _ in rows] == [(10, 5), (20, 10)]
        assert study_nodes(50, 0.65) == 32


class TestEmptySlots:
    def test_single_node(self):
        rep = empty_slot_report(run_simulation(SystemConfig(1, 6, 0.4, measured_frames=1000)))
        assert rep.empirical.trim().offset == 5 and len(rep.empirical.trim()) == 1

    def test_support_with_full_reselection(self):
        rep = empty_slot_report(run_simulation(SystemConfig(2, 3, 1.0, measured_frames=5000)))
        emp = rep.empirical.trim()
        assert emp.offset >= 1 and emp.last <= 2

    def test_report_fields(self):
        tr = run_simulation(SystemConfig(13, 20, 0.1, seed=3, warmup_frames=2000, measured_frames=20_000))
        rep = empty_slot_report(tr)
        assert rep.relative_gap == pytest.approx(abs(rep.solution.e_n - rep.mean) / 20)
        assert rep.relative_gap < 0.05
        assert 0 <= rep.tv_from_point_mass <= 1
