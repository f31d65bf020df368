import json

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spsaoi.pmf import (DomainError, Pmf, binomial_pmf, convolve, convolve_power, max_cdf_gap, mean,
                        tail_above, total_variation)


def pmfs(max_len=12, deficient=True):
    weights = st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=1, max_size=max_len)

    def build(args):
        offset, w, scale = args
        w = np.asarray(w)
        if w.sum() == 0:
            w = w + 1.0
        return Pmf(offset, w / w.sum() * scale)

    scale = st.floats(0.2, 1.0) if deficient else st.just(1.0)
    return st.tuples(st.integers(-5, 5), weights, scale).map(build)


def geometric(p, n, start=1):
    b = np.arange(start, n + 1)
    return Pmf(start, p * (1 - p) ** (b - start))


class TestBinomial:
    def test_symmetric(self):
        assert binomial_pmf(2, 0.5, 1) == pytest.approx(0.5, abs=1e-15)

    def test_zero_successes(self):
        assert binomial_pmf(5, 0.2, 0) == pytest.approx(0.32768, rel=1e-13)

    def test_matches_arbitrary_precision(self):
        mpmath.mp.dps = 50
        p = mpmath.mpf("0.1") / 13
        exact = mpmath.binomial(194, 3) * p ** 3 * (1 - p) ** 191
        assert binomial_pmf(194, 0.1 / 13.0, 3) == pytest.approx(float(exact), rel=1e-12)

    @pytest.mark.parametrize("p", [1e-4, 0.5, 1 - 1e-4])
    @pytest.mark.parametrize("n", [0, 1, 17, 500, 2000])
    def test_sums_to_one(self, n, p):
        assert binomial_pmf(n, p, np.arange(n + 1)).sum() == pytest.approx(1.0, abs=1e-10)

    def test_large_n_is_finite(self):
        v = binomial_pmf(10_000, 0.3, np.arange(10_001))
        assert np.all(np.isfinite(v)) and v.sum() == pytest.approx(1.0, abs=1e-10)

    def test_edge_probabilities(self):
        assert binomial_pmf(4, 0.0, 0) == 1.0
        assert binomial_pmf(4, 1.0, 4) == 1.0
        assert binomial_pmf(4, 1.0, 3) == 0.0

    @pytest.mark.parametrize("args", [(3, 0.5, 4), (3, 0.5, -1), (3, 1.5, 1), (-1, 0.5, 0)])
    def test_domain_errors(self, args):
        with pytest.raises(DomainError):
            binomial_pmf(*args)


class TestPmf:
    def test_rejects_negative_and_excess_mass(self):
        with pytest.raises(DomainError):
            Pmf(0, [0.5, -0.1])
        with pytest.raises(DomainError):
            Pmf(0, [0.7, 0.7])
        with pytest.raises(DomainError):
            Pmf(0, [np.nan])

    def test_deficient_is_legal(self):
        p = Pmf(3, [0.2, 0.3])
        assert p.mass == pytest.approx(0.5)
        assert p.last == 4

    def test_weights_are_read_only(self):
        p = Pmf(0, [0.5, 0.5])
        with pytest.raises(ValueError):
            p.weights[0] = 1.0

    def test_prob_off_support(self):
        p = Pmf(2, [0.25, 0.75])
        assert p.prob(1) == 0.0 and p.prob(3) == 0.75
        np.testing.assert_array_equal(p.prob([0, 2, 3, 9]), [0, 0.25, 0.75, 0])

    def test_trim_keeps_mass(self):
        p = Pmf(0, [0, 0, 0.4, 0, 0.6, 0, 0])
        t = p.trim()
        assert (t.offset, len(t)) == (2, 3)
        assert t.mass == p.mass

    def test_json_round_trip(self):
        p = Pmf(4, [0.1, 0.2, 0.3])
        q = Pmf.from_json(p.to_json())
        assert q.offset == 4 and np.array_equal(q.weights, p.weights)
        assert json.loads(p.to_json())["mass"] == pytest.approx(0.6)

    def test_csv_round_trip(self, tmp_path):
        p = Pmf(1, [1 / 3, 0.0, 2 / 3])
        p.write_csv(tmp_path / "p.csv")
        q = Pmf.read_csv(tmp_path / "p.csv")
        assert q.offset == 1 and np.array_equal(q.weights, p.weights)
        assert (tmp_path / "p.csv").read_bytes().startswith(b"value,probability\n")

    def test_from_samples(self):
        p = Pmf.from_samples([3, 3, 5, 4])
        assert p.offset == 3
        np.testing.assert_allclose(p.weights, [0.5, 0.25, 0.25])


class TestConvolve:
    def test_identity(self):
        p = Pmf(2, [0.1, 0.6, 0.3])
        r = convolve(Pmf.delta(0), p)
        assert r.offset == 2 and np.array_equal(r.weights, p.weights)

    def test_two_fair_coins(self):
        r = convolve(Pmf.uniform(0, 1), Pmf.uniform(0, 1))
        assert r.offset == 0
        np.testing.assert_allclose(r.weights, [0.25, 0.5, 0.25])

    def test_geometric_square_is_negative_binomial(self):
        p = 0.3
        g = geometric(p, 50)
        r = convolve(g, g)
        assert r.offset == 2
        for k in range(2, 51):
            # sum over the first length j, term by term
            direct = sum(p * (1 - p) ** (j - 1) * p * (1 - p) ** (k - j - 1) for j in range(1, k))
            assert r.prob(k) == pytest.approx(direct, rel=1e-12)

    def test_power_small_cases(self):
        p = geometric(0.4, 10)
        assert convolve_power(p, 0).offset == 0 and convolve_power(p, 0).mass == 1.0
        np.testing.assert_array_equal(convolve_power(p, 1).weights, p.weights)

    def test_power_matches_naive(self):
        p = geometric(0.5, 30)
        naive = convolve(convolve(p, p), p)
        fast = convolve_power(p, 3)
        assert fast.offset == naive.offset
        np.testing.assert_allclose(fast.weights, naive.weights, atol=1e-12, rtol=0)

    @pytest.mark.parametrize("w", [2, 5, 8])
    def test_power_mass(self, w):
        p = geometric(0.2, 40)
        assert convolve_power(p, w).mass == pytest.approx(p.mass ** w, rel=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(pmfs(), pmfs())
    def test_commutative(self, a, b):
        ab, ba = convolve(a, b), convolve(b, a)
        assert ab.offset == ba.offset
        np.testing.assert_allclose(ab.weights, ba.weights, atol=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(pmfs(), pmfs(), pmfs())
    def test_associative(self, a, b, c):
        left, right = convolve(convolve(a, b), c), convolve(a, convolve(b, c))
        np.testing.assert_allclose(left.weights, right.weights, atol=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(pmfs(), pmfs())
    def test_mass_multiplies(self, a, b):
        assert convolve(a, b).mass == pytest.approx(a.mass * b.mass, rel=1e-9)


class TestDistances:
    def test_examples(self):
        p = Pmf(0, [0.5, 0.5])
        assert total_variation(p, p) == 0.0
        assert total_variation(Pmf.delta(0), Pmf.delta(1)) == 1.0
        assert total_variation(p, Pmf(0, [1.0, 0.0])) == pytest.approx(0.5)

    def test_different_supports(self):
        assert total_variation(Pmf(0, [1.0]), Pmf(5, [0.5, 0.5])) == 1.0

    @settings(max_examples=80, deadline=None)
    @given(pmfs(deficient=False), pmfs(deficient=False))
    def test_symmetric_and_bounded(self, p, q):
        d = total_variation(p, q)
        assert d == pytest.approx(total_variation(q, p), abs=1e-15)
        assert -1e-12 <= d <= 1 + 1e-12

    @settings(max_examples=80, deadline=None)
    @given(pmfs(), pmfs(), pmfs())
    def test_triangle(self, p, q, r):
        assert total_variation(p, r) <= total_variation(p, q) + total_variation(q, r) + 1e-12

    @settings(max_examples=40, deadline=None)
    @given(pmfs())
    def test_zero_iff_equal(self, p):
        assert total_variation(p, Pmf(p.offset, p.weights.copy())) == 0.0
        bumped = p.weights.copy()
        bumped[0] *= 0.5
        if p.weights[0] > 1e-9:
            assert total_variation(p, Pmf(p.offset, bumped)) > 0

    def test_cdf_gap(self):
        assert max_cdf_gap(Pmf.delta(0), Pmf.delta(2)) == 1.0
        assert max_cdf_gap(Pmf(0, [0.5, 0.5]), Pmf(0, [0.5, 0.5])) == 0.0


class TestMetrics:
    def test_mean(self):
        assert mean(Pmf.delta(7)) == 7
        assert mean(Pmf.uniform(0, 9)) == pytest.approx(4.5)

    def test_mean_not_renormalized(self):
        assert mean(Pmf(0, [0.0, 0.5])) == pytest.approx(0.5)

    def test_mean_of_empty(self):
        with pytest.raises(DomainError):
            mean(Pmf(0, []))

    def test_tail(self):
        assert tail_above(Pmf.delta(7), 6) == 1.0
        assert tail_above(Pmf.delta(7), 7) == 0.0
        assert tail_above(Pmf(0, [0.3, 0.3]), 5) == pytest.approx(0.4)

    @settings(max_examples=40, deadline=None)
    @given(pmfs())
    def test_tail_non_increasing(self, p):
        tails = [tail_above(p, t) for t in range(p.offset - 2, p.last + 2)]
        assert all(a >= b - 1e-15 for a, b in zip(tails, tails[1:]))
        assert all(0.0 <= t <= 1.0 for t in tails)
