import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from tauscreen.chen_stein import (IndicatorModel, PoissonProcessApprox, b3_empirical, b3_from_joint,
                                  chen_stein_bound, compute_b1, compute_b2, compute_b3,
                                  estimate_pair_means, poisson_tail, poisson_truncated_mean,
                                  process_bound, read_neighborhoods, simulate_independent_sums,
                                  tv_bound, tv_noise_floor, tv_to_poisson, void_probability_bound,
                                  write_neighborhoods)
from tauscreen.errors import MissingPairMean, ParseError


class TestTerms:
    def test_b1_independent(self):
        m = IndicatorModel.independent(np.full(50, 0.02))
        assert compute_b1(m) == pytest.approx(50 * 0.02 ** 2)
        assert compute_b2(m) == 0

    def test_b1_full_dependence(self):
        m = IndicatorModel([0.1, 0.2], [{0, 1}, {0, 1}], {(0, 1): 0.05})
        assert compute_b1(m) == pytest.approx(0.09)

    def test_b1_zero(self):
        assert compute_b1(IndicatorModel.independent(np.zeros(4))) == 0

    def test_b2_identical(self):
        m = IndicatorModel([0.1, 0.1], [{1}, {0}], {(0, 1): 0.1})
        assert compute_b2(m) == pytest.approx(0.2)

    def test_b2_disjoint(self):
        m = IndicatorModel([0.1, 0.2], [{1}, {0}], lambda i, j: 0.0)
        assert compute_b2(m) == 0

    def test_missing_pair(self):
        m = IndicatorModel([0.1, 0.2], [{1}, {0}])
        with pytest.raises(MissingPairMean):
            compute_b2(m)

    def test_frechet(self):
        with pytest.raises(ValueError):
            IndicatorModel([0.1, 0.2], [{1}, {0}], {(0, 1): 0.3})

    def test_b3_default_zero(self):
        assert compute_b3(IndicatorModel.independent([0.3, 0.4])) == 0


def exchangeable_table():
    """Joint pmf of three indicators: a common coin picks success rate 0.1 or 0.5."""
    pmf = {}
    for y in itertools.product((0, 1), repeat=3):
        pmf[y] = sum(0.5 * math.prod(q if v else 1 - q for v in y) for q in (0.1, 0.5))
    return pmf


class TestB3:
    def test_exhaustive_three_indicators(self):
        pmf = exchangeable_table()
        hoods = [{0}, {1}, {2}]
        terms = b3_from_joint(pmf, hoods)
        # hand computation for indicator 0 given (Y1, Y2)
        p = 0.3
        expect = 0.0
        for y1, y2 in itertools.product((0, 1), repeat=2):
            w = sum(pmf[(y0, y1, y2)] for y0 in (0, 1))
            expect += w * abs(pmf[(1, y1, y2)] / w - p)
        assert terms[0] == pytest.approx(expect)
        assert np.all(terms > 0)

    def test_empirical_converges(self, rng):
        pmf = exchangeable_table()
        outcomes = list(pmf)
        draws = np.array(outcomes)[rng.choice(8, size=200_000, p=[pmf[o] for o in outcomes])]
        est = b3_empirical(draws, [{0}, {1}, {2}])
        assert est == pytest.approx(b3_from_joint(pmf, [{0}, {1}, {2}]), abs=0.01)
        pm = estimate_pair_means(draws, [{0, 1}, {1}, {2}])
        assert pm[(0, 1)] == pytest.approx(0.5 * 0.01 + 0.5 * 0.25, abs=0.01)

    def test_independent_and_deterministic(self):
        indep = {y: math.prod(0.3 if v else 0.7 for v in y) for y in itertools.product((0, 1), repeat=3)}
        assert b3_from_joint(indep, [{0}, {1}, {2}]) == pytest.approx(np.zeros(3), abs=1e-15)
        det = {(1, 0, 1): 1.0}
        assert b3_from_joint(det, [{0}, {1}, {2}]).tolist() == [0, 0, 0]


class TestBounds:
    def test_independent_example(self):
        m = IndicatorModel.independent(np.full(100, 0.01))
        b = chen_stein_bound(m)
        assert b.lam == pytest.approx(1) and b.b1 == pytest.approx(0.01)
        assert b.tv_bound == pytest.approx(0.02 * (1 - math.exp(-1)))
        assert b.tv_bound == pytest.approx(0.0126424, abs=1e-7)

    def test_zero_and_large_lambda(self):
        assert tv_bound(0, 0, 0, 3.0) == 0
        assert tv_bound(0.1, 0.2, 0.0, 0.0) == pytest.approx(0.6)
        assert tv_bound(0.1, 0.0, 0.0, 50.0) == pytest.approx(0.2 / 50)

    def test_void(self):
        lo, hi = void_probability_bound(1.0, 0.01, 0, 0)
        assert (lo, hi) == pytest.approx((math.exp(-1) - 0.02, math.exp(-1) + 0.02))
        assert void_probability_bound(2.0, 0, 0, 0) == pytest.approx((math.exp(-2),) * 2)
        assert void_probability_bound(0.0, 0, 0, 0) == (1.0, 1.0)

    def test_process(self):
        pp = PoissonProcessApprox([0.1, 0.2, 0.3], [1.0, 1.0, 1.0], [0.01, 0.03, 0.02], [0, 0, 0], [0, 0, 0])
        assert process_bound(pp) == pytest.approx(0.03 * (1 - math.exp(-1)))
        with pytest.raises(ValueError):
            PoissonProcessApprox([0.2, 0.1], [1, 2], [0, 0], [0, 0], [0, 0])
        with pytest.raises(ValueError):
            PoissonProcessApprox([0.1, 0.2], [2, 1], [0, 0], [0, 0], [0, 0])
        inc = PoissonProcessApprox.from_increments([1, 2], [0.5, 0.25], [0, 0], [0, 0], [0, 0])
        assert inc.drift.tolist() == [0.5, 0.75]

    def test_independent_tv_below_bound(self, rng):
        p = np.full(30, 0.05)
        W = simulate_independent_sums(p, 200_000, rng)
        tv = tv_to_poisson(W, p.sum())
        assert tv <= chen_stein_bound(IndicatorModel.independent(p)).tv_bound
        assert tv_noise_floor(p.sum(), 200_000) < tv


class TestPoisson:
    def test_tail_examples(self):
        assert poisson_tail(1.0, 0) == pytest.approx(1 - math.exp(-1))
        assert poisson_tail(2.0, 3) == pytest.approx(1 - math.exp(-2) * (1 + 2 + 2 + 4 / 3))
        assert poisson_tail(0.0, 4) == 0
        assert poisson_tail(3.0, -1) == 1

    def test_truncated_mean_examples(self):
        assert poisson_truncated_mean(2.5, 0) == pytest.approx(2.5)
        assert poisson_truncated_mean(2.0, 1) == pytest.approx(2 * (1 - math.exp(-2)))
        assert poisson_truncated_mean(0.0, 3) == 0

    @given(st.floats(0.01, 30), st.integers(0, 40))
    def test_against_scipy(self, lam, r):
        assert poisson_tail(lam, r) == pytest.approx(stats.poisson.sf(r, lam), rel=1e-9, abs=1e-300)

    def test_tv_exact_sample(self):
        counts = np.array([0] * 50 + [1] * 50)
        expected = abs(0.5 - math.exp(-1)) + abs(0.5 - math.exp(-1)) + (1 - 2 * math.exp(-1))
        assert tv_to_poisson(counts, 1.0) == pytest.approx(expected)


class TestNeighbourhoodFile:
    def test_round_trip(self, tmp_path):
        hoods = (frozenset({0, 1}), frozenset({1, 0}), frozenset({2}))
        path = tmp_path / "nb.txt"
        write_neighborhoods(path, hoods)
        assert read_neighborhoods(path, 3) == hoods

    def test_errors(self, tmp_path):
        path = tmp_path / "nb.txt"
        path.write_text("1: 2\n2 3\n")
        with pytest.raises(ParseError, match="line 2"):
            read_neighborhoods(path, 3)
        path.write_text("1: 9\n")
        with pytest.raises(ParseError):
            read_neighborhoods(path, 3)
