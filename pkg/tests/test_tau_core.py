import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tauscreen.errors import DataError, DegenerateDesign, InvalidN, LengthMismatch
from tauscreen.tau_core import (DesignVariates, ExpressionMatrix, build_design_structure,
                                kendall_tau, null_variance_closed_form, null_variance_distinct,
                                null_variance_distinct_exact, null_variance_general, screen_matrix,
                                sort_design, tau_scores)


def brute_counts(t):
    """N1 and N2 by looking at every pair of comparison-set elements."""
    S = [(i, j) for i, j in itertools.combinations(range(len(t)), 2) if t[i] < t[j]]
    n1 = n2 = 0
    for (a, b), (c, e) in itertools.combinations(S, 2):
        if a == c or b == e:
            n1 += 1
        if b == c or e == a:
            n2 += 1
    return len(S), n1, n2


def perm_variance(t):
    d = build_design_structure(t)
    vals = [kendall_tau(p, d)[1] for p in itertools.permutations(range(len(t)))]
    return Fraction(sum(Fraction(round(v * d.N)) ** 2 for v in vals), len(vals) * d.N ** 2)


class TestDesign:
    def test_distinct_three(self):
        d = build_design_structure((1, 2, 3))
        assert d.N == 3
        assert d.pair_set() == {(0, 1), (0, 2), (1, 2)}
        assert d.all_distinct

    def test_two_by_two(self):
        d = build_design_structure((1, 1, 2, 2))
        assert d.N == 4
        assert d.pair_set() == {(0, 2), (0, 3), (1, 2), (1, 3)}
        assert d.group_sizes == (2, 2)

    def test_all_equal_is_degenerate(self):
        with pytest.raises(DegenerateDesign):
            build_design_structure((5, 5, 5))

    def test_unsorted_rejected_and_sort_design(self):
        with pytest.raises(ValueError):
            DesignVariates((2.0, 1.0))
        dv, order = sort_design([3, 1, 2])
        assert dv.t == (1.0, 2.0, 3.0)
        assert order.tolist() == [1, 2, 0]

    def test_short_design(self):
        with pytest.raises(InvalidN):
            DesignVariates((1.0,))

    def test_pairs_read_only(self):
        d = build_design_structure((1, 2, 3))
        with pytest.raises(ValueError):
            d.pairs[0, 0] = 5

    @given(st.lists(st.integers(0, 3), min_size=2, max_size=8).filter(lambda v: len(set(v)) > 1))
    def test_counts_match_brute_force(self, raw):
        t = sorted(raw)
        d = build_design_structure(t)
        assert (d.N, d.N1, d.N2) == brute_counts(t)


class TestTau:
    def test_concordant(self):
        d = build_design_structure((1, 2, 3))
        assert kendall_tau([1, 2, 3], d) == (1.0, 1.0)
        assert kendall_tau([3, 2, 1], d) == (-1.0, -1.0)

    def test_tied_design(self):
        d = build_design_structure((1, 1, 2, 2))
        classical, rescaled = kendall_tau([1, 2, 3, 4], d)
        assert classical == pytest.approx(4 / 6)
        assert rescaled == 1.0

    def test_length_mismatch(self):
        d = build_design_structure((1, 2, 3))
        with pytest.raises(LengthMismatch):
            kendall_tau([1, 2], d)

    def test_identical_rows(self, rng):
        d = build_design_structure((1, 1, 2, 3, 3))
        row = rng.standard_normal(5)
        tv = tau_scores(np.vstack([row, row, row]), d)
        assert np.all(tv.scores == tv.scores[0])

    def test_value_ties_flagged(self):
        d = build_design_structure((1, 2, 3))
        tv = tau_scores(np.array([[1.0, 1.0, 2.0], [1.0, 2.0, 3.0]]), d)
        assert tv.has_ties.tolist() == [True, False]
        assert tv.scores.tolist() == [2, 3]

    @settings(max_examples=50)
    @given(st.lists(st.floats(-1e6, 1e6), min_size=6, max_size=6))
    def test_range_and_scaling(self, x):
        d = build_design_structure((1, 1, 2, 2, 3, 3))
        c, r = kendall_tau(x, d)
        assert -1 <= r <= 1
        assert c == pytest.approx(r * d.N / 15)

    @given(st.lists(st.floats(-100, 100), min_size=7, max_size=7))
    def test_antisymmetry(self, x):
        d = build_design_structure((1, 1, 2, 3, 3, 3, 4))
        c, r = kendall_tau(x, d)
        assert kendall_tau([-v for v in x], d) == (-c, -r) or (c == 0 and r == 0)

    @given(st.lists(st.integers(-500, 500), min_size=6, max_size=6, unique=True))
    def test_monotone_invariance(self, x):
        d = build_design_structure((1, 2, 2, 3, 4, 4))
        assert kendall_tau(np.exp(np.asarray(x) / 100) * 3 + 1, d) == kendall_tau(x, d)

    def test_screen_matches_rowwise_and_threads(self, rng):
        t = (1, 1, 1, 2, 2, 3, 3, 3)
        d = build_design_structure(t)
        x = rng.standard_normal((1000, 8))
        m = ExpressionMatrix(x, tuple(f"g{k}" for k in range(1000)), d.design)
        a = screen_matrix(m, d, threads=1, chunk=64)
        b = screen_matrix(m, d, threads=4, chunk=64)
        assert np.array_equal(a.scores, b.scores)
        assert a.rescaled[17] == pytest.approx(kendall_tau(x[17], d)[1])

    def test_from_unsorted(self):
        m = ExpressionMatrix.from_unsorted([[30, 10, 20]], [3, 1, 2])
        assert m.values.tolist() == [[10, 20, 30]]
        assert m.design.t == (1.0, 2.0, 3.0)

    def test_nonfinite_values(self):
        with pytest.raises(DataError):
            ExpressionMatrix(np.array([[1.0, np.nan]]), ("a",), DesignVariates((1.0, 2.0)))


class TestVariance:
    @pytest.mark.parametrize("n,expected", [(2, Fraction(1)), (3, Fraction(11, 27)), (4, Fraction(13, 54))])
    def test_distinct_values(self, n, expected):
        assert null_variance_distinct_exact(n) == expected
        assert perm_variance(tuple(range(n))) == expected

    def test_invalid_n(self):
        with pytest.raises(InvalidN):
            null_variance_distinct(1)

    @pytest.mark.parametrize("t", [(1, 2), (1, 2, 3), (1, 1, 2, 2), (1, 1, 1, 2), (1, 2, 2, 3, 3)])
    def test_closed_form_matches_enumeration(self, t):
        d = build_design_structure(t)
        assert null_variance_closed_form(d) == perm_variance(t)
        assert null_variance_general(d) == pytest.approx(float(perm_variance(t)), abs=1e-15)

    def test_general_reduces_to_distinct(self):
        for n in range(2, 9):
            d = build_design_structure(tuple(range(n)))
            assert null_variance_closed_form(d) == null_variance_distinct_exact(n)
            assert math.isclose(null_variance_distinct(n), 2 * (2 * n + 5) / (9 * n * (n - 1)))
