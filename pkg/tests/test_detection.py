
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from tauscreen.detection import (CriticalVector, MixtureRates, _first_passage,
                                 calibrate_critical_vector, count_process, detect, ecdf,
                                 ecdf_variance_diagnostic, fdr_approx, first_exceedance_probs,
                                 global_size, neighborhood_bounds, pfer_approx)
from tauscreen.errors import Infeasible
from tauscreen.null_dist import ThresholdGrid, threshold_grid


def grid_of(cutoffs, taus=None, N=100):
    cut = np.asarray(cutoffs, dtype=float)
    taus = np.linspace(0.01, 0.02, cut.size) if taus is None else np.asarray(taus)
    return ThresholdGrid(taus, np.round(cut * N).astype(np.int64), N, 0.1)


def brute_passage(drift, r, zmax=60):
    """First-exceedance probabilities and E(Z_J 1{B_j}) by summing over all increment paths."""
    J = len(drift)
    inc = np.diff(np.concatenate([[0.0], drift]))
    pmfs = [stats.poisson.pmf(np.arange(zmax), d) for d in inc]
    pB, eZ = np.zeros(J), np.zeros(J)
    total_mean = drift[-1]

    def walk(j, z, prob, alive):
        if j == J:
            return
        for k, q in enumerate(pmfs[j]):
            if q < 1e-16:
                continue
            z2 = z + k
            if alive and z2 > r[j]:
                pB[j] += prob * q
                eZ[j] += prob * q * (z2 + total_mean - drift[j])
            elif alive:
                walk(j + 1, z2, prob * q, True)

    walk(0, 0, 1.0, True)
    return pB, eZ


class TestCounts:
    def test_example(self):
        cp = count_process(np.array([0.9, 0.1, -0.5]), grid_of([0.8, 0.0]))
        assert cp.counts.tolist() == [1, 2]

    def test_extremes(self):
        g = grid_of([0.9, 0.5])
        assert count_process(np.full(5, -0.2), g).counts.tolist() == [0, 0]
        assert count_process(np.ones(5), g).counts.tolist() == [5, 5]

    def test_paths_nondecreasing(self, rng):
        g = grid_of([0.9, 0.6, 0.3, 0.0])
        cp = count_process(rng.uniform(-1, 1, 500), g)
        assert np.all(np.diff(cp.per_gene.astype(int), axis=1) >= 0)


class TestPassage:
    @pytest.mark.parametrize("drift,r", [([0.5], [1]), ([0.3, 1.0, 2.0], [0, 1, 3]),
                                         ([1.0, 1.5, 4.0], [2, 2, 5]), ([0.2, 0.2001], [0, 0])])
    def test_against_path_sums(self, drift, r):
        pB, eZ = _first_passage(np.asarray(drift), np.asarray(r))
        bB, bZ = brute_passage(drift, r)
        assert pB == pytest.approx(bB, abs=1e-10)
        assert eZ == pytest.approx(bZ, abs=1e-9)

    def test_single_point(self):
        assert global_size([0.5], [2]) == pytest.approx(stats.poisson.sf(2, 0.5))


class TestCalibration:
    def test_example(self):
        rv = calibrate_critical_vector(np.array([0.005]), 100, 0.05)
        assert rv.r == (2,)
        assert rv.achieved_alpha == pytest.approx(0.014388, abs=1e-6)
        assert global_size([0.5], [1]) == pytest.approx(0.090204, abs=1e-6)

    def test_zero_boundary(self):
        rv = calibrate_critical_vector(np.array([0.001]), 100, 0.2)
        assert rv.r == (0,)

    def test_infeasible(self):
        with pytest.raises(Infeasible):
            calibrate_critical_vector(np.array([0.99]), 2, 1e-6)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(1e-4, 0.02), min_size=1, max_size=4, unique=True),
           st.sampled_from([100, 500]), st.sampled_from([0.01, 0.05, 0.1]))
    def test_properties(self, taus, K, alpha):
        taus = np.sort(taus)
        rv = calibrate_critical_vector(taus, K, alpha)
        assert rv.achieved_alpha <= alpha
        assert all(a <= b for a, b in zip(rv.r, rv.r[1:]))
        # lexicographic minimality: lowering any coordinate (with later ones at K) breaks the size
        for j in range(rv.J):
            if rv.r[j] > (rv.r[j - 1] if j else 0):
                trial = list(rv.r[:j]) + [rv.r[j] - 1] + [K] * (rv.J - j - 1)
                assert global_size(K * taus, trial) > alpha


class TestDetect:
    def make(self, W, r, hits):
        g = grid_of([0.9, 0.5])
        per_gene = np.array(hits, dtype=bool)
        from tauscreen.detection import CountProcess
        cp = CountProcess(g, np.asarray(W), per_gene)
        return detect(cp, CriticalVector(tuple(r), 0.05, 0.05, (1.0, 2.0)))

    def test_accept(self):
        res = self.make([0, 1], [2, 3], [[0, 0], [0, 1]])
        assert not res.global_reject and res.R == 0

    def test_first_point(self):
        res = self.make([3, 3], [2, 3], [[1, 1], [1, 1], [1, 1], [0, 0]])
        assert res.global_reject and res.first_exceedance == 1
        assert res.detected.tolist() == [0, 1, 2]

    def test_second_point(self):
        res = self.make([2, 5], [2, 3], [[1, 1], [1, 1], [0, 1], [0, 1], [0, 1], [0, 0]])
        assert res.first_exceedance == 2 and res.R == 5


class TestApproximations:
    def test_all_null(self):
        taus = np.array([0.005])
        rates = MixtureRates(100, 0, taus, taus)
        rv = calibrate_critical_vector(taus, 100, 0.05)
        assert pfer_approx(rates, rv) == pytest.approx(0.5 * stats.poisson.sf(rv.r[0] - 1, 0.5))
        assert fdr_approx(rates, rv) == pytest.approx(rv.achieved_alpha)
        assert np.sum(first_exceedance_probs(rates, rv)) == pytest.approx(rv.achieved_alpha)

    def test_mixture_example(self):
        rates = MixtureRates(90, 10, [0.01], [0.5])
        assert rates.tau_star[0] == pytest.approx(0.059)
        rv = CriticalVector((2,), 0.0, 0.05, (1.0,))
        assert pfer_approx(rates, rv) == pytest.approx(0.9 * stats.poisson.sf(1, 5.9))
        assert fdr_approx(rates, rv) == pytest.approx(0.9 / 5.9 * stats.poisson.sf(2, 5.9))

    def test_no_signal_and_no_nulls(self):
        r = MixtureRates(50, 50, [0.01, 0.02], [0.01, 0.02])
        assert r.tau_star == pytest.approx([0.01, 0.02])
        rv = CriticalVector((1, 2), 0.0, 0.05, (1.0, 2.0))
        assert fdr_approx(MixtureRates(0, 100, [0.01, 0.02], [0.3, 0.4]), rv) == 0

    def test_multi_point_pfer_matches_single_when_degenerate(self):
        # a second grid point at the same tail adds nothing once r is maximal there
        rates1 = MixtureRates(90, 10, [0.01], [0.5])
        rates2 = MixtureRates(90, 10, [0.01, 0.01 + 1e-12], [0.5, 0.5 + 1e-12])
        a = pfer_approx(rates1, CriticalVector((2,), 0, 0.05, (1.0,)))
        b = pfer_approx(rates2, CriticalVector((2, 100), 0, 0.05, (1.0, 1.0)))
        assert a == pytest.approx(b, rel=1e-6)

    def test_warns_on_small_beta(self):
        with pytest.warns(RuntimeWarning):
            MixtureRates(10, 10, [0.1], [0.05])


class TestEcdf:
    def test_examples(self):
        assert ecdf([0.1, 0.2])(0.5) == 1
        assert ecdf(np.array([-0.5, 0.5]))(0.0) == 0.5

    def test_sup_distance(self, nd3):
        e = ecdf(nd3.mass_points)
        assert e.sup_distance(nd3) == pytest.approx(1 / 12)

    def test_diagnostic_flags(self, rng):
        indep = {K: rng.binomial(K, 0.3, 2000) / K for K in (100, 1000, 10_000)}
        diag = ecdf_variance_diagnostic(indep)
        assert diag.vanishing and diag.bounded
        assert diag.k_var[0] == pytest.approx(0.21, rel=0.1)
        # identical genes: G_K(t) is 0 or 1 whatever K is
        same = {K: rng.binomial(1, 0.3, 2000).astype(float) for K in (100, 1000, 10_000)}
        diag = ecdf_variance_diagnostic(same)
        assert not diag.vanishing and not diag.bounded

    def test_single_gene_bernoulli(self, rng):
        vals = rng.binomial(1, 0.3, 20_000).astype(float)
        assert np.var(vals) == pytest.approx(0.21, abs=0.01)


def test_neighborhood_bounds_pairs(rng, d444):
    x = rng.standard_normal((20, 12))
    x[1::2] = x[0::2]  # genes 2k and 2k+1 identical
    hoods = [{k ^ 1} for k in range(20)]
    g = threshold_grid(__import__("tauscreen").exact_null(d444), 0.1, max_j=40)
    out = neighborhood_bounds(x, d444, g, hoods, perms=50, seed=1)
    j = g.J - 1
    # identical partners: E(Y_i Y_{i^1}) = P(Y_i = 1), so b2 is about K * tau_j
    assert out[j]["b2"] == pytest.approx(20 * g.taus[j], abs=5 * out[j]["b2_se"] + 1e-9)
    assert out[j]["b1"] == pytest.approx(40 * g.taus[j] ** 2)
