"""Threshold-grid count processes and Poisson-calibrated detection.

For grid tails ``tau_1 < ... < tau_J`` each gene contributes a nondecreasing
0/1 path ``Y_k(tau_j) = 1{T_k >= cutoff_j}`` and ``W(tau_j)`` sums them. The
null law of ``W`` is approximated by a Poisson process with independent
increments and drift ``K tau_j``; every probability of the form
``P(W_1 <= r_1, ..., W_J <= r_J)`` is evaluated exactly under that process by
a forward pass over the counts.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse, special, stats

from .chen_stein import poisson_tail, tv_bound
from .errors import Infeasible
from .null_dist import NullDistribution, ThresholdGrid
from .tau_core import DesignStructure, TauVector, tau_scores


@dataclass(frozen=True)
class CountProcess:
    grid: ThresholdGrid
    counts: np.ndarray
    per_gene: np.ndarray = field(repr=False)  # K x J booleans

    @property
    def J(self) -> int:
        return self.counts.size


def count_process(taus: TauVector | np.ndarray, grid: ThresholdGrid) -> CountProcess:
    """Indicators ``T_k >= cutoff_j`` and their column sums.

    A :class:`TauVector` is compared on integer scores; a plain array of
    rescaled taus is compared with a small rounding tolerance.
    """
    if isinstance(taus, TauVector):
        if taus.N != grid.N:
            raise ValueError("tau vector and grid come from different designs")
        Y = taus.scores[:, None] >= grid.cutoff_scores[None, :]
    else:
        t = np.asarray(taus, dtype=float)
        Y = t[:, None] >= grid.cutoffs[None, :] - 1e-12
    W = Y.sum(axis=0)
    return CountProcess(grid, W, Y)


def _first_passage(drift: np.ndarray, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """For a Poisson process Z with cumulative drift ``drift`` and bounds ``r``:

    returns ``P(B_j)`` and ``E(Z_J 1{B_j})`` where B_j is the event that
    ``Z_j > r_j`` for the first time at grid point j.
    """
    J = drift.size
    nu_J = float(drift[-1])
    pB = np.zeros(J)
    eZB = np.zeros(J)
    # mass of Z_{j} = z with no exceedance so far, z = 0..r_j
    state = np.array([1.0])
    prev = 0.0
    for j in range(J):
        delta = float(drift[j]) - prev
        prev = float(drift[j])
        rj = int(r[j])
        ys = np.arange(state.size)
        # exceedance at j from each surviving level y: increment D > r_j - y
        k = rj - ys
        if delta > 0:
            tail = special.gammainc(k + 1, delta)
            tmean = delta * np.where(k == 0, 1.0, special.gammainc(np.maximum(k, 1), delta))
        else:
            tail = np.zeros(k.size)
            tmean = np.zeros(k.size)
        pB[j] = float(np.dot(state, tail))
        # E(Z_j 1{Z_j > r_j}) = y P(D > r_j - y) + E(D 1{D > r_j - y})
        ez = float(np.dot(state, ys * tail + tmean))
        eZB[j] = ez + (nu_J - prev) * pB[j]
        if j + 1 < J:
            inc = stats.poisson.pmf(np.arange(rj + 1), delta)
            state = np.convolve(state, inc)[: rj + 1]
    return pB, eZB


def global_size(drift, r) -> float:
    """P(Z_j > r_j for some j) under the Poisson process with the given drift."""
    pB, _ = _first_passage(np.asarray(drift, dtype=float), np.asarray(r, dtype=np.int64))
    return float(np.sum(pB))


@dataclass(frozen=True)
class CriticalVector:
    r: tuple[int, ...]
    achieved_alpha: float
    alpha: float
    drift: tuple[float, ...]

    @property
    def J(self) -> int:
        return len(self.r)

    def to_dict(self) -> dict:
        return {"r": list(self.r), "achieved_alpha": self.achieved_alpha, "alpha": self.alpha,
                "drift": list(self.drift)}


def calibrate_critical_vector(grid: ThresholdGrid | np.ndarray, K: int, alpha: float) -> CriticalVector:
    """Lexicographically smallest nondecreasing ``r`` with approximate null size <= alpha.

    Coordinates are fixed in order j = 1..J: each ``r_j`` is the least value
    that still admits a feasible completion, the completion being
    ``r_{j'} = K`` for later points (larger bounds only lower the size).
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    taus = grid.taus if isinstance(grid, ThresholdGrid) else np.asarray(grid, dtype=float)
    drift = K * np.asarray(taus, dtype=float)
    J = drift.size
    r = np.full(J, K, dtype=np.int64)
    if global_size(drift, r) > alpha:
        raise Infeasible(f"even r_j = K = {K} everywhere gives size {global_size(drift, r):.4g} > {alpha}")
    lower = 0
    for j in range(J):
        lo, hi = lower, K  # hi is feasible
        while lo < hi:
            mid = (lo + hi) // 2
            r[j] = mid
            if global_size(drift, r) <= alpha:
                hi = mid
            else:
                lo = mid + 1
        r[j] = lo
        lower = lo
    return CriticalVector(tuple(int(v) for v in r), global_size(drift, r), alpha,
                          tuple(float(v) for v in drift))


@dataclass(frozen=True)
class DetectionResult:
    global_reject: bool
    detected: np.ndarray
    first_exceedance: int | None  # 1-based grid index of the triggering B_j
    W: np.ndarray
    r: tuple[int, ...]

    @property
    def R(self) -> int:
        return int(self.detected.size)


def detect(cp: CountProcess, rv: CriticalVector) -> DetectionResult:
    if cp.J != rv.J:
        raise ValueError(f"count process has J={cp.J}, critical vector J={rv.J}")
    over = np.flatnonzero(cp.counts > np.asarray(rv.r))
    if over.size == 0:
        return DetectionResult(False, np.empty(0, dtype=np.intp), None, cp.counts, rv.r)
    # rows are nondecreasing in j, so the last column is "hit at some j <= J"
    detected = np.flatnonzero(cp.per_gene[:, -1])
    return DetectionResult(True, detected, int(over[0]) + 1, cp.counts, rv.r)


@dataclass(frozen=True)
class MixtureRates:
    K0: int
    K1: int
    taus: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        taus = np.atleast_1d(np.asarray(self.taus, dtype=float))
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float))
        if taus.shape != beta.shape:
            raise ValueError("need one beta per grid tail")
        if np.any(beta < taus):
            warnings.warn("some non-null tail rates fall below the null tails", RuntimeWarning)
        object.__setattr__(self, "taus", taus)
        object.__setattr__(self, "beta", beta)

    @property
    def K(self) -> int:
        return self.K0 + self.K1

    @property
    def tau_star(self) -> np.ndarray:
        return self.taus + (self.K1 / self.K) * (self.beta - self.taus)

    @property
    def null_share(self) -> np.ndarray:
        """K0 tau_j / (K0 tau_j + K1 beta_j): binomial success rate of a false rejection."""
        num = self.K0 * self.taus
        den = num + self.K1 * self.beta
        return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def pfer_approx(rates: MixtureRates, rv: CriticalVector, K: int | None = None) -> float:
    """Approximate E(m1) for the detection rule under a null/non-null mixture."""
    K = rates.K if K is None else K
    r = np.asarray(rv.r)
    if r.size == 1:
        return float(rates.K0 * rates.taus[0] * poisson_tail(K * rates.tau_star[0], int(r[0]) - 1))
    _, eZB = _first_passage(K * rates.tau_star, r)
    return float(np.sum(rates.null_share * eZB))


def fdr_approx(rates: MixtureRates, rv: CriticalVector, K: int | None = None) -> float:
    """Approximate E(Q): sum over first-exceedance events of P(B_j) times the null share."""
    K = rates.K if K is None else K
    pB, _ = _first_passage(K * rates.tau_star, np.asarray(rv.r))
    return float(np.sum(rates.null_share * pB))


def first_exceedance_probs(rates: MixtureRates, rv: CriticalVector, K: int | None = None) -> np.ndarray:
    K = rates.K if K is None else K
    return _first_passage(K * rates.tau_star, np.asarray(rv.r))[0]


def detection_report(result: DetectionResult, grid: ThresholdGrid, rv: CriticalVector,
                     gene_ids=None, rates: MixtureRates | None = None) -> dict:
    ids = [int(k) for k in result.detected] if gene_ids is None else [gene_ids[k] for k in result.detected]
    out = {
        "global_reject": result.global_reject,
        "first_exceedance": result.first_exceedance,
        "r": list(rv.r),
        "achieved_alpha": rv.achieved_alpha,
        "detected_gene_ids": ids,
        "W": [int(w) for w in result.W],
        "grid": {"tau": [float(t) for t in grid.taus], "cutoffs": [float(c) for c in grid.cutoffs]},
    }
    if rates is not None:
        out["approximations"] = {"pfer": pfer_approx(rates, rv), "fdr": fdr_approx(rates, rv)}
    return out


@dataclass(frozen=True)
class Ecdf:
    """Right-continuous empirical distribution of the rescaled taus."""

    values: np.ndarray

    def __call__(self, t) -> np.ndarray:
        return np.searchsorted(self.values, np.asarray(t, dtype=float) + 1e-12, side="right") / self.values.size

    def sup_distance(self, nd: NullDistribution) -> float:
        pts = np.union1d(nd.mass_points, self.values)
        return float(np.max(np.abs(self(pts) - nd.cdf(pts))))


def ecdf(taus: TauVector | np.ndarray) -> Ecdf:
    r = taus.rescaled if isinstance(taus, TauVector) else np.asarray(taus, dtype=float)
    if r.size < 1:
        raise ValueError("need at least one tau")
    return Ecdf(np.sort(r))


@dataclass(frozen=True)
class EcdfDiagnostic:
    Ks: tuple[int, ...]
    var: tuple[float, ...]
    k_var: tuple[float, ...]
    vanishing: bool  # Var(G_K(t)) shrinks as K grows
    bounded: bool  # K Var(G_K(t)) does not blow up

    def to_dict(self) -> dict:
        return {"K": list(self.Ks), "var": list(self.var), "K_var": list(self.k_var),
                "vanishing": self.vanishing, "bounded": self.bounded}


def ecdf_variance_diagnostic(values_by_K: dict) -> EcdfDiagnostic:
    """Replicate variance of G_K(t) per K and the K-scaled trajectory.

    ``values_by_K`` maps K to replicate values of G_K(t) at one fixed t.
    ``vanishing`` asks that the variance at the largest K be below half its
    value at the smallest; ``bounded`` that K Var grows by less than a
    factor 2 across the range.
    """
    Ks = tuple(sorted(values_by_K))
    if len(Ks) < 2:
        raise ValueError("need at least two values of K")
    var = []
    for K in Ks:
        v = np.asarray(values_by_K[K], dtype=float)
        if v.size < 2:
            raise ValueError("need at least two replicates per K")
        var.append(float(np.var(v, ddof=1)))
    k_var = tuple(K * v for K, v in zip(Ks, var))
    vanishing = var[-1] < 0.5 * var[0] if var[0] > 0 else True
    bounded = k_var[-1] <= 2 * k_var[0] if k_var[0] > 0 else k_var[-1] == 0
    return EcdfDiagnostic(Ks, tuple(var), k_var, bool(vanishing), bool(bounded))


def neighborhood_bounds(values: np.ndarray, d: DesignStructure, grid: ThresholdGrid,
                        neighborhoods, perms: int = 200, seed: int = 0) -> list[dict]:
    """Chen-Stein terms for each grid point of an observed matrix.

    Every gene is taken at its null tail ``tau_j``, so b1 is
    ``tau_j^2 sum_i |J_i|``. b2 sums E(Y_i Y_k) over neighbour pairs and is
    estimated by applying one random column permutation to all genes at
    once, which keeps the between-gene dependence while enforcing the null.
    b3 is taken as zero, i.e. the neighbourhoods are assumed to capture all
    dependence. ``b2_se`` is the Monte Carlo standard error of the b2 estimate.
    """
    values = np.asarray(values, dtype=float)
    K = values.shape[0]
    if len(neighborhoods) != K:
        raise ValueError(f"{len(neighborhoods)} neighbourhoods for {K} genes")
    if perms < 2:
        raise ValueError("need at least two permutations")
    rows, cols = [], []
    for i, h in enumerate(neighborhoods):
        for k in h:
            if k != i:
                rows.append(i)
                cols.append(int(k))
    A = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(K, K))
    sizes = np.array([len(set(h) | {i}) for i, h in enumerate(neighborhoods)], dtype=float)
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0x6e62,)))
    draws = np.empty((perms, grid.J))
    for b in range(perms):
        x = values[:, rng.permutation(values.shape[1])]
        Y = (tau_scores(x, d).scores[:, None] >= grid.cutoff_scores[None, :]).astype(float)
        draws[b] = np.einsum("kj,kj->j", Y, A @ Y)
    out = []
    for j, tau in enumerate(grid.taus):
        lam = K * float(tau)
        b1 = float(tau) ** 2 * float(sizes.sum())
        b2 = float(draws[:, j].mean())
        out.append({"lambda": lam, "b1": b1, "b2": b2,
                    "b2_se": float(draws[:, j].std(ddof=1) / np.sqrt(perms)), "b3": 0.0,
                    "tv_bound": tv_bound(b1, b2, 0.0, lam)})
    return out
