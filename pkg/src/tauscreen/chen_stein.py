"""Chen-Stein Poisson approximation for sums of dependent indicators.

Distances here use the total-variation *norm* ``sum_k |P(W=k) - P(Z=k)|``
(twice the sup-over-sets distance), the scale on which
``2 (b1 + b2 + b3) (1 - exp(-lam)) / lam`` is a bound.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import special, stats

from .errors import MissingPairMean, ParseError


@dataclass(frozen=True)
class IndicatorModel:
    """Occurrence probabilities, dependence neighbourhoods and the moments b2/b3 need.

    ``neighborhoods[i]`` is J_i (0-based, always containing ``i``). ``pair_means``
    maps ordered or unordered pairs ``(i, j)`` to E(Y_i Y_j), or is a callable.
    ``b3_terms[i]`` is E|E(Y_i - p_i | Y_j, j outside J_i)|; zero when Y_i is
    independent of everything outside its neighbourhood.
    """

    p: np.ndarray
    neighborhoods: tuple[frozenset, ...]
    pair_means: Mapping | Callable | None = field(default=None, repr=False)
    b3_terms: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if np.any((p < 0) | (p > 1)):
            raise ValueError("occurrence probabilities must lie in [0, 1]")
        hoods = tuple(frozenset(int(j) for j in h) | {i} for i, h in enumerate(self.neighborhoods))
        if len(hoods) != p.size:
            raise ValueError(f"{len(hoods)} neighbourhoods for {p.size} indicators")
        for h in hoods:
            if any(j < 0 or j >= p.size for j in h):
                raise ValueError("neighbourhood index out of range")
        b3 = np.zeros(p.size) if self.b3_terms is None else np.asarray(self.b3_terms, dtype=float)
        if b3.shape != p.shape or np.any(b3 < 0):
            raise ValueError("b3_terms must be nonnegative, one per indicator")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "neighborhoods", hoods)
        object.__setattr__(self, "b3_terms", b3)
        if isinstance(self.pair_means, Mapping):
            for (i, j), v in self.pair_means.items():
                lo = max(0.0, p[i] + p[j] - 1) - 1e-12
                hi = min(p[i], p[j]) + 1e-12
                if not lo <= v <= hi:
                    raise ValueError(f"E(Y_{i} Y_{j}) = {v} outside the Frechet range [{lo:.3g}, {hi:.3g}]")

    @classmethod
    def independent(cls, p) -> "IndicatorModel":
        p = np.asarray(p, dtype=float)
        return cls(p, tuple(frozenset({i}) for i in range(p.size)))

    @property
    def K(self) -> int:
        return self.p.size

    @property
    def lam(self) -> float:
        return math.fsum(self.p)

    def pair_mean(self, i: int, j: int) -> float:
        pm = self.pair_means
        if callable(pm):
            return float(pm(i, j))
        if pm is not None:
            if (i, j) in pm:
                return float(pm[(i, j)])
            if (j, i) in pm:
                return float(pm[(j, i)])
        raise MissingPairMean((i, j))


def compute_b1(m: IndicatorModel) -> float:
    return math.fsum(m.p[i] * m.p[j] for i, h in enumerate(m.neighborhoods) for j in h)


def compute_b2(m: IndicatorModel) -> float:
    return math.fsum(m.pair_mean(i, j) for i, h in enumerate(m.neighborhoods) for j in h if j != i)


def compute_b3(m: IndicatorModel) -> float:
    return math.fsum(m.b3_terms)


def tv_bound(b1: float, b2: float, b3: float, lam: float) -> float:
    """2 (b1+b2+b3) (1 - e^-lam)/lam, with the lam -> 0 limit 2 (b1+b2+b3)."""
    total = b1 + b2 + b3
    factor = -math.expm1(-lam) / lam if lam > 0 else 1.0
    bound = 2 * total * factor
    assert bound <= 2 * total * min(1.0, 1.0 / lam if lam > 0 else 1.0) * (1 + 1e-12) + 1e-300
    return bound


@dataclass(frozen=True)
class ChenSteinBound:
    lam: float
    b1: float
    b2: float
    b3: float
    tv_bound: float

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "b1": self.b1, "b2": self.b2, "b3": self.b3,
                "tv_bound": self.tv_bound}


def chen_stein_bound(m: IndicatorModel) -> ChenSteinBound:
    b1, b2, b3 = compute_b1(m), compute_b2(m), compute_b3(m)
    lam = m.lam
    return ChenSteinBound(lam, b1, b2, b3, tv_bound(b1, b2, b3, lam))


def void_probability_bound(lam: float, b1: float, b2: float, b3: float) -> tuple[float, float]:
    """Interval for P(W = 0) around e^-lam of half-width 2 (b1+b2+b3) min(1, 1/lam)."""
    centre = math.exp(-lam)
    half = 2 * (b1 + b2 + b3) * (min(1.0, 1.0 / lam) if lam > 0 else 1.0)
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass(frozen=True)
class PoissonProcessApprox:
    """Per-grid-point dependence bounds for a nondecreasing indicator process."""

    grid: np.ndarray
    drift: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    b3: np.ndarray

    def __post_init__(self):
        arrs = [np.atleast_1d(np.asarray(a, dtype=float)) for a in
                (self.grid, self.drift, self.b1, self.b2, self.b3)]
        M = arrs[0].size
        if M < 1 or any(a.size != M for a in arrs):
            raise ValueError("grid, drift and bounds need one entry per grid point")
        if np.any(np.diff(arrs[0]) <= 0):
            raise ValueError("grid points must be strictly increasing")
        if np.any(np.diff(arrs[1]) < 0):
            raise ValueError("drift must be nondecreasing along the grid")
        if np.any(arrs[1] <= 0):
            raise ValueError("drift must be positive at every grid point")
        for name, a in zip(("grid", "drift", "b1", "b2", "b3"), arrs):
            object.__setattr__(self, name, a)

    @classmethod
    def from_increments(cls, grid, masses, b1, b2, b3) -> "PoissonProcessApprox":
        return cls(grid, np.cumsum(masses), b1, b2, b3)


def process_bound(pp: PoissonProcessApprox) -> float:
    """max_j (b1+b2+b3)(tau_j) (1 - e^-nu_j) / nu_j; the process TV bound is twice this."""
    total = pp.b1 + pp.b2 + pp.b3
    return float(np.max(total * -np.expm1(-pp.drift) / pp.drift))


def poisson_tail(lam: float, r: int) -> float:
    """P(Poisson(lam) > r) via the regularised lower incomplete gamma function."""
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if r < 0:
        return 1.0
    if lam == 0:
        return 0.0
    return float(special.gammainc(r + 1, lam))


def poisson_truncated_mean(lam: float, r: int) -> float:
    """E(X 1{X > r}) for X ~ Poisson(lam), i.e. lam * P(X >= r)."""
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    if lam == 0:
        return 0.0
    return lam * poisson_tail(lam, r - 1)


def poisson_pmf(lam: float, kmax: int) -> np.ndarray:
    return stats.poisson.pmf(np.arange(kmax + 1), lam)


def tv_to_poisson(counts: np.ndarray, lam: float) -> float:
    """Total-variation norm between the empirical law of integer ``counts`` and Poisson(lam)."""
    counts = np.asarray(counts, dtype=np.int64)
    emp = np.bincount(counts) / counts.size
    pmf = poisson_pmf(lam, emp.size - 1)
    return float(np.abs(emp - pmf).sum() + stats.poisson.sf(emp.size - 1, lam))


def tv_noise_floor(lam: float, reps: int) -> float:
    """Expected empirical TV norm when the sample really is Poisson(lam)."""
    kmax = int(stats.poisson.ppf(1 - 1e-12, lam)) + 1
    pk = poisson_pmf(lam, kmax)
    return float(np.sum(np.sqrt(2 * pk * (1 - pk) / (math.pi * reps))))


def simulate_independent_sums(p, draws: int, rng: np.random.Generator, block: int = 20_000) -> np.ndarray:
    """Draws of W = sum of independent Bernoulli(p_i) indicators, simulated indicator by indicator."""
    p = np.asarray(p, dtype=float)
    out = np.empty(draws, dtype=np.int64)
    for lo in range(0, draws, block):
        hi = min(lo + block, draws)
        out[lo:hi] = (rng.random((hi - lo, p.size)) < p).sum(axis=1)
    return out


def b3_from_joint(pmf: Mapping[tuple[int, ...], float], neighborhoods: Sequence) -> np.ndarray:
    """Per-index b3 terms from a full joint pmf over {0,1}^K (small K only)."""
    outcomes = list(pmf)
    K = len(outcomes[0])
    probs = np.array([pmf[o] for o in outcomes], dtype=float)
    Y = np.array(outcomes, dtype=float)
    p = probs @ Y
    terms = np.zeros(K)
    for i in range(K):
        out = sorted(set(range(K)) - set(neighborhoods[i]) - {i})
        groups: dict[tuple, list[int]] = {}
        for row, o in enumerate(outcomes):
            groups.setdefault(tuple(o[j] for j in out), []).append(row)
        acc = 0.0
        for rows in groups.values():
            w = probs[rows].sum()
            if w > 0:
                cond = probs[rows] @ Y[rows, i] / w
                acc += w * abs(cond - p[i])
        terms[i] = acc
    return terms


def b3_empirical(samples: np.ndarray, neighborhoods: Sequence) -> np.ndarray:
    """Plug-in b3 terms from simulated indicator vectors (rows = draws); small K only."""
    samples = np.asarray(samples, dtype=np.int8)
    n, K = samples.shape
    p = samples.mean(axis=0)
    terms = np.zeros(K)
    for i in range(K):
        out = sorted(set(range(K)) - set(neighborhoods[i]) - {i})
        if not out:
            continue
        _, inv, cnt = np.unique(samples[:, out], axis=0, return_inverse=True, return_counts=True)
        inv = inv.ravel()
        sums = np.bincount(inv, weights=samples[:, i])
        terms[i] = float(np.sum(cnt / n * np.abs(sums / cnt - p[i])))
    return terms


def estimate_pair_means(samples: np.ndarray, neighborhoods: Sequence) -> dict:
    samples = np.asarray(samples, dtype=float)
    out = {}
    for i, h in enumerate(neighborhoods):
        for j in h:
            if j != i and (j, i) not in out:
                out[(i, j)] = float(np.mean(samples[:, i] * samples[:, j]))
    return out


def read_neighborhoods(path: str | os.PathLike, K: int) -> tuple[frozenset, ...]:
    """Parse ``i: j1 j2 ...`` lines (1-based); indices without a line get J_i = {i}."""
    hoods = [{i} for i in range(K)]
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            head, sep, rest = line.partition(":")
            if not sep:
                raise ParseError("expected 'i: j1 j2 ...'", lineno)
            try:
                i = int(head) - 1
                js = [int(tok) - 1 for tok in rest.split()]
            except ValueError:
                raise ParseError("non-integer index", lineno) from None
            for idx in [i, *js]:
                if not 0 <= idx < K:
                    raise ParseError(f"index {idx + 1} outside 1..{K}", lineno)
            hoods[i].update(js)
    return tuple(frozenset(h) for h in hoods)


def write_neighborhoods(path: str | os.PathLike, neighborhoods: Sequence) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, h in enumerate(neighborhoods):
            others = sorted(j for j in h if j != i)
            if others:
                fh.write(f"{i + 1}: {' '.join(str(j + 1) for j in others)}\n")
