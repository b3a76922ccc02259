"""Discrete permutation null of the rescaled tau.

Under H0 the statistic depends only on how the design levels are arranged
along the value ranks of a gene, so the law is computed once per design:
either by exact enumeration of the distinct level arrangements (each equally
likely) or by Monte Carlo over random permutations. Mass points are kept as
integer scores ``s`` (tau = s / N) so tail lookups are exact.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator

import numpy as np
from scipy import stats

from .errors import EmptyGrid, TooLarge
from .tau_core import DesignStructure, DesignVariates, build_design_structure

DEFAULT_BUDGET = math.factorial(8)
DEFAULT_MC_REPS = 200_000
_BLOCK = 50_000


def arrangement_count(d: DesignStructure) -> int:
    """Number of distinct assignments of design levels to value ranks: n!/prod(m_g!)."""
    count = math.factorial(d.n)
    for m in d.group_sizes:
        count //= math.factorial(m)
    return count


def _arrangements(sizes: tuple[int, ...]) -> np.ndarray:
    """All distinct level sequences with ``sizes[g]`` copies of level ``g``."""
    n = sum(sizes)
    rows = [np.full(n, -1, dtype=np.int8)]
    for g, m in enumerate(sizes):
        nxt = []
        for row in rows:
            free = np.flatnonzero(row < 0)
            for pos in itertools.combinations(free, m):
                r = row.copy()
                r[list(pos)] = g
                nxt.append(r)
        rows = nxt
    return np.array(rows, dtype=np.int8)


def _label_scores(labels: np.ndarray) -> np.ndarray:
    """Score of each level sequence: sum over value ranks a<b of sign(L_b - L_a)."""
    n = labels.shape[1]
    a, b = np.triu_indices(n, k=1)
    out = np.empty(labels.shape[0], dtype=np.int64)
    step = max(1, 2_000_000 // max(1, a.size))
    for lo in range(0, labels.shape[0], step):
        blk = labels[lo:lo + step].astype(np.int16)
        out[lo:lo + step] = np.sign(blk[:, b] - blk[:, a]).sum(axis=1)
    return out


@dataclass(frozen=True)
class NullDistribution:
    scores: np.ndarray  # increasing integer scores; mass points are scores / N
    probs: np.ndarray
    n: int
    N: int
    method: str  # "exact" or "mc"
    exact_probs: tuple[Fraction, ...] | None = field(default=None, repr=False)
    arrangements: int | None = None
    reps: int | None = None
    seed: int | None = None
    design: tuple[float, ...] | None = field(default=None, repr=False)

    @property
    def is_exact(self) -> bool:
        return self.exact_probs is not None

    @property
    def L(self) -> int:
        return self.scores.size

    @property
    def mass_points(self) -> np.ndarray:
        return self.scores / self.N

    def mass_points_exact(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(int(s), self.N) for s in self.scores)

    def upper_tails(self) -> np.ndarray:
        """``P(T >= a_l)`` for each mass point, summed from the top."""
        if self.is_exact:
            return np.array([float(f) for f in self.upper_tails_exact()])
        return np.cumsum(self.probs[::-1])[::-1]

    def upper_tails_exact(self) -> tuple[Fraction, ...]:
        if not self.is_exact:
            raise ValueError("exact tails need an enumerated null")
        acc, out = Fraction(0), []
        for p in reversed(self.exact_probs):
            acc += p
            out.append(acc)
        return tuple(reversed(out))

    def mean(self) -> float:
        return float(np.dot(self.mass_points, self.probs))

    def variance(self) -> float:
        if self.is_exact:
            return float(self.variance_exact())
        m = self.mass_points
        mu = np.dot(m, self.probs)
        return float(np.dot((m - mu) ** 2, self.probs))

    def variance_exact(self) -> Fraction:
        pts = self.mass_points_exact()
        mu = sum(a * p for a, p in zip(pts, self.exact_probs))
        return sum((a - mu) ** 2 * p for a, p in zip(pts, self.exact_probs))

    def cdf(self, t) -> np.ndarray:
        """``P(T <= t)`` evaluated at the given points."""
        cum = np.cumsum(self.probs)
        idx = np.searchsorted(self.mass_points, np.asarray(t, dtype=float) + 1e-12, side="right")
        return np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "n": self.n,
            "N": self.N,
            "design": list(self.design) if self.design is not None else None,
            "L": self.L,
            "arrangements": self.arrangements,
            "reps": self.reps,
            "seed": self.seed,
            "scores": [int(s) for s in self.scores],
        }
        if self.is_exact:
            out["mass_points"] = [str(f) for f in self.mass_points_exact()]
            out["probs"] = [str(p) for p in self.exact_probs]
        else:
            out["mass_points"] = [float(a) for a in self.mass_points]
            out["probs"] = [float(p) for p in self.probs]
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, obj: dict) -> "NullDistribution":
        N = int(obj["N"])
        if "scores" in obj:
            scores = np.asarray(obj["scores"], dtype=np.int64)
        else:
            scores = np.array([round(float(Fraction(str(a))) * N) for a in obj["mass_points"]], dtype=np.int64)
        if obj["method"] == "exact":
            exact = tuple(Fraction(str(p)) for p in obj["probs"])
            probs = np.array([float(p) for p in exact])
        else:
            exact = None
            probs = np.asarray(obj["probs"], dtype=float)
        design = obj.get("design")
        return cls(scores, probs, int(obj["n"]), N, obj["method"], exact,
                   obj.get("arrangements"), obj.get("reps"), obj.get("seed"),
                   tuple(design) if design is not None else None)

    @classmethod
    def from_json(cls, text: str) -> "NullDistribution":
        return cls.from_dict(json.loads(text))


def _design_of(d) -> DesignStructure:
    if isinstance(d, DesignStructure):
        return d
    return build_design_structure(d if isinstance(d, DesignVariates) else DesignVariates(tuple(d)))


def exact_null(d, budget: int = DEFAULT_BUDGET, reduce: bool = True) -> NullDistribution:
    """Enumerate the permutation law of the rescaled tau.

    With ``reduce`` the unit of enumeration is a distinct arrangement of design
    levels over value ranks (n!/prod(m_g!) of them, equally likely); without
    it all n! rank permutations are enumerated. Both give the same law because
    equal design values contribute no pairs.
    """
    d = _design_of(d)
    total = arrangement_count(d) if reduce else math.factorial(d.n)
    if total > budget:
        raise TooLarge(
            f"exact enumeration needs {total:,} arrangements (budget {budget:,}); use mc_null"
        )
    if reduce:
        labels = _arrangements(d.group_sizes)
    else:
        perms = np.array(list(itertools.permutations(range(d.n))), dtype=np.intp)
        labels = np.asarray(d.levels, dtype=np.int8)[perms]
    scores = _label_scores(labels)
    vals, counts = np.unique(scores, return_counts=True)
    exact = tuple(Fraction(int(c), total) for c in counts)
    return NullDistribution(
        scores=vals,
        probs=counts / total,
        n=d.n,
        N=d.N,
        method="exact",
        exact_probs=exact,
        arrangements=arrangement_count(d),
        design=d.t,
    )


def mc_null(d, reps: int = DEFAULT_MC_REPS, seed: int = 0) -> NullDistribution:
    """Monte Carlo permutation law; blocks use spawned seeds so results are reproducible."""
    d = _design_of(d)
    if reps < 1000:
        raise ValueError(f"mc_null needs reps >= 1000, got {reps}")
    base = np.asarray(d.levels, dtype=np.int8)
    nblocks = -(-reps // _BLOCK)
    children = np.random.SeedSequence(seed).spawn(nblocks)
    chunks = []
    for b, child in enumerate(children):
        size = min(_BLOCK, reps - b * _BLOCK)
        rng = np.random.default_rng(child)
        labels = rng.permuted(np.broadcast_to(base, (size, d.n)), axis=1)
        chunks.append(_label_scores(labels))
    scores = np.concatenate(chunks)
    vals, counts = np.unique(scores, return_counts=True)
    return NullDistribution(
        scores=vals,
        probs=counts / reps,
        n=d.n,
        N=d.N,
        method="mc",
        arrangements=arrangement_count(d),
        reps=reps,
        seed=seed,
        design=d.t,
    )


def null_for(d, method: str = "exact", reps: int = DEFAULT_MC_REPS, seed: int | None = None,
             budget: int = DEFAULT_BUDGET) -> NullDistribution:
    if method == "exact":
        return exact_null(d, budget=budget)
    if method == "mc":
        if seed is None:
            raise ValueError("Monte Carlo null requires a seed")
        return mc_null(d, reps=reps, seed=seed)
    raise ValueError(f"unknown null method {method!r}")


def kolmogorov_distance(a: NullDistribution, b: NullDistribution) -> float:
    pts = np.union1d(a.mass_points, b.mass_points)
    return float(np.max(np.abs(a.cdf(pts) - b.cdf(pts))))


def _score_index(nd: NullDistribution, tau) -> np.ndarray:
    # position of the first mass point >= tau, tolerant of float rounding in tau
    s = np.asarray(tau, dtype=float) * nd.N
    return np.searchsorted(nd.scores, s - 1e-9, side="left")


def right_p_value(tau: float, nd: NullDistribution):
    """``P0(T >= tau)``; a :class:`~fractions.Fraction` when the null is exact."""
    idx = int(_score_index(nd, tau))
    if nd.is_exact:
        return sum(nd.exact_probs[idx:], Fraction(0))
    return float(np.sum(nd.probs[idx:]))


def right_p_values(taus, nd: NullDistribution) -> np.ndarray:
    tails = np.append(nd.upper_tails(), 0.0)
    return tails[_score_index(nd, taus)]


def randomized_p_values(taus, nd: NullDistribution, rng: np.random.Generator) -> np.ndarray:
    """``P(T > tau) + U * P(T = tau)``; exactly uniform under the null."""
    idx = _score_index(nd, taus)
    tails = np.append(nd.upper_tails(), 0.0)
    at = np.append(nd.probs, 0.0)
    u = rng.random(np.shape(idx))
    return tails[idx + 1] + u * at[idx]


def normal_approx_p_value(tau, nu2: float) -> np.ndarray:
    """Diagnostic only: upper tail of tau/nu against the standard normal."""
    return stats.norm.sf(np.asarray(tau, dtype=float) / math.sqrt(nu2))


@dataclass(frozen=True)
class ThresholdGrid:
    taus: np.ndarray  # tau_1 < ... < tau_J, upper-tail probabilities
    cutoff_scores: np.ndarray
    N: int
    eta: float
    exact_taus: tuple[Fraction, ...] | None = field(default=None, repr=False)

    @property
    def J(self) -> int:
        return self.taus.size

    @property
    def cutoffs(self) -> np.ndarray:
        return self.cutoff_scores / self.N

    def truncate(self, J: int) -> "ThresholdGrid":
        if J < 1:
            raise EmptyGrid("grid must keep at least one point")
        return ThresholdGrid(self.taus[:J], self.cutoff_scores[:J], self.N, self.eta,
                             None if self.exact_taus is None else self.exact_taus[:J])

    def to_dict(self) -> dict:
        return {"tau": [float(t) for t in self.taus], "cutoffs": [float(c) for c in self.cutoffs],
                "eta": self.eta, "J": self.J}


def threshold_grid(nd: NullDistribution, eta: float = 0.1, max_j: int | None = None) -> ThresholdGrid:
    """Upper-tail grid at the largest mass points, keeping every tail <= eta."""
    if not 0 < eta < 1:
        raise ValueError(f"eta must lie in (0, 1), got {eta}")
    tails = nd.upper_tails()[::-1]  # j = 1 is the largest mass point
    scores = nd.scores[::-1]
    J = int(np.sum(tails <= eta))
    if J == 0:
        raise EmptyGrid(f"smallest attainable tail {tails[0]:.6g} exceeds eta={eta}")
    if max_j is not None:
        J = min(J, int(max_j))
    exact = None
    if nd.is_exact:
        exact = tuple(reversed(nd.upper_tails_exact()))[:J]
    return ThresholdGrid(tails[:J].copy(), scores[:J].copy(), nd.N, eta, exact)


@dataclass(frozen=True)
class RandomizedDecision:
    decision: str  # "reject" | "reject_with_prob" | "accept"
    critical: float
    gamma: float

    def conservative(self) -> bool:
        return self.decision == "reject"


def randomized_critical(nd: NullDistribution, alpha: float) -> tuple[int, float]:
    """Critical score ``c`` and weight ``gamma`` with P(T > c) + gamma P(T = c) = alpha.

    ``c`` is the largest mass point whose inclusive tail still reaches alpha,
    which keeps ``gamma`` in (0, 1].
    """
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if nd.is_exact:
        tails = nd.upper_tails_exact()
        a = alpha if isinstance(alpha, Fraction) else Fraction(alpha).limit_denominator(10 ** 9)
        probs = nd.exact_probs
    else:
        tails = nd.upper_tails()
        a = alpha
        probs = nd.probs
    idx = max(i for i in range(nd.L) if tails[i] >= a)
    above = tails[idx + 1] if idx + 1 < nd.L else 0
    gamma = (a - above) / probs[idx]
    return int(nd.scores[idx]), float(gamma)


def randomized_test(tau: float, nd: NullDistribution, alpha: float) -> RandomizedDecision:
    c, gamma = randomized_critical(nd, alpha)
    s = float(tau) * nd.N
    if s > c + 1e-9:
        dec = "reject"
    elif abs(s - c) <= 1e-9:
        dec = "reject" if gamma >= 1 else "reject_with_prob"
    else:
        dec = "accept"
    return RandomizedDecision(dec, c / nd.N, gamma)


def iter_designs(n: int) -> Iterator[tuple[int, ...]]:
    """Every tie pattern on n points with at least two levels, as level sequences."""
    for cuts in range(1, n):
        for pos in itertools.combinations(range(1, n), cuts):
            bounds = (0,) + pos + (n,)
            yield tuple(g for g in range(len(bounds) - 1) for _ in range(bounds[g + 1] - bounds[g]))
