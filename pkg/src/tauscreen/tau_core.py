"""Design comparison structure and coordinatewise Kendall tau statistics.

Genes are stored as rows of a ``K x n`` matrix; the ``n`` arrays (columns) are
ordered by their design variate ``t``. For every gene the statistic is a sum
of ``sign(X[i'] - X[i])`` over the pairs ``(i, i')`` with ``t[i] < t[i']``,
kept as an exact integer score and divided once at the end.
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import DataError, DegenerateDesign, InvalidN, LengthMismatch

THREADS_ENV = "TAU_SCREEN_THREADS"


@dataclass(frozen=True)
class DesignVariates:
    """Sorted design variates ``t_1 <= ... <= t_n`` with at least one strict step."""

    t: tuple[float, ...]

    def __post_init__(self):
        t = tuple(float(v) for v in self.t)
        object.__setattr__(self, "t", t)
        if len(t) < 2:
            raise InvalidN(f"need at least 2 design points, got {len(t)}")
        if not all(math.isfinite(v) for v in t):
            raise DegenerateDesign("design variates must be finite")
        if any(b < a for a, b in zip(t, t[1:])):
            raise ValueError("design variates must be sorted; use sort_design()")
        if t[0] == t[-1]:
            raise DegenerateDesign("all design variates are equal (N = 0)")

    @property
    def n(self) -> int:
        return len(self.t)


def sort_design(t: Sequence[float]) -> tuple[DesignVariates, np.ndarray]:
    """Stable-sort raw design values; returns the design and the column order used."""
    t = np.asarray(t, dtype=float)
    order = np.argsort(t, kind="stable")
    return DesignVariates(tuple(t[order])), order


@dataclass(frozen=True)
class DesignStructure:
    """The comparison set S and its counts, shared by every gene.

    ``pairs`` holds 0-based index pairs ``(i, i')`` with ``t[i] < t[i']``.
    ``N1`` counts unordered pairs of elements of S that share an index in the
    same role (both as the smaller-t or both as the larger-t member); ``N2``
    counts pairs that chain through a shared index (larger-t member of one is
    the smaller-t member of the other).
    """

    design: DesignVariates
    pairs: np.ndarray = field(repr=False)
    N: int
    N1: int
    N2: int
    levels: np.ndarray = field(repr=False)
    group_sizes: tuple[int, ...]

    @property
    def n(self) -> int:
        return self.design.n

    @property
    def t(self) -> tuple[float, ...]:
        return self.design.t

    @property
    def n_pairs_total(self) -> int:
        return self.n * (self.n - 1) // 2

    @property
    def all_distinct(self) -> bool:
        return self.N == self.n_pairs_total

    def pair_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.pairs}


def build_design_structure(t: DesignVariates | Sequence[float]) -> DesignStructure:
    if not isinstance(t, DesignVariates):
        t = DesignVariates(tuple(t))
    tv = np.asarray(t.t)
    n = tv.size
    ii, jj = np.triu_indices(n, k=1)
    keep = tv[ii] < tv[jj]
    pairs = np.column_stack([ii[keep], jj[keep]]).astype(np.intp)
    N = int(pairs.shape[0])
    if N == 0:
        raise DegenerateDesign("no ordered design pairs")

    # per index: how many pairs use it as the smaller-t / larger-t member
    as_lower = np.bincount(pairs[:, 0], minlength=n)
    as_upper = np.bincount(pairs[:, 1], minlength=n)
    N1 = int(sum(math.comb(int(a), 2) + math.comb(int(b), 2) for a, b in zip(as_lower, as_upper)))
    N2 = int(np.dot(as_lower, as_upper))

    _, levels, sizes = np.unique(tv, return_inverse=True, return_counts=True)
    pairs.setflags(write=False)
    levels = levels.astype(np.intp)
    levels.setflags(write=False)
    return DesignStructure(t, pairs, N, N1, N2, levels, tuple(int(s) for s in sizes))


@dataclass(frozen=True)
class ExpressionMatrix:
    """Genes as rows, arrays as columns sorted by design variate."""

    values: np.ndarray = field(repr=False)
    gene_ids: tuple[str, ...]
    design: DesignVariates
    column_order: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise LengthMismatch("expression values must be a 2-D array")
        K, n = v.shape
        if K < 1:
            raise LengthMismatch("need at least one gene")
        if n != self.design.n:
            raise LengthMismatch(f"matrix has {n} columns but design has {self.design.n} points")
        if len(self.gene_ids) != K:
            raise LengthMismatch(f"{len(self.gene_ids)} gene ids for {K} rows")
        if not np.all(np.isfinite(v)):
            bad = int(np.argwhere(~np.isfinite(v))[0, 0])
            raise DataError(f"non-finite expression value for gene {self.gene_ids[bad]!r}")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "gene_ids", tuple(str(g) for g in self.gene_ids))

    @classmethod
    def from_unsorted(cls, values, t, gene_ids=None) -> "ExpressionMatrix":
        """Sort columns by ``t`` and record the permutation applied."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[None, :]
        if values.shape[1] != len(t):
            raise LengthMismatch(f"matrix has {values.shape[1]} columns but {len(t)} design values")
        design, order = sort_design(t)
        if gene_ids is None:
            gene_ids = [f"g{k + 1}" for k in range(values.shape[0])]
        return cls(values[:, order], tuple(gene_ids), design, order)

    @property
    def K(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class TauVector:
    scores: np.ndarray  # integer sums of signs over S
    classical: np.ndarray
    rescaled: np.ndarray
    has_ties: np.ndarray
    N: int
    n: int

    @property
    def K(self) -> int:
        return self.scores.size


def _pair_scores(x: np.ndarray, pairs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    diff = x[:, pairs[:, 1]] - x[:, pairs[:, 0]]
    s = np.sign(diff).astype(np.int64).sum(axis=1)
    ties = (diff == 0).any(axis=1)
    return s, ties


def _to_tau(scores: np.ndarray, ties: np.ndarray, d: DesignStructure) -> TauVector:
    scores = np.asarray(scores, dtype=np.int64)
    return TauVector(
        scores=scores,
        classical=scores / d.n_pairs_total,
        rescaled=scores / d.N,
        has_ties=np.asarray(ties, dtype=bool),
        N=d.N,
        n=d.n,
    )


def kendall_tau(x: Sequence[float], d: DesignStructure) -> tuple[float, float]:
    """Classical and rescaled tau of a single gene row."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size != d.n:
        raise LengthMismatch(f"row has {x.size} entries, design has {d.n}")
    s, _ = _pair_scores(x[None, :], d.pairs)
    s = int(s[0])
    return s / d.n_pairs_total, s / d.N


def tau_scores(x: np.ndarray, d: DesignStructure) -> TauVector:
    """Vectorised scores for a ``K x n`` array already in design order."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != d.n:
        raise LengthMismatch(f"rows have {x.shape[1]} entries, design has {d.n}")
    s, ties = _pair_scores(x, d.pairs)
    return _to_tau(s, ties, d)


def _thread_count(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def screen_matrix(m: ExpressionMatrix, d: DesignStructure | None = None,
                  threads: int | None = None, chunk: int = 4096) -> TauVector:
    """Tau statistics for every gene against one shared design structure.

    Rows are split into chunks scored in a thread pool (numpy releases the GIL);
    results land in disjoint slices so the output does not depend on scheduling.
    """
    if d is None:
        d = build_design_structure(m.design)
    if d.n != m.n:
        raise LengthMismatch(f"matrix has {m.n} arrays, design has {d.n}")
    K = m.K
    scores = np.empty(K, dtype=np.int64)
    ties = np.empty(K, dtype=bool)

    def work(lo):
        hi = min(lo + chunk, K)
        scores[lo:hi], ties[lo:hi] = _pair_scores(m.values[lo:hi], d.pairs)

    starts = range(0, K, chunk)
    nthreads = min(_thread_count(threads), len(starts))
    if nthreads <= 1:
        for lo in starts:
            work(lo)
    else:
        with ThreadPoolExecutor(nthreads) as pool:
            list(pool.map(work, starts))
    return _to_tau(scores, ties, d)


def null_variance_distinct(n: int) -> float:
    """Null variance of tau when all design values are distinct: 2(2n+5)/(9n(n-1))."""
    return float(null_variance_distinct_exact(n))


def null_variance_distinct_exact(n: int) -> Fraction:
    if int(n) != n or n < 2:
        raise InvalidN(f"n must be an integer >= 2, got {n}")
    n = int(n)
    return Fraction(2 * (2 * n + 5), 9 * n * (n - 1))


def null_variance_closed_form(d: DesignStructure) -> Fraction:
    if d.N < 1:
        raise DegenerateDesign("N = 0")
    return (Fraction(2, 3) * (d.N1 - d.N2) + d.N) / d.N ** 2


def null_variance_general(d: DesignStructure, check: bool = True, budget: int | None = None) -> float:
    """Null variance of the rescaled tau for an arbitrary (possibly tied) design.

    With ``check`` the closed form is compared with the variance of the exact
    permutation law whenever that law is within the enumeration budget; on
    disagreement the enumerated value wins and a warning is issued.
    """
    closed = null_variance_closed_form(d)
    if check:
        from .null_dist import DEFAULT_BUDGET, arrangement_count, exact_null

        budget = DEFAULT_BUDGET if budget is None else budget
        if arrangement_count(d) <= budget:
            exact = exact_null(d, budget=budget).variance_exact()
            if exact != closed:
                warnings.warn(
                    f"closed-form null variance {float(closed)!r} disagrees with the "
                    f"permutation variance {float(exact)!r}; using the latter",
                    RuntimeWarning,
                )
                return float(exact)
    return float(closed)
