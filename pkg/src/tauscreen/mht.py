"""Classical multiple-testing procedures and truth-conditioned error tallies."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import Unattainable
from .null_dist import NullDistribution
from .tau_core import TauVector

PROCEDURES = ("uit", "bonferroni", "simes", "hochberg", "bh", "chen-stein")


@dataclass(frozen=True)
class PValueVector:
    p: np.ndarray
    anti_ranks: np.ndarray  # anti_ranks[k] is the gene holding the (k+1)-th smallest p

    @classmethod
    def of(cls, p) -> "PValueVector":
        if isinstance(p, PValueVector):
            return p
        p = np.asarray(p, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("p-values must be a non-empty 1-D array")
        if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
            raise ValueError("p-values must lie in [0, 1]")
        # stable sort: ties broken by gene index
        return cls(p, np.argsort(p, kind="stable"))

    @property
    def K(self) -> int:
        return self.p.size

    @property
    def ordered(self) -> np.ndarray:
        return self.p[self.anti_ranks]


def uit_statistic(taus: TauVector | Sequence[float]) -> float:
    r = taus.rescaled if isinstance(taus, TauVector) else np.asarray(taus, dtype=float)
    return float(np.max(r))


def independent_critical_level(nd: NullDistribution, K: int, alpha: float) -> tuple[float, float]:
    """Per-test level alpha* = 1 - (1 - alpha)^(1/K) and the matching critical tau.

    ``c`` is the smallest mass point whose inclusive right tail is <= alpha*.
    """
    if not 0 < alpha < 1 or K < 1:
        raise ValueError("need 0 < alpha < 1 and K >= 1")
    alpha_star = -math.expm1(math.log1p(-alpha) / K)
    return alpha_star, critical_tau(nd, alpha_star)


def critical_tau(nd: NullDistribution, level: float) -> float:
    tails = nd.upper_tails()
    ok = np.flatnonzero(tails <= level)
    if ok.size == 0:
        raise Unattainable(
            f"smallest attainable tail {tails[-1]:.6g} exceeds per-test level {level:.6g}"
        )
    return float(nd.mass_points[ok[0]])


def bonferroni_level(K: int, alpha: float) -> float:
    return alpha / K


def bonferroni_third_order(K: int, alpha_star: float) -> float:
    """Inclusion-exclusion size of K asymptotically independent per-test events, to third order."""
    return K * alpha_star - math.comb(K, 2) * alpha_star ** 2 + math.comb(K, 3) * alpha_star ** 3


def simes_triggering(pv, alpha: float) -> np.ndarray:
    """Genes whose ordered p-value meets its Simes bound ``k * alpha / K``."""
    pv = PValueVector.of(pv)
    K = pv.K
    hit = pv.ordered <= np.arange(1, K + 1) * alpha / K
    return np.sort(pv.anti_ranks[hit])


def simes_global(pv, alpha: float) -> bool:
    """Reject the intersection null iff some ordered p-value is <= k alpha / K."""
    pv = PValueVector.of(pv)
    K = pv.K
    return bool(np.any(pv.ordered <= np.arange(1, K + 1) * alpha / K))


def _step_up(pv: PValueVector, thresholds: np.ndarray) -> np.ndarray:
    ok = np.flatnonzero(pv.ordered <= thresholds)
    if ok.size == 0:
        return np.empty(0, dtype=np.intp)
    return np.sort(pv.anti_ranks[: ok[-1] + 1])


def hochberg_stepup(pv, alpha: float) -> np.ndarray:
    pv = PValueVector.of(pv)
    K = pv.K
    return _step_up(pv, alpha / (K - np.arange(1, K + 1) + 1))


def bh_stepup(pv, alpha: float) -> np.ndarray:
    pv = PValueVector.of(pv)
    K = pv.K
    return _step_up(pv, np.arange(1, K + 1) * alpha / K)


def bonferroni_reject(pv, alpha: float) -> np.ndarray:
    pv = PValueVector.of(pv)
    return np.flatnonzero(pv.p <= bonferroni_level(pv.K, alpha))


def uit_reject(pv, alpha: float) -> np.ndarray:
    """Per-gene rejections at the independence level alpha* = 1-(1-alpha)^(1/K)."""
    pv = PValueVector.of(pv)
    alpha_star = -math.expm1(math.log1p(-alpha) / pv.K)
    return np.flatnonzero(pv.p <= alpha_star)


def apply_procedure(name: str, p, alpha: float) -> np.ndarray:
    if name == "uit":
        return uit_reject(p, alpha)
    if name == "bonferroni":
        return bonferroni_reject(p, alpha)
    if name == "simes":
        return simes_triggering(p, alpha) if simes_global(p, alpha) else np.empty(0, dtype=np.intp)
    if name == "hochberg":
        return hochberg_stepup(p, alpha)
    if name == "bh":
        return bh_stepup(p, alpha)
    raise ValueError(f"unknown p-value procedure {name!r}; choose from {PROCEDURES}")


@dataclass(frozen=True)
class ErrorRateTally:
    K0: int
    K1: int
    m0: int
    m1: int
    l0: int
    l1: int

    @property
    def R(self) -> int:
        return self.m1 + self.l1

    @property
    def Q(self) -> float:
        return self.m1 / self.R if self.R else 0.0

    @property
    def K(self) -> int:
        return self.K0 + self.K1

    def as_row(self) -> dict:
        return {"K0": self.K0, "K1": self.K1, "m0": self.m0, "m1": self.m1,
                "l0": self.l0, "l1": self.l1, "R": self.R, "Q": self.Q}


def tally(rejected: Iterable[int], truth: Iterable[int], K: int) -> ErrorRateTally:
    """Count outcomes; ``truth`` holds the indices of the non-null genes."""
    rej = np.zeros(K, dtype=bool)
    rej[np.fromiter(rejected, dtype=np.intp)] = True
    dg = np.zeros(K, dtype=bool)
    dg[np.fromiter(truth, dtype=np.intp)] = True
    K1 = int(dg.sum())
    m1 = int(np.sum(rej & ~dg))
    l1 = int(np.sum(rej & dg))
    return ErrorRateTally(K - K1, K1, K - K1 - m1, m1, K1 - l1, l1)


@dataclass(frozen=True)
class ErrorRates:
    PCER: float
    PFER: float
    FWER: float
    FDR: float
    pFDR: float | None
    se: dict
    reps: int
    K: int
    no_rejections: bool = False

    def to_dict(self) -> dict:
        return {"PCER": self.PCER, "PFER": self.PFER, "FWER": self.FWER, "FDR": self.FDR,
                "pFDR": self.pFDR, "se": self.se, "reps": self.reps, "K": self.K,
                "no_rejections": self.no_rejections}


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = x.size
    m = math.fsum(x) / n
    if n < 2:
        return m, float("nan")
    var = math.fsum((x - m) ** 2) / (n - 1)
    return m, math.sqrt(var / n)


def error_rates(tallies: Sequence[ErrorRateTally]) -> ErrorRates:
    """Monte Carlo estimates of the five error rates with standard errors."""
    if len(tallies) == 0:
        raise ValueError("need at least one tally")
    K = tallies[0].K
    if any(t.K != K for t in tallies):
        raise ValueError("tallies must share K")
    m1 = np.array([t.m1 for t in tallies], dtype=float)
    Q = np.array([t.Q for t in tallies], dtype=float)
    any_r = np.array([t.R >= 1 for t in tallies], dtype=float)
    any_false = (m1 > 0).astype(float)

    pfer, pfer_se = _mean_se(m1)
    fwer, fwer_se = _mean_se(any_false)
    fdr, fdr_se = _mean_se(Q)
    p_r = math.fsum(any_r) / any_r.size
    se = {"PCER": pfer_se / K, "PFER": pfer_se, "FWER": fwer_se, "FDR": fdr_se}
    if p_r > 0:
        # FDR / P(R >= 1) on the same replicates equals the mean of Q over R >= 1
        pfdr = fdr / p_r
        se["pFDR"] = _mean_se(Q[any_r > 0])[1]
    else:
        pfdr = None
        se["pFDR"] = None
    return ErrorRates(pfer / K, pfer, fwer, fdr, pfdr, se, len(tallies), K, no_rejections=p_r == 0)
