"""Monte Carlo generator for HDLSS matrices and empirical error-rate studies.

Null genes are exchangeable across arrays; non-null genes get a location shift
``theta * level(t_i)`` that increases with the design level. Inter-gene
dependence comes from an additive latent factor shared within a block of
genes (or by all genes), drawn independently per array.

All randomness is derived from ``cfg.seed`` through purpose-tagged child
seeds, so a replicate is reproducible on its own and reports do not depend
on execution order.
"""
from __future__ import annotations

import dataclasses
import json
import math
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import chen_stein, detection, mht
from .null_dist import (NullDistribution, ThresholdGrid, null_for, randomized_p_values,
                        right_p_values, threshold_grid)
from .tau_core import (DesignStructure, DesignVariates, ExpressionMatrix, build_design_structure,
                       tau_scores)

DEPENDENCE = ("independent", "block", "exchangeable")
NOISE = ("normal", "logistic")


def derive_rng(seed: int, *tags) -> np.random.Generator:
    """Generator for ``seed`` specialised by purpose tags (strings or ints)."""
    key = tuple(zlib.crc32(t.encode()) if isinstance(t, str) else int(t) for t in tags)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


@dataclass(frozen=True)
class SimConfig:
    K: int = 1000
    n: int = 12
    groups: int | None = None  # None: n distinct design points
    design: tuple[float, ...] | None = None
    K1: int = 0
    theta: float = 0.0
    dependence: str = "independent"
    block_size: int = 10
    rho: float = 0.0
    noise: str = "normal"
    seed: int = 0
    reps: int = 1000
    null: str = "exact"
    mc_reps: int = 200_000
    eta: float = 0.1
    max_j: int | None = None
    pvalues: str = "inclusive"  # or "randomized"

    def __post_init__(self):
        if self.design is not None:
            object.__setattr__(self, "design", tuple(float(v) for v in self.design))
            object.__setattr__(self, "n", len(self.design))
        if self.K < 1 or self.n < 2:
            raise ValueError("need K >= 1 and n >= 2")
        if not 0 <= self.K1 <= self.K:
            raise ValueError("K1 must lie in 0..K")
        if self.theta < 0:
            raise ValueError("theta must be >= 0")
        if self.groups is not None and (self.groups < 2 or self.n % self.groups):
            raise ValueError(f"n={self.n} cannot be split into {self.groups} equal groups")
        if self.dependence not in DEPENDENCE:
            raise ValueError(f"dependence must be one of {DEPENDENCE}")
        if self.noise not in NOISE:
            raise ValueError(f"noise must be one of {NOISE}")
        if not 0 <= self.rho < 1:
            raise ValueError("rho must lie in [0, 1)")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if self.pvalues not in ("inclusive", "randomized"):
            raise ValueError("pvalues must be 'inclusive' or 'randomized'")

    @property
    def K0(self) -> int:
        return self.K - self.K1

    def design_variates(self) -> DesignVariates:
        if self.design is not None:
            return DesignVariates(tuple(sorted(self.design)))
        if self.groups is None:
            return DesignVariates(tuple(float(i + 1) for i in range(self.n)))
        size = self.n // self.groups
        return DesignVariates(tuple(float(g + 1) for g in range(self.groups) for _ in range(size)))

    def replace(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        if out["design"] is not None:
            out["design"] = list(out["design"])
        return out

    @classmethod
    def from_mapping(cls, obj: dict) -> "SimConfig":
        kw = {}
        names = {f.name: f for f in dataclasses.fields(cls)}
        for key, val in obj.items():
            key = key.strip().replace("-", "_")
            if key not in names:
                raise ValueError(f"unknown SimConfig field {key!r}")
            kw[key] = _coerce(key, val)
        return cls(**kw)

    @classmethod
    def from_file(cls, path) -> "SimConfig":
        return cls.from_mapping(read_config(path))


def read_config(path) -> dict:
    """Raw settings from a JSON object or ``key = value`` lines (``#`` comments allowed)."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        return dict(json.loads(text))
    obj = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected key = value")
        obj[key.strip()] = val.strip()
    return obj


_INT = {"K", "n", "groups", "K1", "block_size", "seed", "reps", "mc_reps", "max_j"}
_FLOAT = {"theta", "rho", "eta"}


def _coerce(key, val):
    if val is None or (isinstance(val, str) and val.lower() in ("none", "null", "")):
        return None
    if key in _INT:
        return int(val)
    if key in _FLOAT:
        return float(val)
    if key == "design":
        if isinstance(val, str):
            val = [v for v in val.replace(";", ",").split(",") if v.strip()]
        return tuple(float(v) for v in val)
    return str(val)


def _noise(rng: np.random.Generator, shape, kind: str) -> np.ndarray:
    if kind == "normal":
        return rng.standard_normal(shape)
    return rng.logistic(size=shape)


def _levels(design: DesignVariates) -> np.ndarray:
    _, inv = np.unique(np.asarray(design.t), return_inverse=True)
    return inv.astype(float) + 1.0


def generate(cfg: SimConfig, rep: int) -> tuple[ExpressionMatrix, np.ndarray]:
    """One replicate matrix and the sorted indices of its non-null genes."""
    design = cfg.design_variates()
    K, n = cfg.K, design.n
    rng = derive_rng(cfg.seed, "generate", rep)
    x = _noise(rng, (K, n), cfg.noise)
    if cfg.rho > 0 and cfg.dependence != "independent":
        if cfg.dependence == "block":
            block = np.arange(K) // cfg.block_size
            latent = rng.standard_normal((block[-1] + 1, n))[block]
        else:
            latent = np.broadcast_to(rng.standard_normal((1, n)), (K, n))
        x = math.sqrt(cfg.rho) * latent + math.sqrt(1 - cfg.rho) * x
    truth = np.sort(derive_rng(cfg.seed, "truth", rep).permutation(K)[: cfg.K1])
    if cfg.K1 and cfg.theta > 0:
        x[truth] += cfg.theta * _levels(design)
    ids = tuple(f"g{k + 1}" for k in range(K))
    return ExpressionMatrix(x, ids, design), truth


def _marginal_rows(cfg: SimConfig, m: int, rng: np.random.Generator, n: int) -> np.ndarray:
    x = _noise(rng, (m, n), cfg.noise)
    if cfg.rho > 0 and cfg.dependence != "independent":
        x = math.sqrt(cfg.rho) * rng.standard_normal((m, n)) + math.sqrt(1 - cfg.rho) * x
    return x


def alternative_tail_rates(cfg: SimConfig, grid: ThresholdGrid, theta: float | None = None,
                           draws: int = 1_000_000, seed: int | None = None,
                           block: int = 100_000) -> np.ndarray:
    """Monte Carlo tail rates P(T >= cutoff_j) for a shifted (non-null) gene."""
    theta = cfg.theta if theta is None else theta
    d = build_design_structure(cfg.design_variates())
    shift = theta * _levels(d.design)
    rng = derive_rng(cfg.seed if seed is None else seed, "beta")
    hits = np.zeros(grid.J, dtype=np.int64)
    for lo in range(0, draws, block):
        m = min(block, draws - lo)
        s = tau_scores(_marginal_rows(cfg, m, rng, d.n) + shift, d).scores
        hits += (s[:, None] >= grid.cutoff_scores[None, :]).sum(axis=0)
    return hits / draws


def calibrate_theta(cfg: SimConfig, grid: ThresholdGrid, target: float, j: int = 0,
                    draws: int = 200_000, seed: int | None = None, tol: float = 1e-4) -> float:
    """Shift giving tail rate ``target`` at grid point ``j``.

    Uses one fixed noise sample for every candidate, so the estimated rate is
    monotone in theta and bisection is exact for that sample.
    """
    d = build_design_structure(cfg.design_variates())
    lv = _levels(d.design)
    rng = derive_rng(cfg.seed if seed is None else seed, "theta")
    noise = _marginal_rows(cfg, draws, rng, d.n)
    cut = grid.cutoff_scores[j]

    def rate(th):
        return float(np.mean(tau_scores(noise + th * lv, d).scores >= cut))

    lo, hi = 0.0, 1.0
    while rate(hi) < target:
        hi *= 2
        if hi > 1e6:
            raise ValueError("target tail rate not reachable")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if rate(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class SimReport:
    procedure: str
    alpha: float
    config: dict
    rates: mht.ErrorRates
    tallies: list = field(repr=False)
    global_reject_rate: float = 0.0
    global_reject_se: float = 0.0
    mean_R: float = 0.0
    total_rejections: int = 0
    critical_vector: dict | None = None
    grid: dict | None = None
    W_tv: list | None = None
    approximations: dict | None = None
    warnings: list = field(default_factory=list)

    def order_relations_hold(self) -> bool:
        r = self.rates
        ok = r.PFER >= r.FWER
        if r.pFDR is not None:
            ok = ok and r.pFDR >= r.FDR
        return bool(ok)

    def to_dict(self, include_tallies: bool = False) -> dict:
        out = {
            "procedure": self.procedure,
            "alpha": self.alpha,
            "config": self.config,
            "rates": self.rates.to_dict(),
            "global_reject_rate": self.global_reject_rate,
            "global_reject_se": self.global_reject_se,
            "mean_R": self.mean_R,
            "total_rejections": self.total_rejections,
            "critical_vector": self.critical_vector,
            "grid": self.grid,
            "W_tv": self.W_tv,
            "approximations": self.approximations,
            "order_relations_hold": self.order_relations_hold(),
            "warnings": list(self.warnings),
        }
        if include_tallies:
            out["tallies"] = [t.as_row() for t in self.tallies]
        return out

    def tallies_tsv(self) -> str:
        cols = ["rep", "K0", "K1", "m0", "m1", "l0", "l1", "R", "Q"]
        lines = ["\t".join(cols)]
        for i, t in enumerate(self.tallies):
            row = t.as_row()
            lines.append("\t".join([str(i)] + [repr(row[c]) if c == "Q" else str(row[c]) for c in cols[1:]]))
        return "\n".join(lines) + "\n"


def _summarise(procedure, alpha, cfg_dict, tallies, **extra) -> SimReport:
    rates = mht.error_rates(tallies)
    R = np.array([t.R for t in tallies], dtype=float)
    g = float(np.mean(R > 0))
    se = math.sqrt(g * (1 - g) / len(tallies))
    return SimReport(procedure, alpha, cfg_dict, rates, tallies, g, se, float(R.mean()),
                     int(R.sum()), **extra)


def study_null(cfg: SimConfig, d: DesignStructure | None = None) -> NullDistribution:
    d = d or build_design_structure(cfg.design_variates())
    return null_for(d, cfg.null, reps=cfg.mc_reps, seed=cfg.seed)


def run_study(cfg: SimConfig, procedure: str, alpha: float = 0.05,
              nd: NullDistribution | None = None, beta: Sequence[float] | None = None) -> SimReport:
    """End-to-end replicates: generate, screen, test, tally, aggregate.

    For ``chen-stein`` the report also carries the calibrated critical vector,
    the TV norm of each W(tau_j) against the Poisson law with drift K tau_j
    (or K tau*_j when ``beta`` is given), and the PFER/FDR approximations
    when ``beta`` is given.
    """
    if procedure not in mht.PROCEDURES:
        raise ValueError(f"unknown procedure {procedure!r}; choose from {mht.PROCEDURES}")
    d = build_design_structure(cfg.design_variates())
    nd = nd or study_null(cfg, d)
    warns = []
    extra = {}
    if procedure == "chen-stein":
        grid = threshold_grid(nd, cfg.eta, cfg.max_j)
        rv = detection.calibrate_critical_vector(grid, cfg.K, alpha)
        extra["critical_vector"] = rv.to_dict()
        extra["grid"] = grid.to_dict()
        W_all = np.empty((cfg.reps, grid.J), dtype=np.int64)
    else:
        tail_min = float(nd.upper_tails()[-1])
        if tail_min > alpha / cfg.K and cfg.pvalues == "inclusive":
            warns.append(f"smallest attainable p-value {tail_min:.3g} exceeds alpha/K = {alpha / cfg.K:.3g}")

    tallies = []
    for rep in range(cfg.reps):
        m, truth = generate(cfg, rep)
        tv = tau_scores(m.values, d)
        if procedure == "chen-stein":
            cp = detection.count_process(tv, grid)
            W_all[rep] = cp.counts
            rejected = detection.detect(cp, rv).detected
        else:
            if cfg.pvalues == "randomized":
                p = randomized_p_values(tv.rescaled, nd, derive_rng(cfg.seed, "pvalue", rep))
            else:
                p = right_p_values(tv.rescaled, nd)
            rejected = mht.apply_procedure(procedure, p, alpha)
        tallies.append(mht.tally(rejected, truth, cfg.K))

    if procedure == "chen-stein":
        if beta is not None:
            rates = detection.MixtureRates(cfg.K0, cfg.K1, grid.taus, np.asarray(beta)[: grid.J])
            drift = cfg.K * rates.tau_star
            extra["approximations"] = {"pfer": detection.pfer_approx(rates, rv),
                                       "fdr": detection.fdr_approx(rates, rv),
                                       "beta": [float(b) for b in rates.beta]}
        else:
            drift = cfg.K * grid.taus
        extra["W_tv"] = [chen_stein.tv_to_poisson(W_all[:, j], float(drift[j])) for j in range(grid.J)]
    return _summarise(procedure, alpha, cfg.to_dict(), tallies, warnings=warns, **extra)


def pvalue_study(K: int, K1: int, procedure: str, alpha: float, reps: int, seed: int,
                 alt_p: float = 0.0) -> SimReport:
    """Independent exact-uniform null p-values; non-null genes get the fixed p-value ``alt_p``."""
    tallies = []
    truth = np.arange(K1)
    for rep in range(reps):
        rng = derive_rng(seed, "uniform-p", rep)
        p = rng.random(K)
        p[:K1] = alt_p
        tallies.append(mht.tally(mht.apply_procedure(procedure, p, alpha), truth, K))
    cfg = {"K": K, "K1": K1, "reps": reps, "seed": seed, "alt_p": alt_p}
    return _summarise(procedure, alpha, cfg, tallies)


@dataclass(frozen=True)
class EmpiricalTV:
    tv: tuple[float, ...]
    noise_floor: tuple[float, ...]
    bound: tuple[float, ...]  # per grid point, 2 (b1+b2+b3)(1-e^-nu)/nu
    b1: tuple[float, ...]
    b2: tuple[float, ...]
    drift: tuple[float, ...]
    reps: int

    @property
    def process_bound(self) -> float:
        return max(self.bound)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self) | {"process_bound": self.process_bound}


def _blocks(cfg: SimConfig) -> np.ndarray:
    if cfg.dependence == "block" and cfg.rho > 0:
        return np.arange(cfg.K) // cfg.block_size
    if cfg.dependence == "exchangeable" and cfg.rho > 0:
        return np.zeros(cfg.K, dtype=np.intp)
    return np.arange(cfg.K)


def empirical_tv(cfg: SimConfig, grid: ThresholdGrid, reps: int | None = None) -> EmpiricalTV:
    """Empirical law of each null count W(tau_j) against Poisson(K tau_j), with Chen-Stein bounds.

    Neighbourhoods are the dependence blocks. ``b2`` uses the unbiased
    estimate of sum over blocks of E[c_b (c_b - 1)] (c_b = hits in block b);
    ``b3`` is zero because blocks are mutually independent.
    """
    if cfg.K1 and cfg.theta > 0:
        raise ValueError("empirical_tv needs a null configuration")
    reps = cfg.reps if reps is None else reps
    d = build_design_structure(cfg.design_variates())
    blocks = _blocks(cfg)
    sizes = np.bincount(blocks)
    W = np.empty((reps, grid.J), dtype=np.int64)
    pairs = np.zeros(grid.J)
    for rep in range(reps):
        m, _ = generate(cfg, rep)
        Y = tau_scores(m.values, d).scores[:, None] >= grid.cutoff_scores[None, :]
        W[rep] = Y.sum(axis=0)
        c = np.stack([np.bincount(blocks, weights=Y[:, j], minlength=sizes.size) for j in range(grid.J)])
        pairs += (c * (c - 1)).sum(axis=1)
    drift = cfg.K * grid.taus
    b1 = float(np.sum(sizes.astype(float) ** 2)) * grid.taus ** 2
    b2 = pairs / reps if sizes.max() > 1 else np.zeros(grid.J)
    drift, b1, b2 = (tuple(float(v) for v in a) for a in (drift, b1, b2))
    bound = tuple(chen_stein.tv_bound(b1[j], b2[j], 0.0, drift[j]) for j in range(grid.J))
    tv = tuple(chen_stein.tv_to_poisson(W[:, j], drift[j]) for j in range(grid.J))
    floor = tuple(chen_stein.tv_noise_floor(drift[j], reps) for j in range(grid.J))
    return EmpiricalTV(tv, floor, bound, b1, b2, drift, reps)


def tv_bernoulli_poisson(p: float) -> float:
    """Exact TV norm between Bernoulli(p) and Poisson(p)."""
    e = math.exp(-p)
    return abs(1 - p - e) + abs(p - p * e) + (1 - e - p * e)


def ecdf_replicates(cfg: SimConfig, Ks: Sequence[int], t: float, reps: int) -> dict:
    """Replicate values of G_K(t) for each K (null genes, same dependence settings)."""
    d = build_design_structure(cfg.design_variates())
    out = {}
    for K in Ks:
        c = cfg.replace(K=K, K1=0)
        vals = np.empty(reps)
        for rep in range(reps):
            m, _ = generate(c, rep)
            vals[rep] = detection.ecdf(tau_scores(m.values, d))(t)
        out[K] = vals
    return out
