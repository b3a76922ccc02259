"""How well the Poisson PFER/FDR approximations track simulation, by design.

With the 12-array 4/4/4 design the single grid point sits at 1/34650 and
nearly all approximation error is Monte Carlo noise. With five distinct
arrays the grid tail is 1/120 and a non-null gene exceeds it with
probability beta near 1/2, so the count of non-null hits is Binomial(K1, beta)
rather than Poisson, and the approximations drift away from simulation by
more than the Monte Carlo error.

    python3 scripts/poisson_approx_accuracy.py --reps 10000
"""
import argparse

import numpy as np
from scipy import stats

from tauscreen.null_dist import exact_null, threshold_grid
from tauscreen.sim import SimConfig, alternative_tail_rates, calibrate_theta, run_study
from tauscreen.tau_core import build_design_structure


def exact_mixture(K0, K1, tau, beta, r):
    """E(m1 1{W > r}) and E(Q) when null and non-null hits are independent binomials."""
    a = stats.binom.pmf(np.arange(K0 + 1), K0, tau)
    b = stats.binom.pmf(np.arange(K1 + 1), K1, beta)
    m, l = np.meshgrid(np.arange(K0 + 1), np.arange(K1 + 1), indexing="ij")
    w = np.outer(a, b)
    hit = (m + l) > r
    q = np.divide(m, m + l, out=np.zeros(m.shape), where=(m + l) > 0)
    return float(np.sum(w * m * hit)), float(np.sum(w * q * hit))


def one(label, cfg, args):
    d = build_design_structure(cfg.design_variates())
    nd = exact_null(d)
    grid = threshold_grid(nd, cfg.eta, 1)
    theta = calibrate_theta(cfg, grid, args.beta, draws=200_000, seed=args.seed + 1)
    cfg = cfg.replace(theta=theta)
    beta = alternative_tail_rates(cfg, grid, draws=args.beta_draws, seed=args.seed + 2)
    rep = run_study(cfg, "chen-stein", args.alpha, nd=nd, beta=beta)
    r = rep.critical_vector["r"][0]
    pfer_x, fdr_x = exact_mixture(cfg.K0, cfg.K1, grid.taus[0], beta[0], r)
    ap, x = rep.approximations, rep.rates
    print(f"\n{label}: tau_1={grid.taus[0]:.3g}, beta_1={beta[0]:.4f}, r_1={r}")
    print(f"  PFER  approx {ap['pfer']:.5f}  binomial {pfer_x:.5f}  sim {x.PFER:.5f} +/- {x.se['PFER']:.5f}")
    print(f"  FDR   approx {ap['fdr']:.5f}  binomial {fdr_x:.5f}  sim {x.FDR:.5f} +/- {x.se['FDR']:.5f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=10_000)
    ap.add_argument("--beta", type=float, default=0.5)
    ap.add_argument("--beta-draws", type=int, default=1_000_000)
    ap.add_argument("--alpha", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    base = SimConfig(K=100, K1=10, reps=args.reps, seed=args.seed, max_j=1)
    one("12 arrays, 4/4/4", base.replace(n=12, groups=3), args)
    one("5 distinct arrays", base.replace(n=5), args)


if __name__ == "__main__":
    main()
