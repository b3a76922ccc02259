"""Empirical TV distance of null grid counts from Poisson as K grows.

The grid tail tau_1 is fixed by the design, so the drift K tau_1 grows with K.
With blocks of fixed size the bound levels off near
2 (block_size tau_1 + b2 / K); it only vanishes when tau_1 shrinks too,
for example by adding arrays (--n).

    python3 scripts/tv_trend.py --reps 2000
"""
import argparse

from tauscreen.null_dist import exact_null, threshold_grid
from tauscreen.sim import SimConfig, empirical_tv
from tauscreen.tau_core import build_design_structure


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--Ks", type=int, nargs="+", default=[100, 300, 1000, 3000])
    ap.add_argument("--n", type=int, default=6)
    ap.add_argument("--dependence", default="block")
    ap.add_argument("--block-size", type=int, default=5)
    ap.add_argument("--rho", type=float, default=0.5)
    ap.add_argument("--reps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=3)
    args = ap.parse_args()

    base = SimConfig(n=args.n, dependence=args.dependence, block_size=args.block_size,
                     rho=args.rho, seed=args.seed)
    nd = exact_null(build_design_structure(base.design_variates()))
    grid = threshold_grid(nd, 0.1, max_j=1)
    print(f"grid tail tau_1 = {grid.taus[0]:.4g}")
    print(f"{'K':>7}{'drift':>9}{'TV':>10}{'noise':>10}{'bound':>10}{'b2':>10}")
    for K in args.Ks:
        res = empirical_tv(base.replace(K=K), grid, reps=args.reps)
        print(f"{K:>7}{res.drift[0]:>9.3f}{res.tv[0]:>10.4f}{res.noise_floor[0]:>10.4f}"
              f"{res.bound[0]:>10.4f}{res.b2[0]:>10.4f}")


if __name__ == "__main__":
    main()
