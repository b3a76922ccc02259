"""Compare error rates of every procedure on one simulated design.

    python3 scripts/error_rate_study.py --K 500 --K1 25 --theta 1.0 --reps 500
"""
import argparse
import json

from tauscreen.mht import PROCEDURES
from tauscreen.sim import SimConfig, run_study


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--K", type=int, default=500)
    ap.add_argument("--K1", type=int, default=25)
    ap.add_argument("--n", type=int, default=12)
    ap.add_argument("--groups", type=int, default=3)
    ap.add_argument("--theta", type=float, default=1.0)
    ap.add_argument("--dependence", default="independent")
    ap.add_argument("--rho", type=float, default=0.0)
    ap.add_argument("--alpha", type=float, default=0.05)
    ap.add_argument("--reps", type=int, default=500)
    ap.add_argument("--max-j", type=int, default=3)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--json", action="store_true", help="print full reports as JSON")
    args = ap.parse_args()

    cfg = SimConfig(K=args.K, K1=args.K1, n=args.n, groups=args.groups, theta=args.theta,
                    dependence=args.dependence, rho=args.rho, reps=args.reps, seed=args.seed,
                    max_j=args.max_j)
    reports = {p: run_study(cfg, p, args.alpha) for p in PROCEDURES}
    if args.json:
        print(json.dumps({p: r.to_dict() for p, r in reports.items()}, indent=2))
        return
    print(f"{'procedure':<12}{'PCER':>10}{'PFER':>10}{'FWER':>10}{'FDR':>10}{'pFDR':>10}{'mean R':>10}")
    for p, r in reports.items():
        x = r.rates
        pfdr = float("nan") if x.pFDR is None else x.pFDR
        print(f"{p:<12}{x.PCER:>10.5f}{x.PFER:>10.4f}{x.FWER:>10.4f}{x.FDR:>10.4f}{pfdr:>10.4f}{r.mean_R:>10.2f}")


if __name__ == "__main__":
    main()
