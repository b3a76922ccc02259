"""Command-line interface: ``screen``, ``calibrate``, ``simulate`` and ``nulldist``.

Exit status is 0 on success, 1 on usage errors and 2 on data errors.
Reports are JSON (or TSV tables) written atomically to ``--out`` or stdout;
warnings are collected in the report and echoed to stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import tempfile

import numpy as np

from . import chen_stein, detection, mht
from .errors import (DataError, NonNumeric, ParseError, RaggedRow, TauScreenError, Unattainable)
from .null_dist import (DEFAULT_BUDGET, DEFAULT_MC_REPS, NullDistribution, null_for,
                        randomized_critical, right_p_values, threshold_grid)
from .sim import SimConfig, alternative_tail_rates, read_config, run_study
from .tau_core import ExpressionMatrix, build_design_structure, screen_matrix, sort_design

log = logging.getLogger("tauscreen")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _number(tok: str, line: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise NonNumeric(f"non-numeric value {tok!r}", line) from None
    if not math.isfinite(v):
        raise NonNumeric(f"non-finite value {tok!r}", line)
    return v


def ingest(path) -> ExpressionMatrix:
    """Read ``design,t1,...,tn`` followed by ``gene_id,x1,...,xn`` rows; columns are sorted by t."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    with fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh), 1) if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError("empty input", 1)
    line, head = rows[0]
    if head[0].strip().lower() != "design":
        raise ParseError("first row must start with 'design'", line)
    t = [_number(c.strip(), line) for c in head[1:]]
    n = len(t)
    if n < 2:
        raise ParseError("design row needs at least two values", line)
    ids, vals = [], []
    for line, row in rows[1:]:
        if len(row) != n + 1:
            raise RaggedRow(f"expected {n} values, found {len(row) - 1}", line)
        ids.append(row[0].strip())
        vals.append([_number(c.strip(), line) for c in row[1:]])
    if not vals:
        raise ParseError("no gene rows", line)
    design, order = sort_design(t)
    if np.any(order != np.arange(n)):
        log.info("columns reordered by design variate: %s", order.tolist())
    return ExpressionMatrix(np.asarray(vals)[:, order], tuple(ids), design, order)


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    directory = os.path.dirname(os.path.abspath(out))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(out))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _tsv(header, rows) -> str:
    lines = ["\t".join(header)]
    lines += ["\t".join(str(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _check_unit(name, value):
    if value is not None and not 0 < value < 1:
        raise UsageError(f"--{name} must lie in (0, 1), got {value}")


def _null_from_args(args, d) -> NullDistribution:
    if getattr(args, "null_file", None):
        with open(args.null_file, encoding="utf-8") as fh:
            nd = NullDistribution.from_json(fh.read())
        if nd.N != d.N or nd.n != d.n:
            raise DataError(f"null file was built for n={nd.n}, N={nd.N}; data has n={d.n}, N={d.N}")
        return nd
    if args.null == "mc" and args.seed is None:
        raise UsageError("--seed is required with --null mc")
    return null_for(d, args.null, reps=args.mc_reps, seed=args.seed, budget=args.budget)


def _neighborhood_bounds(m, d, grid, path, perms, seed):
    hoods = chen_stein.read_neighborhoods(path, m.K)
    res = detection.neighborhood_bounds(m.values, d, grid, hoods, perms=perms, seed=seed)
    return [b | {"tau": float(t)} for b, t in zip(res, grid.taus)]


def cmd_screen(args) -> tuple[dict, str | None]:
    _check_unit("alpha", args.alpha)
    _check_unit("eta", args.eta)
    m = ingest(args.input)
    d = build_design_structure(m.design)
    nd = _null_from_args(args, d)
    tv = screen_matrix(m, d)
    p = right_p_values(tv.rescaled, nd)
    warns = []
    n_ties = int(tv.has_ties.sum())
    if n_ties:
        warns.append(f"{n_ties} gene(s) have tied values within the comparison set; sign(0) = 0 used")
    min_p = float(nd.upper_tails()[-1])
    if min_p > args.alpha / m.K:
        warns.append(f"smallest attainable p-value {min_p:.4g} exceeds alpha/K = {args.alpha / m.K:.4g}")

    report = {
        "command": "screen",
        "procedure": args.procedure,
        "alpha": args.alpha,
        "K": m.K,
        "n": m.n,
        "N": d.N,
        "design": list(m.design.t),
        "column_order": [int(i) for i in m.column_order] if m.column_order is not None else None,
        "null": {"method": nd.method, "L": nd.L, "arrangements": nd.arrangements,
                 "reps": nd.reps, "seed": nd.seed, "min_p": min_p},
        "uit": None,
        "detection": None,
        "chen_stein": None,
        "warnings": warns,
    }
    rejected = np.empty(0, dtype=np.intp)
    grid = None
    if args.procedure == "chen-stein":
        grid = threshold_grid(nd, args.eta, args.max_j)
        rv = detection.calibrate_critical_vector(grid, m.K, args.alpha)
        res = detection.detect(detection.count_process(tv, grid), rv)
        rates = None
        if args.beta:
            if args.k1 is None:
                raise UsageError("--beta needs --k1")
            beta = np.resize(np.asarray(args.beta, dtype=float), grid.J)
            rates = detection.MixtureRates(m.K - args.k1, args.k1, grid.taus, beta)
        report["detection"] = detection.detection_report(res, grid, rv, m.gene_ids, rates)
        rejected = res.detected
    else:
        if args.procedure == "uit":
            stat = mht.uit_statistic(tv)
            info = {"statistic": stat, "alpha_star": None, "critical": None, "gamma": None}
            try:
                a_star, c = mht.independent_critical_level(nd, m.K, args.alpha)
                info.update(alpha_star=a_star, critical=c)
                info["gamma"] = randomized_critical(nd, a_star)[1]
            except Unattainable as exc:
                info["alpha_star"] = -math.expm1(math.log1p(-args.alpha) / m.K)
                warns.append(f"UIT level unattainable: {exc}")
            report["uit"] = info
        rejected = mht.apply_procedure(args.procedure, p, args.alpha)
    if args.neighborhoods:
        if grid is None:
            grid = threshold_grid(nd, args.eta, args.max_j)
        if args.seed is None:
            raise UsageError("--seed is required with --neighborhoods (b2 uses random permutations)")
        report["chen_stein"] = _neighborhood_bounds(m, d, grid, args.neighborhoods, args.perms, args.seed)

    rej = np.zeros(m.K, dtype=bool)
    rej[rejected] = True
    report["genes"] = [
        {"id": g, "tau": float(tv.rescaled[k]), "tau_classical": float(tv.classical[k]),
         "p_value": float(p[k]), "has_ties": bool(tv.has_ties[k]), "rejected": bool(rej[k])}
        for k, g in enumerate(m.gene_ids)
    ]
    report["rejected_gene_ids"] = [m.gene_ids[k] for k in np.flatnonzero(rej)]
    report["R"] = int(rej.sum())
    table = _tsv(["id", "tau", "tau_classical", "p_value", "has_ties", "rejected"],
                 [[r["id"], repr(r["tau"]), repr(r["tau_classical"]), repr(r["p_value"]),
                   int(r["has_ties"]), int(r["rejected"])] for r in report["genes"]])
    return report, table


def cmd_calibrate(args):
    _check_unit("alpha", args.alpha)
    _check_unit("eta", args.eta)
    if args.tau:
        taus = np.asarray(args.tau, dtype=float)
        if np.any(np.diff(taus) <= 0) or np.any(taus <= 0) or np.any(taus >= 1):
            raise UsageError("--tau values must be increasing and inside (0, 1)")
        if args.max_j:
            taus = taus[: args.max_j]
        grid_info = {"tau": taus.tolist(), "cutoffs": None}
        if args.K is None:
            raise UsageError("--K is required with --tau")
        K = args.K
    else:
        if args.design:
            d = build_design_structure(sort_design(_parse_design(args.design))[0])
            K = args.K
        elif args.input:
            m = ingest(args.input)
            d = build_design_structure(m.design)
            K = args.K or m.K
        else:
            raise UsageError("give --tau, --design or an input file")
        if K is None:
            raise UsageError("--K is required with --design")
        nd = _null_from_args(args, d)
        grid = threshold_grid(nd, args.eta, args.max_j)
        taus = grid.taus
        grid_info = grid.to_dict()
    rv = detection.calibrate_critical_vector(taus, K, args.alpha)
    report = {"command": "calibrate", "K": K, "alpha": args.alpha, "J": rv.J, "grid": grid_info,
              **rv.to_dict(), "warnings": []}
    table = _tsv(["j", "tau", "drift", "r"],
                 [[j + 1, repr(float(taus[j])), repr(rv.drift[j]), rv.r[j]] for j in range(rv.J)])
    return report, table


def cmd_simulate(args):
    _check_unit("alpha", args.alpha)
    try:
        settings = read_config(args.config) if args.config else {}
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read config: {exc}") from None
    for item in args.set or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        settings[key.strip()] = val
    for key in ("eta", "max_j", "seed"):
        val = getattr(args, key)
        if val is not None:
            settings[key] = val
    if args.null_given:
        settings["null"] = args.null
    if args.mc_reps != DEFAULT_MC_REPS:
        settings["mc_reps"] = args.mc_reps
    if "seed" not in settings:
        raise UsageError("simulate needs --seed (or seed in the config file)")
    try:
        cfg = SimConfig.from_mapping(settings)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad simulation settings: {exc}") from None
    beta = None
    if args.procedure == "chen-stein" and cfg.K1 and cfg.theta > 0 and args.beta_draws:
        d = build_design_structure(cfg.design_variates())
        nd = null_for(d, cfg.null, reps=cfg.mc_reps, seed=cfg.seed)
        grid = threshold_grid(nd, cfg.eta, cfg.max_j)
        beta = alternative_tail_rates(cfg, grid, draws=args.beta_draws)
    rep = run_study(cfg, args.procedure, args.alpha, beta=beta)
    if args.tallies:
        _write(rep.tallies_tsv(), args.tallies)
    report = {"command": "simulate", **rep.to_dict()}
    return report, rep.tallies_tsv()


def _parse_design(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--design must be comma-separated numbers, got {text!r}") from None


def cmd_nulldist(args):
    if args.design:
        d = build_design_structure(sort_design(_parse_design(args.design))[0])
    elif args.input:
        d = build_design_structure(ingest(args.input).design)
    else:
        raise UsageError("give --design or an input file")
    nd = _null_from_args(args, d)
    report = {"command": "nulldist", **nd.to_dict(), "warnings": []}
    table = _tsv(["score", "mass_point", "prob"],
                 [[int(s), repr(float(a)), repr(float(p))] for s, a, p in zip(nd.scores, nd.mass_points, nd.probs)])
    return report, table


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--alpha", type=float, default=0.05)
    common.add_argument("--null", choices=("exact", "mc"), default="exact")
    common.add_argument("--mc-reps", type=int, default=DEFAULT_MC_REPS)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--budget", type=int, default=DEFAULT_BUDGET,
                        help="maximum arrangements for exact enumeration")
    common.add_argument("--eta", type=float, default=None, help="largest grid tail (default 0.1)")
    common.add_argument("--max-j", type=int, default=None)
    common.add_argument("--out", default=None)
    common.add_argument("--format", choices=("json", "tsv"), default="json")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="tau-screen", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("screen", parents=[common], help="per-gene tau, p-values and rejections")
    s.add_argument("input")
    s.add_argument("--procedure", choices=mht.PROCEDURES, default="bh")
    s.add_argument("--null-file", default=None, help="serialized null from `nulldist`")
    s.add_argument("--neighborhoods", default=None, help="dependence graph, lines 'i: j1 j2 ...'")
    s.add_argument("--perms", type=int, default=200, help="array permutations for neighbourhood b2")
    s.add_argument("--beta", type=float, nargs="+", default=None, help="non-null tail rates per grid point")
    s.add_argument("--k1", type=int, default=None, help="assumed number of non-null genes")
    s.set_defaults(func=cmd_screen)

    c = sub.add_parser("calibrate", parents=[common], help="Poisson-calibrated critical vector")
    c.add_argument("input", nargs="?")
    c.add_argument("--K", type=int, default=None)
    c.add_argument("--tau", type=float, nargs="+", default=None)
    c.add_argument("--design", default=None)
    c.set_defaults(func=cmd_calibrate)

    m = sub.add_parser("simulate", parents=[common], help="Monte Carlo error-rate study")
    m.add_argument("--config", default=None, help="JSON or key=value file")
    m.add_argument("--set", action="append", metavar="KEY=VALUE")
    m.add_argument("--procedure", choices=mht.PROCEDURES, default="bh")
    m.add_argument("--beta-draws", type=int, default=0,
                   help="draws for the non-null tail-rate oracle (chen-stein approximations)")
    m.add_argument("--tallies", default=None, help="write per-replicate tallies as TSV")
    m.set_defaults(func=cmd_simulate)

    n = sub.add_parser("nulldist", parents=[common], help="exact or Monte Carlo null law")
    n.add_argument("input", nargs="?")
    n.add_argument("--design", default=None)
    n.set_defaults(func=cmd_nulldist)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(argv)
    args.null_given = any(a == "--null" or a.startswith("--null=") for a in argv)
    if args.command != "simulate" and args.eta is None:
        args.eta = 0.1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(levelname)s: %(message)s", stream=sys.stderr)
    try:
        report, table = args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"tau-screen: error: {exc}", file=sys.stderr)
        return 1
    except (TauScreenError, OSError) as exc:
        print(f"tau-screen: data error: {exc}", file=sys.stderr)
        return 2
    for w in report.get("warnings", []):
        print(f"tau-screen: warning: {w}", file=sys.stderr)
    if args.format == "tsv":
        _write(table, args.out)
    else:
        _write(json.dumps(report, indent=2, default=_json_default) + "\n", args.out)
    return 0


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


if __name__ == "__main__":
    sys.exit(main())
