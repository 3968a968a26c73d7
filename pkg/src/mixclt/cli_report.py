"""Command-line entry point.

Subcommands: coeffs, variance, verify, clt, family, selftest. Exit codes:
0 all requested checks passed, 1 a mathematical check failed, 2 usage or
input error. Reports are deterministic byte for byte: rerunning the same
invocation rewrites identical files, and the Monte-Carlo outputs do not
depend on --threads.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import reporting
from .chain_model import (
    ChainSpec,
    compensated_dot,
    enumerate_paths,
    load_spec,
    path_observation_sums,
    validate,
)
from .coefficients import coefficient_report
from .errors import MixCltError, SpecFileError
from .families import (
    TriangularFamily,
    builtin_catalog,
    family_random,
    family_two_state,
    parse_family,
)
from .clt_harness import ks_distance, mc_normalized_sums, run_experiment
from .moments import (
    REL_SLACK,
    admissible_exp_t_values,
    exp_moment_checks,
    martingale_identity_check,
    moment_report,
    partial_sum_variance,
    partial_sum_variance_oracle,
    tail_conditional,
    tail_moment_inequality_check,
    tail_moment_sum,
    tail_variance_lower_bound_check,
    variance_bounds_check,
    delta_variance_bounds_check,
    variance_sum,
)
from .rng import Stream

MASTER_SEED = 42424242       # pins the selftest corpus
SELFTEST_SPECS = 150
VERIFY_CHECKS = ("variance_bounds", "delta_bounds", "tail_lower",
                 "power_moments", "exp_moments", "martingale")
MAX_SEED = 2 ** 64 - 1


@dataclass(frozen=True)
class RunConfig:
    """Validated common run options."""

    n_grid: List[int]
    replicates: int
    seed: int
    threads: int

    def __post_init__(self):
        if self.replicates < 1:
            raise MixCltError(f"--replicates must be >= 1, got "
                              f"{self.replicates}")
        if not 0 <= self.seed <= MAX_SEED:
            raise MixCltError("--seed must be an unsigned 64-bit value")
        if any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise MixCltError(f"--n grid must be strictly increasing, "
                              f"got {self.n_grid}")
        if self.threads < 1:
            raise MixCltError(f"--threads must be >= 1, got {self.threads}")


def _ints(text: str) -> List[int]:
    try:
        return [int(p) for p in text.split(",") if p]
    except ValueError:
        raise MixCltError(f"expected comma-separated integers, got {text!r}")


def _floats(text: str) -> List[float]:
    try:
        return [float(p) for p in text.split(",") if p]
    except ValueError:
        raise MixCltError(f"expected comma-separated numbers, got {text!r}")


def _out_dir(args) -> Path:
    d = args.out_dir or os.environ.get("MIXCLT_OUT_DIR") or "."
    path = Path(d)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _out_formats(args) -> List[str]:
    if not args.out:
        return []
    formats = []
    for chunk in args.out:
        formats += [p for p in chunk.split(",") if p]
    unknown = set(formats) - {"json", "csv", "plot"}
    if unknown:
        raise MixCltError(f"unknown output formats {sorted(unknown)}; "
                          "choose from json, csv, plot")
    return formats


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")
    print(f"wrote {path}")


def _load_validated_spec(args) -> ChainSpec:
    if not args.spec:
        raise MixCltError("this subcommand needs --spec PATH")
    return validate(load_spec(args.spec), center=args.center)


def _print_checks(checks) -> bool:
    failed = False
    for c in checks:
        if c.status == reporting.SKIPPED:
            print(f"SKIP  {c.name}: {c.note}")
            continue
        tag = "ok  " if c.status == reporting.PASS else "FAIL"
        print(f"{tag}  {c.name}: lhs={reporting.fmt17(c.lhs)} "
              f"rhs={reporting.fmt17(c.rhs)} margin={reporting.fmt17(c.margin)}")
        failed |= c.failed
    return failed


# --- subcommands --------------------------------------------------------------

def cmd_coeffs(args) -> int:
    spec = _load_validated_spec(args)
    report = coefficient_report(spec)
    print(f"rho1    = {reporting.fmt17(report.rho1)}")
    print(f"lambda  = {reporting.fmt17(report.lambda_)}")
    print(f"delta1  = {reporting.fmt17(report.delta_one)}")
    print(f"rho_k   = {[round(v, 12) for v in report.rho_k.tolist()]}")
    failed = _print_checks(report.checks)
    formats = _out_formats(args)
    out = _out_dir(args)
    if "json" in formats:
        _write(out / "coeffs.json", report.to_json())
    if "csv" in formats:
        _write(out / "coeffs.csv", report.to_csv())
    return 1 if failed else 0


def _identity_checks(spec: ChainSpec, sigma2: float, oracle: float,
                     enum: Optional[float], resid) -> List:
    checks = [reporting.check(
        "sigma2_matches_covariance_oracle", abs(sigma2 - oracle), 0.0,
        REL_SLACK * max(1.0, abs(sigma2)))]
    if enum is not None:
        checks.append(reporting.check(
            "sigma2_matches_enumeration", abs(sigma2 - enum), 0.0,
            1e-10 * max(1.0, abs(sigma2))))
    checks.append(reporting.check(
        "martingale_moment_identity", resid.moment, 0.0,
        REL_SLACK * max(1.0, sigma2)))
    if resid.pathwise is not None:
        checks.append(reporting.check(
            "martingale_pathwise_telescoping", resid.pathwise, 0.0, 1e-10))
    return checks


def cmd_variance(args) -> int:
    spec = _load_validated_spec(args)
    b2 = variance_sum(spec)
    sigma2 = partial_sum_variance(spec)
    oracle = partial_sum_variance_oracle(spec)
    enum = None
    if spec.m ** spec.n <= 100_000:
        paths, probs = enumerate_paths(spec, cap=100_000)
        enum = compensated_dot(probs, path_observation_sums(spec, paths) ** 2)
    resid = martingale_identity_check(spec, enumeration_cap=100_000)
    tc = tail_conditional(spec)
    ea = {float(p): tail_moment_sum(spec, tc, p) for p in args.p}

    print(f"b2           = {reporting.fmt17(b2)}")
    print(f"sigma2       = {reporting.fmt17(sigma2)}")
    print(f"sigma2_oracle= {reporting.fmt17(oracle)}")
    if enum is not None:
        print(f"sigma2_enum  = {reporting.fmt17(enum)}")
    for p, v in ea.items():
        print(f"sum E|A|^{p:g}  = {reporting.fmt17(v)}")
    checks = _identity_checks(spec, sigma2, oracle, enum, resid)
    failed = _print_checks(checks)

    formats = _out_formats(args)
    out = _out_dir(args)
    payload = {
        "b2": b2, "sigma2": sigma2, "sigma2_oracle": oracle,
        "sigma2_enum": enum,
        "EA_p": {f"{p:g}": v for p, v in ea.items()},
        "mart_residual": resid.moment, "mart_pathwise": resid.pathwise,
        "checks": [c.to_dict() for c in checks],
    }
    if "json" in formats:
        _write(out / "variance.json", reporting.dump_json(payload))
    if "csv" in formats:
        _write(out / "variance.csv", reporting.csv_lines(
            ("check_name", "lhs", "rhs", "margin", "status"),
            [(c.name, c.lhs, c.rhs, c.margin, c.status) for c in checks]))
    return 1 if failed else 0


def cmd_verify(args) -> int:
    spec = _load_validated_spec(args)
    selected = set(args.checks.split(",")) if args.checks else {"all"}
    if "all" in selected:
        selected = set(VERIFY_CHECKS)
    unknown = selected - set(VERIFY_CHECKS)
    if unknown:
        raise MixCltError(f"unknown checks {sorted(unknown)}; "
                          f"choose from {', '.join(VERIFY_CHECKS)} or all")
    tol = args.tol_rel
    checks = []
    if "variance_bounds" in selected:
        checks += variance_bounds_check(spec, rel_slack=tol)
    if "delta_bounds" in selected:
        checks += delta_variance_bounds_check(spec, rel_slack=tol)
    if "tail_lower" in selected:
        checks.append(tail_variance_lower_bound_check(spec, rel_slack=tol))
    if "power_moments" in selected:
        for p in args.p:
            checks += tail_moment_inequality_check(spec, p, rel_slack=tol)
    if "exp_moments" in selected:
        if spec.m ** spec.n <= args.enum_cap:
            ts = admissible_exp_t_values(spec)
            checks += exp_moment_checks(spec, ts,
                                        enumeration_cap=args.enum_cap,
                                        rel_slack=tol)
        else:
            checks.append(reporting.skipped(
                "exp_moment", "path space exceeds enumeration cap"))
    if "martingale" in selected:
        resid = martingale_identity_check(spec,
                                          enumeration_cap=args.enum_cap)
        sigma2 = partial_sum_variance(spec)
        checks.append(reporting.check(
            "martingale_moment_identity", resid.moment, 0.0,
            REL_SLACK * max(1.0, sigma2)))
        if resid.pathwise is not None:
            checks.append(reporting.check(
                "martingale_pathwise_telescoping", resid.pathwise, 0.0,
                1e-10))
    failed = _print_checks(checks)
    formats = _out_formats(args)
    out = _out_dir(args)
    if "json" in formats:
        _write(out / "verify.json", reporting.dump_json(
            [c.to_dict() for c in checks]))
    if "csv" in formats:
        _write(out / "verify.csv", reporting.csv_lines(
            ("check_name", "lhs", "rhs", "margin", "status"),
            [(c.name, c.lhs, c.rhs, c.margin, c.status) for c in checks]))
    return 1 if failed else 0


def cmd_clt(args) -> int:
    if not args.family:
        raise MixCltError("clt needs --family NAME[:PARAMS]")
    family = parse_family(args.family, c_value=args.c, seed=args.seed)
    cfg = RunConfig(n_grid=_ints(args.n), replicates=args.replicates,
                    seed=args.seed, threads=args.threads)
    result = run_experiment(family, cfg.n_grid, cfg.replicates, cfg.seed,
                            eps=_floats(args.eps), threads=cfg.threads)
    print(f"family {result.family}")
    for r in result.rows:
        if r.error is not None:
            print(f"n={r.n}: ERROR {r.error}")
            continue
        print(f"n={r.n}: lambda={r.lam:.6g} ks={r.ks:.6g} "
              f"var={r.sample_variance:.6g} flags=[{r.flags()}]")
    for t in result.traces:
        print(f"trace {t.name}: verdict {t.verdict} ({result.verdict_basis})")
    formats = _out_formats(args)
    out = _out_dir(args)
    if "json" in formats:
        _write(out / "clt.json", result.to_json())
    if "csv" in formats:
        _write(out / "clt.csv", result.to_csv())
    if "plot" in formats:
        _write(out / "clt_ks.dat", result.gnuplot_ks())
        for name in ("cond_dob", "cond_log2", "cond_cd"):
            _write(out / f"clt_{name}.dat", result.gnuplot_condition(name))
    return 0 if any(r.error is None for r in result.rows) else 2


def cmd_family(args) -> int:
    if not args.family:
        for name, desc in builtin_catalog().items():
            print(f"{name:14s} {desc}")
        return 0
    family = parse_family(args.family, c_value=args.c, seed=args.seed)
    print(f"name: {family.name}")
    print(f"kind: {family.kind}")
    print(f"description: {family.description}")
    if family.analytic is not None:
        grid = _ints(args.n) if args.n else [2, 3, 5, 8, 13, 21]
        keys = ("rho1", "lambda", "delta1", "b2", "sigma2", "C")
        print("n " + " ".join(f"{k:>12s}" for k in keys))
        for n in grid:
            a = family.analytic(n)
            print(f"{n} " + " ".join(f"{a[k]:12.6g}" for k in keys))
    return 0


def _selftest_corpus(master_seed: int, count: int):
    picker = Stream.derive(master_seed, 0)
    for i in range(count):
        m = 2 + int(picker.uniform() * 3)        # 2..4
        n = 2 + int(picker.uniform() * 11)       # 2..12
        fam = family_random(m, seed=master_seed + i + 1, mixing_floor=0.05)
        yield fam.make_row(n)


def cmd_selftest(args) -> int:
    master = args.seed if args.seed is not None else MASTER_SEED
    tally = {"pass": 0, "fail": 0, "skipped": 0}
    failures: List[dict] = []
    for spec in _selftest_corpus(master, args.specs):
        checks = list(coefficient_report(spec).checks)
        checks += moment_report(spec, enumeration_cap=20_000).bound_checks
        resid = martingale_identity_check(spec, enumeration_cap=20_000)
        sigma2 = partial_sum_variance(spec)
        checks.append(reporting.check(
            "martingale_moment_identity", resid.moment, 0.0,
            REL_SLACK * max(1.0, sigma2)))
        if resid.pathwise is not None:
            checks.append(reporting.check(
                "martingale_pathwise_telescoping", resid.pathwise, 0.0,
                1e-10))
        for c in checks:
            tally[c.status] += 1
            if c.failed:
                failures.append({"spec": spec.name, **c.to_dict()})

    # threaded Monte-Carlo determinism demo: same draw must be bitwise
    # identical for any worker count
    fam = family_two_state(lambda n: 0.3, rate_desc="0.3")
    sums_1 = mc_normalized_sums(fam, 500, 4000, master, threads=1)
    sums_t = mc_normalized_sums(fam, 500, 4000, master, threads=args.threads)
    bitwise = bool(np.array_equal(sums_1, sums_t))
    demo_ks = ks_distance(sums_1)

    payload = {
        "master_seed": master,
        "specs": args.specs,
        "checks": tally,
        "failures": failures,
        "mc_demo": {
            "family": fam.name, "n": 500, "replicates": 4000,
            "ks": demo_ks,
            "bitwise_equal_across_threads": bitwise,
        },
    }
    print(f"selftest: {args.specs} specs, master seed {master}")
    print(f"checks: {tally['pass']} pass, {tally['fail']} fail, "
          f"{tally['skipped']} skipped")
    print(f"mc demo ks={demo_ks:.6g} bitwise_equal={bitwise}")
    formats = _out_formats(args)
    out = _out_dir(args)
    if "json" in formats:
        _write(out / "selftest.json", reporting.dump_json(payload))
    if "csv" in formats:
        _write(out / "selftest.csv", reporting.csv_lines(
            ("spec", "check_name", "lhs", "rhs", "margin", "status"),
            [(f["spec"], f["name"], f["lhs"], f["rhs"], f["margin"],
              f["status"]) for f in failures]))
    return 1 if (tally["fail"] or not bitwise) else 0


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixclt",
        description="Mixing coefficients, variance bounds and CLT "
                    "experiments for non-homogeneous Markov chain rows.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, spec=False, mc=False):
        p.add_argument("--out", action="append", metavar="FMT[,FMT]",
                       help="output formats: json, csv, plot")
        p.add_argument("--out-dir", metavar="PATH",
                       help="output directory (fallback: $MIXCLT_OUT_DIR)")
        p.add_argument("--threads", type=int,
                       default=max(1, os.cpu_count() or 1),
                       help="worker cap; results do not depend on it")
        if spec:
            p.add_argument("--spec", metavar="PATH",
                           help="chain-spec JSON file")
            p.add_argument("--center", action="store_true",
                           help="center observations against exact marginals")
            p.add_argument("--tol-rel", type=float, default=REL_SLACK,
                           help="relative slack for inequality checks")
            p.add_argument("--p", type=_floats, default=[2.0, 2.5, 3.0, 4.0],
                           metavar="LIST", help="moment orders (>= 2)")
            p.add_argument("--enum-cap", type=int, default=100_000,
                           help="path-enumeration cap for exact cross-checks")
        if mc:
            p.add_argument("--family", metavar="NAME[:PARAMS]")
            p.add_argument("--c", type=float, default=None,
                           help="value of the rate symbol c")
            p.add_argument("--n", metavar="LIST", help="row lengths")
            p.add_argument("--replicates", type=int, default=20000)
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--eps", default="1,0.1,0.01", metavar="LIST",
                           help="Lindeberg epsilon sweep")

    p = sub.add_parser("coeffs", help="coefficient report for a spec")
    common(p, spec=True)
    p.set_defaults(handler=cmd_coeffs)

    p = sub.add_parser("variance", help="variance/moment report for a spec")
    common(p, spec=True)
    p.set_defaults(handler=cmd_variance)

    p = sub.add_parser("verify", help="full inequality suite for a spec")
    common(p, spec=True)
    p.add_argument("--checks", default="all", metavar="LIST|all",
                   help=f"subset of: {', '.join(VERIFY_CHECKS)}")
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("clt", help="Monte-Carlo CLT experiment")
    common(p, mc=True)
    p.set_defaults(handler=cmd_clt)

    p = sub.add_parser("family", help="list or describe built-in families")
    common(p, mc=True)
    p.set_defaults(handler=cmd_family)

    p = sub.add_parser("selftest",
                       help="randomized property corpus, pinned master seed")
    common(p)
    p.add_argument("--specs", type=int, default=SELFTEST_SPECS)
    p.add_argument("--seed", type=int, default=None,
                   help=f"master seed (default {MASTER_SEED})")
    p.set_defaults(handler=cmd_selftest)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.handler(args)
    except SpecFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MixCltError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
