"""Condition evaluators, truncation, Monte-Carlo runs and normality tests.

The sufficient conditions for asymptotic normality of the normalized sums
are evaluated as exact numeric sequences over a grid of row lengths; the
Monte-Carlo side draws the normalized sums themselves from reproducible
counter-based streams and measures the Kolmogorov-Smirnov distance to the
standard normal law. Verdicts over a grid are heuristic trend labels, not
limits: they are marked as such in every report.

Degenerate-regime conventions (applied wherever |log lambda| appears in a
denominator): lambda = 1 means one-step independence, where the formulas
are off-domain but the limit behavior is classical, so evaluators return
their trivial value with flag "degenerate_independent" instead of NaN;
lambda = 0 is an error. A contraction coefficient of 1 flags the value
+inf ("degenerate_contraction"): that is precisely the regime where the
contraction-based criterion is silent.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtr

from . import reporting
from .chain_model import (
    ChainSpec,
    center_rows,
    marginals,
    observation_bound,
)
from .coefficients import delta1 as delta_one_of
from .coefficients import rho1_lambda
from .errors import DegenerateMixing, EmptySample, MixCltError, ZeroVariance
from .families import TriangularFamily
from .moments import partial_sum_variance, variance_sum
from .rng import derive_states, next_uniforms

CHUNK = 4096  # replicate chunk size; fixed so results never depend on threads


@dataclass(frozen=True)
class ConditionValue:
    """A condition evaluator result: the value plus a degeneracy flag."""

    value: float
    flag: Optional[str] = None


# --- scalar condition formulas ------------------------------------------------

def _cond_dob_value(C: float, lam: float, sigma: float) -> ConditionValue:
    if sigma <= 0.0:
        raise ZeroVariance("sigma_n = 0")
    if lam <= 0.0:
        raise DegenerateMixing("lambda = 0: fully coupled adjacent states")
    if lam >= 1.0:
        return ConditionValue(0.0, "degenerate_independent")
    if math.isinf(C):
        return ConditionValue(math.inf, "unbounded_observation")
    return ConditionValue(C * abs(math.log(lam)) / (lam * sigma))


def _cond_log2_value(lam: float, n: int) -> ConditionValue:
    if lam <= 0.0:
        raise DegenerateMixing("lambda = 0: fully coupled adjacent states")
    if lam >= 1.0:
        return ConditionValue(math.inf, "degenerate_independent")
    return ConditionValue(lam ** 3 * n / math.log(lam) ** 2)


def _cond_cd_value(C: float, alpha: float, b2: float) -> ConditionValue:
    if alpha <= 0.0:
        return ConditionValue(math.inf, "degenerate_contraction")
    if math.isinf(C):
        return ConditionValue(math.inf, "unbounded_observation")
    if b2 <= 0.0:
        raise ZeroVariance("b_n = 0")
    return ConditionValue(C ** 2 / (alpha ** 3 * b2))


def condition_dob(spec: ChainSpec) -> ConditionValue:
    """C_n |log lambda_n| / (lambda_n sigma_n), all quantities exact."""
    _, lam = rho1_lambda(spec)
    return _cond_dob_value(observation_bound(spec), lam,
                           math.sqrt(partial_sum_variance(spec)))


def condition_log2(spec: ChainSpec) -> ConditionValue:
    """lambda_n^3 n / |log lambda_n|^2 (grows iff mixing decays slowly
    enough relative to the row length)."""
    _, lam = rho1_lambda(spec)
    return _cond_log2_value(lam, spec.n)


def condition_dobrushin_cd(spec: ChainSpec) -> ConditionValue:
    """C_n^2 / (alpha_n^3 b_n^2) with alpha_n = 1 - delta_1."""
    return _cond_cd_value(observation_bound(spec),
                          1.0 - delta_one_of(spec), variance_sum(spec))


def h_weight(lam: float) -> float:
    """lambda / |log lambda| (the sigma-normalized truncation weight)."""
    return lam / abs(math.log(lam))


def h_prime_weight(lam: float) -> float:
    """lambda^(3/2) / |log lambda| (the b-normalized truncation weight)."""
    return lam ** 1.5 / abs(math.log(lam))


def _lindeberg_sum(spec: ChainSpec, threshold: float) -> float:
    pi = marginals(spec).pi
    mask = np.abs(spec.f) > threshold
    return math.fsum(np.einsum("ij,ij->i", pi, spec.f ** 2 * mask))


def lindeberg_functional(spec: ChainSpec, eps: float) -> ConditionValue:
    """Exact truncated-second-moment functional

        (1/(lambda sigma^2)) sum_i E X_i^2 1{|X_i| > eps h(lambda) sigma}

    with h(lambda) = lambda/|log lambda|. At lambda = 1 the weight is
    off-domain; the indicator is conventionally empty and the value 0,
    flagged degenerate_independent.
    """
    if eps <= 0.0:
        raise MixCltError(f"eps must be positive, got {eps}")
    _, lam = rho1_lambda(spec)
    sigma2 = partial_sum_variance(spec)
    if sigma2 <= 0.0:
        raise ZeroVariance("sigma_n = 0")
    if lam <= 0.0:
        raise DegenerateMixing("lambda = 0: fully coupled adjacent states")
    if lam >= 1.0:
        return ConditionValue(0.0, "degenerate_independent")
    threshold = eps * h_weight(lam) * math.sqrt(sigma2)
    return ConditionValue(_lindeberg_sum(spec, threshold) / (lam * sigma2))


def lindeberg_functional_b(spec: ChainSpec, eps: float) -> ConditionValue:
    """Variant normalized by b_n with weight h'(lambda) =
    lambda^(3/2)/|log lambda|:

        (1/(lambda^2 b^2)) sum_i E X_i^2 1{|X_i| > eps h'(lambda) b}.
    """
    if eps <= 0.0:
        raise MixCltError(f"eps must be positive, got {eps}")
    _, lam = rho1_lambda(spec)
    b2 = variance_sum(spec)
    if b2 <= 0.0:
        raise ZeroVariance("b_n = 0")
    if lam <= 0.0:
        raise DegenerateMixing("lambda = 0: fully coupled adjacent states")
    if lam >= 1.0:
        return ConditionValue(0.0, "degenerate_independent")
    threshold = eps * h_prime_weight(lam) * math.sqrt(b2)
    return ConditionValue(_lindeberg_sum(spec, threshold) / (lam ** 2 * b2))


def truncate(spec: ChainSpec, T: float) -> Tuple[ChainSpec, ChainSpec]:
    """Split the observations at level T into a bounded re-centered part
    and its complement.

    The truncated part is f 1{|f| <= T} minus its mean under the exact
    step marginal; the tail part is the state-wise difference, so the two
    parts add back to f exactly per state. Both share the transition
    structure.
    """
    if T <= 0.0:
        raise MixCltError(f"truncation level must be positive, got {T}")
    pi = marginals(spec).pi
    clipped = np.where(np.abs(spec.f) <= T, spec.f, 0.0)
    f_trunc = center_rows(pi, clipped)
    f_tail = spec.f - f_trunc
    mk = lambda f_part, tag: ChainSpec(
        spec.m, spec.n, spec.initial, spec.transitions, f_part,
        None if spec.name is None else f"{spec.name}:{tag}")
    return mk(f_trunc, f"trunc@{T:g}"), mk(f_tail, f"tail@{T:g}")


# --- normality distance -------------------------------------------------------

def normal_cdf(x):
    """Standard normal CDF Phi(x) = erfc(-x/sqrt(2))/2, evaluated through
    the C library's complementary error function (absolute error well
    below 1e-13; cross-checked against 50-digit arithmetic in the tests).
    """
    return ndtr(x)


def ks_distance(sample: np.ndarray) -> float:
    """Exact sup-distance between the sample's empirical CDF and Phi.

    Both one-sided gaps are evaluated at every sorted sample point, which
    is where the supremum of |F_emp - Phi| is attained.
    """
    sample = np.asarray(sample, dtype=np.float64)
    if sample.size == 0:
        raise EmptySample("cannot measure a distribution distance on "
                          "an empty sample")
    xs = np.sort(sample)
    k = xs.size
    F = normal_cdf(xs)
    grid = np.arange(1, k + 1, dtype=np.float64)
    d_plus = float(np.max(grid / k - F))
    d_minus = float(np.max(F - (grid - 1.0) / k))
    return max(d_plus, d_minus, 0.0)


# --- Monte Carlo --------------------------------------------------------------

def chain_sum_kernel(spec: ChainSpec) -> Callable[[int, np.ndarray], np.ndarray]:
    """Vectorized observation-sum sampler for a finite row.

    The returned kernel maps (seed, replicate indices) to the observation
    sums of one path per replicate, consuming exactly one uniform per
    step per replicate, with draws identical to sample_path on the
    per-replicate stream.
    """
    cdf0 = np.cumsum(spec.initial)
    cdfs = np.cumsum(spec.transitions, axis=2)
    f = spec.f
    m = spec.m

    def kernel(seed: int, indices: np.ndarray) -> np.ndarray:
        states = derive_states(seed, indices)
        u = next_uniforms(states)
        x = np.minimum((u[:, None] >= cdf0[None, :]).sum(axis=1), m - 1)
        S = f[0][x].copy()
        for i in range(spec.n - 1):
            u = next_uniforms(states)
            x = np.minimum((u[:, None] >= cdfs[i][x]).sum(axis=1), m - 1)
            S += f[i + 1][x]
        return S

    return kernel


def _collect_sums(kernel, replicates: int, seed: int,
                  threads: int) -> np.ndarray:
    """Run the kernel over fixed replicate chunks; aggregation order and
    chunk layout are independent of the worker count, so the result is
    bitwise identical for any ``threads``."""
    spans = [(lo, min(lo + CHUNK, replicates))
             for lo in range(0, replicates, CHUNK)]

    def work(span):
        lo, hi = span
        return kernel(seed, np.arange(lo, hi, dtype=np.uint64))

    if threads <= 1 or len(spans) <= 1:
        parts = [work(s) for s in spans]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, spans))
    return np.concatenate(parts) if parts else np.empty(0)


def _sigma_for(family: TriangularFamily, n: int,
               spec: Optional[ChainSpec]) -> Tuple[float, str]:
    if family.kind == "finite":
        sigma2 = partial_sum_variance(spec)
        source = "exact"
    else:
        sigma2 = family.analytic(n)["sigma2"]
        source = "analytic"
    if sigma2 <= 0.0:
        raise ZeroVariance(f"sigma_n^2 = {sigma2} at n = {n}")
    return math.sqrt(sigma2), source


def mc_normalized_sums(family: TriangularFamily, n: int, replicates: int,
                       seed: int, threads: int = 1) -> np.ndarray:
    """Monte-Carlo sample of the normalized observation sums S_n/sigma_n.

    Replicate r draws its path from the counter-based stream keyed by
    (seed, r); sigma_n is exact for finite families and analytic for
    sampler families. Output is bitwise deterministic for any thread
    count.
    """
    if replicates < 1:
        raise MixCltError(f"need at least one replicate, got {replicates}")
    spec = family.make_row(n) if family.kind == "finite" else None
    sigma, _ = _sigma_for(family, n, spec)
    kernel = (chain_sum_kernel(spec) if family.kind == "finite"
              else family.sampler_factory(n))
    return _collect_sums(kernel, replicates, seed, threads) / sigma


# --- experiments --------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentRow:
    """Per-n record of an experiment run."""

    n: int
    replicates: int
    seed: int
    normalization: str                      # "exact" or "analytic"
    lam: float = math.nan
    sigma: float = math.nan
    b: float = math.nan
    C: float = math.nan
    ks: float = math.nan
    sample_mean: float = math.nan
    sample_variance: float = math.nan
    sample_excess_kurtosis: float = math.nan
    conditions: Dict[str, ConditionValue] = field(default_factory=dict)
    lindeberg: Dict[str, ConditionValue] = field(default_factory=dict)
    error: Optional[str] = None

    def flags(self) -> str:
        items = [f"{k}:{cv.flag}" for k, cv in sorted(self.conditions.items())
                 if cv.flag]
        return ";".join(items)


@dataclass(frozen=True)
class ConditionTrace:
    """One condition evaluated along the grid plus a trend verdict.

    The verdict is a heuristic label over the evaluated grid (->0, ->inf,
    bounded), not a proof of a limit.
    """

    name: str
    records: List[dict]
    verdict: str


def _classify_trend(values: List[float], flags: List[Optional[str]]) -> str:
    live = [(v, fl) for v, fl in zip(values, flags) if not math.isnan(v)]
    if not live:
        return "no-data"
    if all(fl is not None for _, fl in live):
        return f"degenerate ({live[0][1]})"
    vals = [v for v, _ in live]
    nondecreasing = all(a <= b * (1 + 1e-12) for a, b in zip(vals, vals[1:]))
    nonincreasing = all(a * (1 + 1e-12) >= b for a, b in zip(vals, vals[1:]))
    first, last = vals[0], vals[-1]
    if math.isinf(last) or (nondecreasing and first > 0 and last >= 2 * first):
        return "->inf"
    if nonincreasing and (last <= first / 2 or last == 0.0):
        return "->0"
    return "bounded"


@dataclass(frozen=True)
class ExperimentResult:
    """Full record of one experiment: configuration, per-n rows, traces."""

    family: str
    n_grid: List[int]
    replicates: int
    seed: int
    eps: List[float]
    rows: List[ExperimentRow]
    traces: List[ConditionTrace]
    verdict_basis: str = "heuristic-trend"

    def to_dict(self) -> dict:
        def cv_dict(cv: ConditionValue) -> dict:
            return {"value": cv.value, "flag": cv.flag}

        return {
            "family": self.family,
            "n_grid": self.n_grid,
            "replicates": self.replicates,
            "seed": self.seed,
            "eps": self.eps,
            "verdict_basis": self.verdict_basis,
            "rows": [{
                "n": r.n,
                "replicates": r.replicates,
                "seed": r.seed,
                "normalization": r.normalization,
                "lambda": r.lam,
                "sigma": r.sigma,
                "b": r.b,
                "C": r.C,
                "ks": r.ks,
                "sample_mean": r.sample_mean,
                "sample_variance": r.sample_variance,
                "sample_excess_kurtosis": r.sample_excess_kurtosis,
                "conditions": {k: cv_dict(v)
                               for k, v in sorted(r.conditions.items())},
                "lindeberg": {k: cv_dict(v)
                              for k, v in sorted(r.lindeberg.items())},
                "error": r.error,
            } for r in self.rows],
            "traces": [{
                "name": t.name,
                "verdict": t.verdict,
                "records": t.records,
            } for t in self.traces],
        }

    def to_json(self) -> str:
        return reporting.dump_json(self.to_dict())

    def to_csv(self) -> str:
        def cval(row, name):
            cv = row.conditions.get(name)
            return math.nan if cv is None else cv.value

        rows = [(r.n, r.lam, r.sigma, r.ks, cval(r, "cond_dob"),
                 cval(r, "cond_log2"), cval(r, "cond_cd"), r.flags())
                for r in self.rows]
        return reporting.csv_lines(
            ("n", "lambda", "sigma", "ks", "cond_dob", "cond_log2",
             "cond_cd", "flags"), rows)

    def gnuplot_ks(self) -> str:
        lines = ["# n ks"]
        lines += [f"{r.n} {reporting.fmt17(r.ks)}" for r in self.rows
                  if r.error is None]
        return "\n".join(lines) + "\n"

    def gnuplot_condition(self, name: str) -> str:
        lines = [f"# n {name}"]
        for r in self.rows:
            cv = r.conditions.get(name)
            if r.error is None and cv is not None:
                lines.append(f"{r.n} {reporting.fmt17(cv.value)}")
        return "\n".join(lines) + "\n"


def _exact_row_quantities(spec: ChainSpec) -> Dict[str, float]:
    _, lam = rho1_lambda(spec)
    return {
        "lambda": lam,
        "delta1": delta_one_of(spec),
        "b2": variance_sum(spec),
        "sigma2": partial_sum_variance(spec),
        "C": observation_bound(spec),
    }


def run_experiment(
    family: TriangularFamily,
    n_grid: Sequence[int],
    replicates: int,
    seed: int,
    eps: Sequence[float] = (1.0, 0.1, 0.01),
    threads: int = 1,
) -> ExperimentResult:
    """Run the full experiment pipeline for one family over a grid.

    Per n: build the row, compute the mixing quantities (exactly for
    finite families, from closed forms for sampler families), evaluate
    every applicable condition, draw the normalized sums and measure the
    KS distance and sample moments. Failures at one n are recorded in the
    row and the run continues.
    """
    rows: List[ExperimentRow] = []
    for n in n_grid:
        try:
            spec = family.make_row(n) if family.kind == "finite" else None
            q = (_exact_row_quantities(spec) if spec is not None
                 else dict(family.analytic(n)))
            lam = q["lambda"]
            sigma = math.sqrt(q["sigma2"])
            b = math.sqrt(q["b2"])
            C = q["C"]
            alpha = 1.0 - q["delta1"]

            conditions = {
                "cond_dob": _cond_dob_value(C, lam, sigma),
                "cond_log2": _cond_log2_value(lam, n),
                "cond_cd": _cond_cd_value(C, alpha, q["b2"]),
            }
            lind = {}
            if spec is not None:
                for e in eps:
                    lind[f"{e:g}"] = lindeberg_functional(spec, e)

            if q["sigma2"] <= 0.0:
                raise ZeroVariance(f"sigma_n^2 = {q['sigma2']} at n = {n}")
            kernel = (chain_sum_kernel(spec) if spec is not None
                      else family.sampler_factory(n))
            sums = _collect_sums(kernel, replicates, seed, threads) / sigma

            centered = sums - sums.mean()
            s2 = float(np.mean(centered ** 2))
            kurt = (float(np.mean(centered ** 4)) / s2 ** 2 - 3.0
                    if s2 > 0 else math.nan)
            rows.append(ExperimentRow(
                n=n, replicates=replicates, seed=seed,
                normalization="exact" if spec is not None else "analytic",
                lam=lam, sigma=sigma, b=b, C=C,
                ks=ks_distance(sums),
                sample_mean=float(np.mean(sums)),
                sample_variance=float(np.var(sums, ddof=1)),
                sample_excess_kurtosis=kurt,
                conditions=conditions, lindeberg=lind))
        except MixCltError as exc:
            rows.append(ExperimentRow(
                n=n, replicates=replicates, seed=seed, normalization="none",
                error=f"{type(exc).__name__}: {exc}"))

    traces = []
    for cname in ("cond_dob", "cond_log2", "cond_cd"):
        records = []
        values, flags = [], []
        for r in rows:
            cv = r.conditions.get(cname)
            records.append({
                "n": r.n, "C": r.C, "lambda": r.lam, "sigma": r.sigma,
                "b": r.b,
                "value": math.nan if cv is None else cv.value,
                "flag": None if cv is None else cv.flag,
            })
            values.append(math.nan if cv is None else cv.value)
            flags.append(None if cv is None else cv.flag)
        traces.append(ConditionTrace(
            name=cname, records=records,
            verdict=_classify_trend(values, flags)))

    return ExperimentResult(
        family=family.name, n_grid=list(n_grid), replicates=replicates,
        seed=seed, eps=[float(e) for e in eps], rows=rows, traces=traces)
