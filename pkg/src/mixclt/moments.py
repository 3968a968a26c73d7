"""Exact variance and conditional-moment computations with bound checks.

Everything here is computed by linear recursions on the chain law (no
sampling): the partial-sum variance, the tail conditional expectations
g_j(x) = E(S_n - S_j | state at step j = x), their absolute moments, and
the martingale-difference identities. On top of those sit numerical
verifiers for the variance bounds in terms of the lag-1 maximal
correlation and the contraction coefficient, the tail-variance lower
bound, and the power-moment and exponential-moment inequalities for the
tail conditionals.

Relative slacks are 1e-9; quantities near zero fall back to an absolute
slack of 1e-12.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import reporting
from .chain_model import (
    ChainSpec,
    ENUMERATION_CAP,
    compensated_dot,
    enumerate_paths,
    marginals,
    observation_bound,
    path_observation_sums,
)
from .coefficients import delta1 as delta_one_of
from .coefficients import rho1_lambda, rho_k_sequence
from .errors import InvalidOrder, InvalidT, MixCltError, StateSpaceTooLarge
from .reporting import CheckResult

REL_SLACK = 1e-9
ABS_SLACK = 1e-12
ALGEBRA_TOL = 1e-12


def _slack(rhs: float, rel: float = REL_SLACK) -> float:
    return max(rel * abs(rhs), ABS_SLACK)


def variance_sum(spec: ChainSpec) -> float:
    """Sum of the individual observation variances (spec must be centered)."""
    pi = marginals(spec).pi
    return math.fsum(np.einsum("ij,ij->i", pi, spec.f ** 2))


def partial_sum_variance(spec: ChainSpec) -> float:
    """Variance of the observation sum by an O(n m^2) forward recursion.

    Maintains u_j(x) = E(S_j 1{state_j = x}); propagating u one step gives
    the exact cross terms E(S_j X_{j+1}) without forming any joint law.
    """
    pi = marginals(spec).pi
    terms = [float(np.dot(pi[0], spec.f[0] ** 2))]
    u = spec.f[0] * pi[0]
    for i in range(spec.n - 1):
        w = u @ spec.transitions[i]
        terms.append(float(np.dot(pi[i + 1], spec.f[i + 1] ** 2)))
        terms.append(2.0 * float(np.dot(spec.f[i + 1], w)))
        u = w + spec.f[i + 1] * pi[i + 1]
    return math.fsum(terms)


def partial_sum_variance_oracle(spec: ChainSpec) -> float:
    """Variance of the observation sum by O(n^2 m^2) covariance summation.

    Independent of the forward recursion: accumulates var X_s and every
    lagged covariance cov(X_s, X_{s+k}) from propagated mass vectors.
    """
    pi = marginals(spec).pi
    terms = []
    for s in range(spec.n):
        terms.append(float(np.dot(pi[s], spec.f[s] ** 2)))
        w = pi[s] * spec.f[s]
        for t in range(s + 1, spec.n):
            w = w @ spec.transitions[t - 1]
            terms.append(2.0 * float(np.dot(w, spec.f[t])))
    return math.fsum(terms)


@dataclass(frozen=True)
class TailConditional:
    """g[j-1, x] = E(S_n - S_j | state at step j = x), 1-based steps.

    The last row is identically zero; every row has mean zero under the
    matching marginal (tower property).
    """

    g: np.ndarray  # shape (n, m)


def tail_conditional(spec: ChainSpec) -> TailConditional:
    """Backward recursion g_n = 0, g_j = Q_j (f_{j+1} + g_{j+1})."""
    g = np.zeros((spec.n, spec.m))
    for j in range(spec.n - 2, -1, -1):
        g[j] = spec.transitions[j] @ (spec.f[j + 1] + g[j + 1])
    return TailConditional(g=g)


def tail_moment_sum(spec: ChainSpec, tc: TailConditional, p: float) -> float:
    """sum_j E|A_j|^p for the tail conditionals A_j = g_j(state_j)."""
    if p < 2:
        raise InvalidOrder(f"moment order must be >= 2, got {p}")
    pi = marginals(spec).pi
    return math.fsum(np.einsum("ij,ij->i", pi, np.abs(tc.g) ** p))


@dataclass(frozen=True)
class MartingaleResiduals:
    """Residuals of the martingale decomposition of the observation sum.

    pathwise: max over all paths of |sum_j d_j - S_n| (None when the path
    space exceeded the enumeration cap and was not forced). moment:
    |sum_j E d_j^2 - var S_n|. sum_sq: sum_j E d_j^2 itself.
    """

    pathwise: Optional[float]
    moment: float
    sum_sq: float


def martingale_identity_check(
    spec: ChainSpec,
    enumeration_cap: int = ENUMERATION_CAP,
    require_pathwise: bool = False,
) -> MartingaleResiduals:
    """Verify the telescoping and orthogonality identities for
    d_j = f_j(state_j) + g_j(state_j) - g_{j-1}(state_{j-1}), with g_0
    the scalar E S_n = 0.

    The second moments come from the adjacent-pair joint laws only (d_j
    depends on two consecutive states by the Markov property), so the
    moment identity never needs path enumeration.
    """
    pi = marginals(spec).pi
    g = tail_conditional(spec).g
    sq_terms = [float(np.dot(pi[0], (spec.f[0] + g[0]) ** 2))]
    for j in range(1, spec.n):
        J = pi[j - 1][:, None] * spec.transitions[j - 1]
        d = (spec.f[j] + g[j])[None, :] - g[j - 1][:, None]
        sq_terms.append(float(np.sum(J * d ** 2)))
    sum_sq = math.fsum(sq_terms)
    moment = abs(sum_sq - partial_sum_variance(spec))

    pathwise = None
    if spec.m ** spec.n <= enumeration_cap:
        paths, _ = enumerate_paths(spec, cap=enumeration_cap)
        acc = spec.f[0][paths[:, 0]] + g[0][paths[:, 0]]
        for j in range(1, spec.n):
            acc += (spec.f[j][paths[:, j]] + g[j][paths[:, j]]
                    - g[j - 1][paths[:, j - 1]])
        pathwise = float(np.max(np.abs(acc - path_observation_sums(spec, paths))))
    elif require_pathwise:
        raise StateSpaceTooLarge(
            f"m**n = {spec.m ** spec.n} exceeds cap {enumeration_cap}")
    return MartingaleResiduals(pathwise=pathwise, moment=moment,
                               sum_sq=sum_sq)


# --- variance bounds ---------------------------------------------------------

def variance_bounds_check(
    spec: ChainSpec,
    rho1: Optional[float] = None,
    b2: Optional[float] = None,
    sigma2: Optional[float] = None,
    rel_slack: float = REL_SLACK,
) -> List[CheckResult]:
    """Two-sided variance bound in terms of the lag-1 maximal correlation:

        (1-rho1)/(1+rho1) * b^2  <=  sigma^2  <=  (1+rho1)/(1-rho1) * b^2

    with slack 1e-9 * b^2. At rho1 = 1 the upper bound is vacuous and is
    reported as skipped. The factors are also recomputed in terms of
    lambda = 1 - rho1 (lower (2-lambda)^-1 lambda, upper its reciprocal)
    and both forms must agree to 1e-12.
    """
    if rho1 is None:
        rho1, _ = rho1_lambda(spec)
    if b2 is None:
        b2 = variance_sum(spec)
    if sigma2 is None:
        sigma2 = partial_sum_variance(spec)
    lam = 1.0 - rho1
    slack = rel_slack * b2
    out = [reporting.check("variance_lower", (1.0 - rho1) / (1.0 + rho1) * b2,
                           sigma2, slack)]
    if rho1 >= 1.0:
        out.append(reporting.skipped(
            "variance_upper", "rho1 = 1: upper bound vacuous"))
    else:
        out.append(reporting.check(
            "variance_upper", sigma2, (1.0 + rho1) / (1.0 - rho1) * b2,
            slack))
        out.append(reporting.check(
            "lambda_form_upper_agrees",
            abs((1.0 + rho1) / (1.0 - rho1) - (2.0 - lam) / lam),
            0.0, ALGEBRA_TOL))
    out.append(reporting.check(
        "lambda_form_lower_agrees",
        abs((1.0 - rho1) / (1.0 + rho1) - lam / (2.0 - lam)),
        0.0, ALGEBRA_TOL))
    return out


def delta_variance_bounds_check(
    spec: ChainSpec,
    delta_one: Optional[float] = None,
    b2: Optional[float] = None,
    sigma2: Optional[float] = None,
    rel_slack: float = REL_SLACK,
) -> List[CheckResult]:
    """Two-sided variance bound in terms of the contraction coefficient:

        (1-d)/(1+sqrt(d))^2 * b^2  <=  sigma^2  <=  (1+sqrt(d))^2/(1-d) * b^2

    for d = delta_1 < 1; at delta_1 = 1 both sides are skipped.
    """
    if delta_one is None:
        delta_one = delta_one_of(spec)
    if delta_one >= 1.0:
        note = "delta1 = 1: contraction bound vacuous"
        return [reporting.skipped("delta_variance_lower", note),
                reporting.skipped("delta_variance_upper", note)]
    if b2 is None:
        b2 = variance_sum(spec)
    if sigma2 is None:
        sigma2 = partial_sum_variance(spec)
    root = math.sqrt(delta_one)
    low = (1.0 - delta_one) / (1.0 + root) ** 2
    slack = rel_slack * b2
    return [
        reporting.check("delta_variance_lower", low * b2, sigma2, slack),
        reporting.check("delta_variance_upper", sigma2, b2 / low, slack),
    ]


def tail_variance_lower_bound_check(
    spec: ChainSpec,
    rho1: Optional[float] = None,
    sigma2: Optional[float] = None,
    tc: Optional[TailConditional] = None,
    rel_slack: float = REL_SLACK,
) -> CheckResult:
    """sigma^2 >= (1 - rho1^2)/rho1^2 * sum_j E A_j^2, for 0 < rho1 < 1.

    Skipped at the endpoints: at rho1 = 0 every tail conditional vanishes
    and the right side is conventionally zero; at rho1 = 1 the factor is
    zero and the bound says nothing.
    """
    if rho1 is None:
        rho1, _ = rho1_lambda(spec)
    if rho1 <= 0.0:
        return reporting.skipped(
            "tail_variance_lower_bound", "rho1 = 0: degenerate (tail "
            "conditionals vanish)")
    if rho1 >= 1.0:
        return reporting.skipped(
            "tail_variance_lower_bound", "rho1 = 1: degenerate factor 0")
    if sigma2 is None:
        sigma2 = partial_sum_variance(spec)
    if tc is None:
        tc = tail_conditional(spec)
    ea2 = tail_moment_sum(spec, tc, 2.0)
    lhs = (1.0 - rho1 ** 2) / rho1 ** 2 * ea2
    return reporting.check("tail_variance_lower_bound", lhs, sigma2,
                           max(rel_slack * sigma2, ABS_SLACK))


def _verify_geometric_domination(rho_k: np.ndarray, rho1: float) -> None:
    # guaranteed for Markov rows; guarded anyway so a failure surfaces
    # loudly instead of silently weakening the bound being checked.
    powers = rho1 ** np.arange(1, len(rho_k) + 1)
    bad = rho_k > powers + REL_SLACK
    if np.any(bad):
        k = int(np.argmax(bad)) + 1
        raise MixCltError(
            f"geometric domination failed at lag {k}: "
            f"rho_k={rho_k[k - 1]!r} > rho1^k={powers[k - 1]!r}")


def tail_moment_inequality_check(
    spec: ChainSpec,
    p: float,
    rho_k: Optional[np.ndarray] = None,
    rho1: Optional[float] = None,
    tc: Optional[TailConditional] = None,
    rel_slack: float = REL_SLACK,
) -> Tuple[CheckResult, CheckResult]:
    """Power-moment bounds on the tail conditionals, p >= 2.

    Part 1:  sum_j E|A_j|^p <= 2^(p-2) (sum_{k=1}^{n-1} rho_k^(2/p))^p
             * sum_i E|X_i|^p.
    Part 2:  with rho_k <= rho1^k verified and 0 < rho1 < 1,
             sum_j E|A_j|^p <= p^p / (4 (1-rho1)^p) * sum_i E|X_i|^p.

    The inner sum of part 1 runs over the dominating lag range 1..n-1.
    """
    if p < 2:
        raise InvalidOrder(f"moment order must be >= 2, got {p}")
    if rho_k is None:
        rho_k = rho_k_sequence(spec)
    if rho1 is None:
        rho1, _ = rho1_lambda(spec)
    if tc is None:
        tc = tail_conditional(spec)
    lhs = tail_moment_sum(spec, tc, p)
    pi = marginals(spec).pi
    sum_ex_p = math.fsum(np.einsum("ij,ij->i", pi, np.abs(spec.f) ** p))
    rhs1 = 2.0 ** (p - 2) * math.fsum(rho_k ** (2.0 / p)) ** p * sum_ex_p
    part1 = reporting.check(f"tail_moment_p{p:g}", lhs, rhs1,
                            _slack(rhs1, rel_slack))
    if rho1 <= 0.0 or rho1 >= 1.0:
        part2 = reporting.skipped(
            f"tail_moment_geometric_p{p:g}",
            f"rho1 = {rho1:g}: no geometric envelope in (0, 1)")
    else:
        _verify_geometric_domination(rho_k, rho1)
        rhs2 = p ** p / (4.0 * (1.0 - rho1) ** p) * sum_ex_p
        part2 = reporting.check(f"tail_moment_geometric_p{p:g}", lhs, rhs2,
                                _slack(rhs2, rel_slack))
    return part1, part2


# --- exponential moment bound ------------------------------------------------

def _tail_max_by_path(spec: ChainSpec, g: np.ndarray, cap: int):
    paths, probs = enumerate_paths(spec, cap=cap)
    m = np.abs(g[0][paths[:, 0]])
    for j in range(1, spec.n):
        np.maximum(m, np.abs(g[j][paths[:, j]]), out=m)
    return probs, m


def exp_moment_checks(
    spec: ChainSpec,
    ts: Sequence[float],
    enumeration_cap: int = ENUMERATION_CAP,
    rel_slack: float = REL_SLACK,
) -> List[CheckResult]:
    """Exponential moment bound at several admissible t, one enumeration.

    Returns one general check per requested t plus the endpoint check at
    t_max; see exp_moment_inequality_check for the bound itself.
    """
    for t in ts:
        if t <= 0.0:
            raise InvalidT(f"t must be positive, got {t}")
    rho1, _ = rho1_lambda(spec)
    if rho1 >= 1.0:
        note = "rho1 = 1: no admissible t"
        return ([reporting.skipped("exp_moment", note) for _ in ts]
                + [reporting.skipped("exp_moment_tmax", note)])
    _verify_geometric_domination(rho_k_sequence(spec), rho1)
    C = observation_bound(spec)
    if C == 0.0:
        note = "all observations vanish a.s."
        return ([reporting.skipped("exp_moment", note) for _ in ts]
                + [reporting.skipped("exp_moment_tmax", note)])
    t_max = (1.0 - rho1) / (6.0 * C)
    for t in ts:
        if t > t_max * (1.0 + 1e-12):
            raise InvalidT(f"t = {t!r} exceeds admissible bound {t_max!r}")
    g = tail_conditional(spec).g
    probs, maxabs = _tail_max_by_path(spec, g, enumeration_cap)
    b = math.sqrt(variance_sum(spec))

    out = []
    for t in ts:
        lhs = compensated_dot(probs, np.exp(t * maxabs))
        rhs = (1.0 + 2.0 * t * b / (1.0 - rho1)) ** 2
        out.append(reporting.check(f"exp_moment[t={t:.12g}]", lhs, rhs,
                                   _slack(rhs, rel_slack)))
    lhs_max = compensated_dot(probs, np.exp(t_max * maxabs))
    rhs_max = (1.0 + b / (3.0 * C)) ** 2
    out.append(reporting.check("exp_moment_tmax", lhs_max, rhs_max,
                               _slack(rhs_max, rel_slack)))
    return out


def exp_moment_inequality_check(
    spec: ChainSpec,
    t: float,
    enumeration_cap: int = ENUMERATION_CAP,
) -> Tuple[CheckResult, CheckResult]:
    """Exponential moment bound for the running maximum of |A_j|:

        E exp(t max_j |A_j|) <= (1 + 2 t b_n / (1 - rho1))^2

    admissible for 0 < t <= (1 - rho1)/(6 C) with C the essential sup of
    |f|; geometric domination rho_k <= rho1^k is verified first. The left
    side is exact (full path enumeration). The bound is additionally
    evaluated at the endpoint t_max, where the right side specializes to
    (1 + b_n/(3 C))^2.
    """
    general, special = exp_moment_checks(spec, [t],
                                         enumeration_cap=enumeration_cap)
    return general, special


def admissible_exp_t_values(spec: ChainSpec, count: int = 5) -> List[float]:
    """Evenly spaced admissible t values (j/count * t_max, j = 1..count).

    Empty when no positive t is admissible (rho1 = 1 or unbounded/zero
    observations).
    """
    rho1, _ = rho1_lambda(spec)
    C = observation_bound(spec)
    if rho1 >= 1.0 or C == 0.0:
        return []
    t_max = (1.0 - rho1) / (6.0 * C)
    return [t_max * j / count for j in range(1, count + 1)]


# --- assembled report --------------------------------------------------------

@dataclass(frozen=True)
class MomentReport:
    """Variance/moment quantities of one row plus all bound checks.

    sigma2 comes from the forward recursion, sigma2_oracle from the
    independent covariance summation, sigma2_enum from full path
    enumeration when the path space is small enough. EA_p maps moment
    order to sum_j E|A_j|^p. mart_residual is the orthogonality-identity
    residual |sum_j E d_j^2 - sigma2|.
    """

    b2: float
    sigma2: float
    sigma2_oracle: float
    sigma2_enum: Optional[float]
    EA_p: Dict[float, float]
    mart_residual: float
    mart_pathwise: Optional[float]
    bound_checks: List[CheckResult] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "b2": self.b2,
            "sigma2": self.sigma2,
            "sigma2_oracle": self.sigma2_oracle,
            "sigma2_enum": self.sigma2_enum,
            "EA_p": {f"{p:g}": v for p, v in self.EA_p.items()},
            "mart_residual": self.mart_residual,
            "mart_pathwise": self.mart_pathwise,
            "bound_checks": [c.to_dict() for c in self.bound_checks],
        }

    def to_json(self) -> str:
        return reporting.dump_json(self.to_dict())

    def to_csv(self) -> str:
        rows = [(c.name, c.lhs, c.rhs, c.margin, c.status)
                for c in self.bound_checks]
        return reporting.csv_lines(
            ("check_name", "lhs", "rhs", "margin", "status"), rows)


def moment_report(
    spec: ChainSpec,
    p_orders: Sequence[float] = (2.0, 2.5, 3.0, 4.0),
    exp_t_count: int = 5,
    enumeration_cap: int = 100_000,
    rel_slack: float = REL_SLACK,
) -> MomentReport:
    """Assemble every moment quantity and inequality check for one row.

    Path-enumeration cross-checks (sigma2_enum, pathwise martingale
    residual, exponential-moment left sides) are included only when
    m**n fits under ``enumeration_cap``; the exponential checks are
    reported as skipped otherwise.
    """
    rho1, _ = rho1_lambda(spec)
    rho_k = rho_k_sequence(spec)
    tc = tail_conditional(spec)
    b2 = variance_sum(spec)
    sigma2 = partial_sum_variance(spec)
    sigma2_oracle = partial_sum_variance_oracle(spec)

    enumerable = spec.m ** spec.n <= enumeration_cap
    sigma2_enum = None
    if enumerable:
        paths, probs = enumerate_paths(spec, cap=enumeration_cap)
        sums = path_observation_sums(spec, paths)
        sigma2_enum = compensated_dot(probs, sums ** 2)

    resid = martingale_identity_check(spec, enumeration_cap=enumeration_cap)
    checks: List[CheckResult] = []
    checks += variance_bounds_check(spec, rho1=rho1, b2=b2, sigma2=sigma2,
                                    rel_slack=rel_slack)
    checks += delta_variance_bounds_check(spec, b2=b2, sigma2=sigma2,
                                          rel_slack=rel_slack)
    checks.append(tail_variance_lower_bound_check(
        spec, rho1=rho1, sigma2=sigma2, tc=tc, rel_slack=rel_slack))
    ea = {}
    for p in p_orders:
        ea[float(p)] = tail_moment_sum(spec, tc, p)
        checks += tail_moment_inequality_check(spec, p, rho_k=rho_k,
                                               rho1=rho1, tc=tc,
                                               rel_slack=rel_slack)
    if enumerable:
        checks += exp_moment_checks(
            spec, admissible_exp_t_values(spec, exp_t_count),
            enumeration_cap=enumeration_cap, rel_slack=rel_slack)
    else:
        checks.append(reporting.skipped(
            "exp_moment", "path space exceeds enumeration cap"))

    return MomentReport(
        b2=b2, sigma2=sigma2, sigma2_oracle=sigma2_oracle,
        sigma2_enum=sigma2_enum, EA_p=ea, mart_residual=resid.moment,
        mart_pathwise=resid.pathwise, bound_checks=checks)
