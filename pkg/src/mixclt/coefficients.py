"""Maximal-correlation and contraction coefficients, computed exactly.

For discrete finite laws, the maximal coefficient of correlation between
two sigma-fields (the supremum of |corr(f, g)| over square-integrable
functions of each coordinate) equals the second-largest singular value of

    M(x, y) = J(x, y) / sqrt(p(x) q(y)),

where J is the joint law and p, q its marginals. Sketch: correlation of
unit-variance centered f, g is the bilinear form diag(sqrt p) f . M .
diag(sqrt q) g; the vectors sqrt(p), sqrt(q) are singular vectors of M with
singular value 1 and span exactly the constants, so maximizing over the
centered complement picks out the second singular value.

The contraction coefficient of a kernel is its maximal oscillation over
functions of oscillation at most 1, which for finite kernels is the
maximum total-variation distance between two rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import reporting
from .chain_model import ChainSpec, JointLaw, joint_law, marginals
from .errors import DegenerateJoint
from .reporting import CheckResult

JOINT_MASS_TOL = 1e-10
INEQ_SLACK = 1e-9   # additive slack for the coefficient inequalities
SVD_CLAMP = (0.0, 1.0)


def max_correlation(joint: JointLaw) -> float:
    """Maximal correlation coefficient of a discrete joint law.

    States with zero marginal mass carry no L2 weight and are deleted
    before normalization. A joint concentrated on a single cell has no
    centered direction left and yields 0.
    """
    J = np.asarray(joint.J, dtype=np.float64)
    if np.any(J < 0):
        raise DegenerateJoint("joint law has a negative entry")
    mass = float(J.sum())
    if abs(mass - 1.0) > JOINT_MASS_TOL:
        raise DegenerateJoint(f"joint law has total mass {mass!r}")
    p = J.sum(axis=1)
    q = J.sum(axis=0)
    rows = p > 0.0
    cols = q > 0.0
    M = J[np.ix_(rows, cols)] / np.sqrt(np.outer(p[rows], q[cols]))
    if min(M.shape) < 2:
        return 0.0
    s = np.linalg.svd(M, compute_uv=False)
    return float(np.clip(s[1], *SVD_CLAMP))


def _adjacent_joint(pi_s: np.ndarray, Q: np.ndarray) -> JointLaw:
    return JointLaw(s=0, k=1, J=pi_s[:, None] * Q)


def rho_k_sequence(spec: ChainSpec) -> np.ndarray:
    """Lag-k maximal correlations, maximized over positions, k = 1..n-1.

    The Markov property reduces the past/future sigma-fields to the two
    single coordinates at distance k, so entry k-1 is the maximum over s
    of the maximal correlation of (state_s, state_{s+k}).
    """
    n = spec.n
    pi = marginals(spec).pi
    best = np.zeros(max(n - 1, 0))
    for s in range(1, n):
        prod = np.eye(spec.m)
        for k in range(1, n - s + 1):
            prod = prod @ spec.transitions[s + k - 2]
            rho = max_correlation(JointLaw(s=s, k=k,
                                           J=pi[s - 1][:, None] * prod))
            if rho > best[k - 1]:
                best[k - 1] = rho
    return best


def rho1_lambda(spec: ChainSpec) -> Tuple[float, float]:
    """Lag-1 maximal correlation and the independence coefficient 1 - rho1.

    A row of length 1 has no adjacent pair; by convention rho1 = 0 there.
    """
    if spec.n < 2:
        return 0.0, 1.0
    pi = marginals(spec).pi
    rho1 = max(max_correlation(_adjacent_joint(pi[s], spec.transitions[s]))
               for s in range(spec.n - 1))
    return rho1, 1.0 - rho1


def delta_coefficient(Q: np.ndarray) -> float:
    """Contraction coefficient of one row-stochastic kernel.

    max over state pairs of the total-variation distance between rows.
    """
    Q = np.asarray(Q, dtype=np.float64)
    diff = np.abs(Q[:, None, :] - Q[None, :, :]).sum(axis=2)
    return float(diff.max()) / 2.0


def delta_steps(spec: ChainSpec) -> np.ndarray:
    return np.array([delta_coefficient(Q) for Q in spec.transitions])


def delta1(spec: ChainSpec) -> float:
    """Worst per-step contraction coefficient; 1 when the row has no steps."""
    if spec.n < 2:
        return 1.0
    return float(np.max(delta_steps(spec)))


@dataclass(frozen=True)
class CoefficientReport:
    """All mixing coefficients of one row plus the inequality checks.

    lambda_ = 1 - rho1 exactly; delta_one = max of delta_steps exactly.
    checks record rho_k <= rho1**k and rho1 <= sqrt(delta_one), each with
    additive slack 1e-9.
    """

    rho_k: np.ndarray
    rho1: float
    lambda_: float
    delta_steps: np.ndarray
    delta_one: float
    checks: List[CheckResult]

    def to_dict(self) -> dict:
        return {
            "rho_k": self.rho_k.tolist(),
            "rho1": self.rho1,
            "lambda": self.lambda_,
            "delta_steps": self.delta_steps.tolist(),
            "delta1": self.delta_one,
            "checks": [c.to_dict() for c in self.checks],
        }

    def to_json(self) -> str:
        return reporting.dump_json(self.to_dict())

    def to_csv(self) -> str:
        rows = []
        for i, rk in enumerate(self.rho_k, start=1):
            rows.append((i, rk, self.rho1 ** i, self.delta_steps[i - 1],
                         self.delta_one, self.delta_one ** 0.5))
        return reporting.csv_lines(
            ("k", "rho_k", "rho1_pow_k", "delta_step", "delta1",
             "sqrt_delta1"),
            rows)


def coefficient_report(spec: ChainSpec) -> CoefficientReport:
    rho_k = rho_k_sequence(spec)
    rho1, lam = rho1_lambda(spec)
    dsteps = delta_steps(spec)
    d1 = float(dsteps.max()) if dsteps.size else 1.0
    checks = []
    for k in range(1, len(rho_k) + 1):
        checks.append(reporting.check(
            f"rho_k_le_rho1_pow_k[k={k}]", rho_k[k - 1], rho1 ** k,
            INEQ_SLACK))
    checks.append(reporting.check(
        "rho1_le_sqrt_delta1", rho1, d1 ** 0.5, INEQ_SLACK))
    return CoefficientReport(rho_k=rho_k, rho1=rho1, lambda_=lam,
                             delta_steps=dsteps, delta_one=d1, checks=checks)
