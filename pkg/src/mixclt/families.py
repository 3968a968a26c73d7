"""Built-in triangular-array generators.

A family maps a row length n to a concrete chain row (finite state) or to
a path-sum sampler (the Gaussian AR(1) family, which has no finite exact
engine), together with closed-form coefficient metadata when known. The
metadata is what experiments print next to the computed values; for finite
families the two must agree to 1e-9.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .chain_model import ChainSpec, validate
from .coefficients import rho1_lambda
from .errors import (
    InvalidPhi,
    InvalidRate,
    MixCltError,
    RejectionBudgetExceeded,
)
from .rng import Stream, derive_states, next_uniforms

REJECTION_BUDGET = 10_000
_ATTEMPT_STRIDE = 10_000  # stream index = n * stride + attempt


@dataclass(frozen=True)
class TriangularFamily:
    """A named generator of rows, one per length n.

    kind is "finite" (make_row yields a ChainSpec; the exact engines
    apply) or "sampler" (sampler_factory yields a vectorized kernel
    mapping (seed, replicate indices) to observation sums; only analytic
    metadata and Monte Carlo apply). analytic, when present, maps n to a
    dict with closed-form entries among rho1, lambda, delta1, b2, sigma2,
    C; C may be inf for unbounded observations.
    """

    name: str
    kind: str
    make_row: Optional[Callable[[int], ChainSpec]] = None
    sampler_factory: Optional[
        Callable[[int], Callable[[int, np.ndarray], np.ndarray]]] = None
    analytic: Optional[Callable[[int], Dict[str, float]]] = None
    description: str = ""


def _two_state_sigma2(n: int, a: float) -> float:
    # var S_n = n + 2 sum_{k<n} (n-k) r^k for f = (-1, +1), r = 1 - 2a
    r = 1.0 - 2.0 * a
    return math.fsum([float(n)] +
                     [2.0 * (n - k) * r ** k for k in range(1, n)])


def family_two_state(rate: Callable[[int], float],
                     rate_desc: str = "a") -> TriangularFamily:
    """Symmetric two-state rows: flip probability a_n = rate(n) in
    (0, 0.5], uniform initial law, observations (-1, +1).

    Closed forms: rho1 = delta1 = 1 - 2 a_n, lambda = 2 a_n,
    sigma2 = n + 2 sum_{k=1}^{n-1} (n-k)(1-2a_n)^k, b2 = n, C = 1.
    """
    def checked_rate(n: int) -> float:
        a = float(rate(n))
        if not 0.0 < a <= 0.5:
            raise InvalidRate(f"flip probability {a!r} at n={n} "
                              "outside (0, 0.5]")
        return a

    def make_row(n: int) -> ChainSpec:
        a = checked_rate(n)
        Q = np.array([[1.0 - a, a], [a, 1.0 - a]])
        return ChainSpec(
            m=2, n=n, initial=np.array([0.5, 0.5]),
            transitions=np.broadcast_to(Q, (max(n - 1, 0), 2, 2)).copy(),
            f=np.broadcast_to(np.array([-1.0, 1.0]), (n, 2)).copy(),
            name=f"two-state:a={rate_desc}")

    def analytic(n: int) -> Dict[str, float]:
        a = checked_rate(n)
        return {
            "rho1": 1.0 - 2.0 * a if n > 1 else 0.0,
            "lambda": 2.0 * a if n > 1 else 1.0,
            "delta1": 1.0 - 2.0 * a if n > 1 else 1.0,
            "b2": float(n),
            "sigma2": _two_state_sigma2(n, a),
            "C": 1.0,
        }

    return TriangularFamily(
        name=f"two-state:a={rate_desc}", kind="finite", make_row=make_row,
        analytic=analytic,
        description="symmetric two-state chain, flip probability a_n, "
                    "observations -1/+1")


def family_degenerate(c: float) -> TriangularFamily:
    """Rare-flip two-state rows: a_n = min(0.5, c/n), so lambda_n = 2c/n
    and the expected number of sign flips stays O(1). The normalized sums
    stay non-normal at every n; this is the stock counterexample family.
    """
    if not c > 0.0:
        raise InvalidRate(f"need c > 0, got {c!r}")
    fam = family_two_state(lambda n: min(0.5, c / n), rate_desc=f"{c:g}/n")
    return TriangularFamily(
        name=f"degenerate:c={c:g}", kind="finite", make_row=fam.make_row,
        analytic=fam.analytic,
        description="two-state chain with O(1) expected flips per row; "
                    "normalized sums do not become normal")


def family_iid(m: int = 2,
               f: Optional[Sequence[float]] = None,
               pi: Optional[Sequence[float]] = None) -> TriangularFamily:
    """Independent rows: every transition row equals the marginal law.

    Observations are centered against pi on construction. Closed forms:
    rho1 = delta1 = 0, sigma2 = b2 = n * var.
    """
    pi_arr = (np.full(m, 1.0 / m) if pi is None
              else np.asarray(pi, dtype=np.float64))
    f_arr = (np.linspace(-1.0, 1.0, m) if f is None
             else np.asarray(f, dtype=np.float64))
    if pi_arr.shape != (m,) or f_arr.shape != (m,):
        raise MixCltError("iid family: pi and f must have length m")
    f_centered = f_arr - float(np.dot(pi_arr, f_arr))
    var = float(np.dot(pi_arr, f_centered ** 2))
    C = float(np.max(np.abs(f_centered[pi_arr > 0]))) if m else 0.0

    def make_row(n: int) -> ChainSpec:
        return validate(ChainSpec(
            m=m, n=n, initial=pi_arr,
            transitions=np.broadcast_to(pi_arr, (max(n - 1, 0), m, m)).copy(),
            f=np.broadcast_to(f_centered, (n, m)).copy(),
            name=f"iid:m={m}"), center=True)

    def analytic(n: int) -> Dict[str, float]:
        return {
            "rho1": 0.0,
            "lambda": 1.0,
            "delta1": 0.0 if n > 1 else 1.0,
            "b2": n * var,
            "sigma2": n * var,
            "C": C,
        }

    return TriangularFamily(
        name=f"iid:m={m}", kind="finite", make_row=make_row,
        analytic=analytic,
        description="independent identically distributed observations")


def family_random(m: int, seed: int, mixing_floor: float) -> TriangularFamily:
    """Seeded random rows for the property-test corpus.

    All probability entries come from normalized positive uniform draws;
    observations are uniform draws centered against the exact marginals.
    Rows are redrawn (fresh stream per attempt) until rho1 <= 1 -
    mixing_floor; the construction is a pure function of (m, seed, n).
    """
    if m < 2:
        raise MixCltError(f"random family needs m >= 2, got {m}")
    if not 0.0 <= mixing_floor < 1.0:
        raise MixCltError(f"mixing floor must be in [0, 1), got {mixing_floor}")

    def make_row(n: int) -> ChainSpec:
        for attempt in range(REJECTION_BUDGET):
            stream = Stream.derive(seed, n * _ATTEMPT_STRIDE + attempt)
            draw = stream.uniform
            initial = np.array([draw() for _ in range(m)])
            initial /= initial.sum()
            transitions = np.empty((n - 1, m, m))
            for i in range(n - 1):
                for x in range(m):
                    row = np.array([draw() for _ in range(m)])
                    transitions[i, x] = row / row.sum()
            f = np.array([[draw() for _ in range(m)] for _ in range(n)])
            spec = validate(ChainSpec(
                m=m, n=n, initial=initial, transitions=transitions, f=f,
                name=f"random:m={m},seed={seed},n={n}"), center=True)
            rho1, _ = rho1_lambda(spec)
            if rho1 <= 1.0 - mixing_floor:
                return spec
        raise RejectionBudgetExceeded(
            f"no row with rho1 <= {1.0 - mixing_floor} in "
            f"{REJECTION_BUDGET} attempts (m={m}, seed={seed}, n={n})")

    return TriangularFamily(
        name=f"random:m={m},seed={seed},floor={mixing_floor:g}",
        kind="finite", make_row=make_row,
        description="seeded random transition matrices and observations")


# --- Gaussian AR(1), sampler-only -------------------------------------------

def _norm_pdf(x):
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _clip_mean_under_normal(mu: float, s: float, c: float) -> float:
    """E[clip(mu + s V)] for V standard normal, clip at +-c (closed form)."""
    if s <= 0.0:
        return max(-c, min(c, mu))
    alpha = (-c - mu) / s
    beta = (c - mu) / s
    return (-c * float(ndtr(alpha)) + c * (1.0 - float(ndtr(beta)))
            + mu * float(ndtr(beta) - ndtr(alpha))
            + s * (_norm_pdf(alpha) - _norm_pdf(beta)))


def _clip_variance(c: float) -> float:
    """E[min(xi^2, c^2)] for standard normal xi (mean is 0 by symmetry)."""
    Phi_c = float(ndtr(c))
    return (2.0 * Phi_c - 1.0) - 2.0 * c * _norm_pdf(c) \
        + 2.0 * c * c * (1.0 - Phi_c)


def _clip_lag_covariance(r: float, c: float) -> float:
    """E[f(xi_0) f(xi_k)] for standard normal pair with correlation r,
    f = clip at +-c; 1-D quadrature against the closed-form conditional
    mean, split at the kinks."""
    from scipy.integrate import quad

    s = math.sqrt(max(0.0, 1.0 - r * r))

    def integrand(x):
        fx = max(-c, min(c, x))
        return fx * _clip_mean_under_normal(r * x, s, c) * _norm_pdf(x)

    total = 0.0
    for lo, hi in ((-np.inf, -c), (-c, c), (c, np.inf)):
        val, _ = quad(integrand, lo, hi, epsabs=1e-13, epsrel=1e-12)
        total += val
    return total


def family_gaussian_ar1(phi: float, f: str = "identity",
                        clip: float = 3.0) -> TriangularFamily:
    """Stationary Gaussian AR(1) rows, sampler-only.

    xi_1 is standard normal and xi_{i+1} = phi xi_i + sqrt(1-phi^2) z.
    The lag-1 maximal correlation of a jointly normal pair equals the
    absolute linear correlation, so rho1 = |phi| exactly, while the
    contraction coefficient of the normal kernel is 1: this family is
    the standard case where the contraction criterion says nothing but
    the correlation criterion applies.

    Observation catalog: "identity" (mean 0, unbounded, var 1,
    cov_k = phi^k) or "clip" (sign(x) min(|x|, clip); odd, so the mean is
    0 by symmetry; variance in closed form, lag covariances by
    quadrature). One uniform draw per step, mapped through the normal
    quantile function.
    """
    if not -1.0 < phi < 1.0:
        raise InvalidPhi(f"need |phi| < 1, got {phi!r}")
    if f not in ("identity", "clip"):
        raise MixCltError(f"unknown observation {f!r}; catalog: identity, clip")
    if f == "clip" and not clip > 0.0:
        raise MixCltError(f"clip level must be positive, got {clip!r}")
    w = math.sqrt(1.0 - phi * phi)

    if f == "identity":
        var_f = 1.0
        cov = lambda r: r
        C = math.inf
        apply_f = lambda xi: xi
        fdesc = "identity"
    else:
        var_f = _clip_variance(clip)
        cov = lambda r: _clip_lag_covariance(r, clip)
        C = clip
        apply_f = lambda xi: np.clip(xi, -clip, clip)
        fdesc = f"clip({clip:g})"

    def analytic(n: int) -> Dict[str, float]:
        terms = [n * var_f]
        for k in range(1, n):
            r = phi ** k
            if abs(r) < 1e-18:
                break
            terms.append(2.0 * (n - k) * cov(r))
        return {
            "rho1": abs(phi) if n > 1 else 0.0,
            "lambda": 1.0 - abs(phi) if n > 1 else 1.0,
            "delta1": 1.0,
            "b2": n * var_f,
            "sigma2": math.fsum(terms),
            "C": C,
        }

    def sampler_factory(n: int):
        def kernel(seed: int, indices: np.ndarray) -> np.ndarray:
            states = derive_states(seed, indices)
            xi = ndtri(next_uniforms(states))
            S = np.array(apply_f(xi), dtype=np.float64, copy=True)
            for _ in range(n - 1):
                xi = phi * xi + w * ndtri(next_uniforms(states))
                S += apply_f(xi)
            return S
        return kernel

    return TriangularFamily(
        name=f"gaussian-ar1:phi={phi:g},f={fdesc}", kind="sampler",
        sampler_factory=sampler_factory, analytic=analytic,
        description="stationary Gaussian AR(1); contraction coefficient 1, "
                    "lag-1 maximal correlation |phi|")


# --- CLI addressing ----------------------------------------------------------

_FLOAT = r"(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?"
_RATE_RE = re.compile(
    rf"^(?P<c>{_FLOAT}|c)"
    rf"(?:(?P<slash>/n(?:\^(?P<g1>{_FLOAT}))?)"
    rf"|(?P<star>\*n\^\(-(?P<g2>{_FLOAT})\)))?$")


def parse_rate(text: str, c_value: Optional[float] = None):
    """Parse a rate expression: `c`, `c/n`, or `c*n^(-g)` (equivalently
    `c/n^g`), where c is a float literal or the symbol `c` supplied
    separately. Returns (rate callable, canonical description).
    """
    m = _RATE_RE.match(text.strip())
    if m is None:
        raise InvalidRate(
            f"cannot parse rate {text!r}; grammar: c | c/n | c*n^(-g) | c/n^g")
    if m.group("c") == "c":
        if c_value is None:
            raise InvalidRate("rate uses the symbol c but no value for c "
                              "was supplied")
        c = float(c_value)
    else:
        c = float(m.group("c"))
    if m.group("slash"):
        g = float(m.group("g1")) if m.group("g1") else 1.0
    elif m.group("star"):
        g = float(m.group("g2"))
    else:
        g = 0.0
    if g == 0.0:
        return (lambda n: c), f"{c:g}"
    if g == 1.0:
        return (lambda n: c / n), f"{c:g}/n"
    return (lambda n: c * n ** (-g)), f"{c:g}/n^{g:g}"


def _parse_params(text: str) -> Dict[str, str]:
    params = {}
    if text:
        for piece in text.split(","):
            if "=" not in piece:
                raise MixCltError(f"family parameter {piece!r} is not "
                                  "of the form key=value")
            k, v = piece.split("=", 1)
            params[k.strip()] = v.strip()
    return params


def parse_family(text: str, c_value: Optional[float] = None,
                 seed: Optional[int] = None) -> TriangularFamily:
    """Resolve a family descriptor NAME[:key=value,...] to a family.

    Known names: iid, two-state, degenerate, random, gaussian-ar1. The
    symbol `c` inside a rate expression resolves to ``c_value``; the
    random family takes its seed from the ``seed`` argument unless given
    explicitly.
    """
    name, _, rest = text.partition(":")
    name = name.strip()
    params = _parse_params(rest)

    def take_float(key, default=None):
        if key in params:
            try:
                return float(params.pop(key))
            except ValueError:
                raise MixCltError(f"family parameter {key} is not a number")
        return default

    def take_int(key, default=None):
        if key in params:
            try:
                return int(params.pop(key))
            except ValueError:
                raise MixCltError(f"family parameter {key} is not an integer")
        return default

    if name == "iid":
        fam = family_iid(m=take_int("m", 2))
    elif name == "two-state":
        if "a" not in params:
            raise MixCltError("two-state needs a rate parameter a=...")
        rate, desc = parse_rate(params.pop("a"), c_value=c_value)
        fam = family_two_state(rate, rate_desc=desc)
    elif name == "degenerate":
        c = take_float("c", c_value)
        if c is None:
            raise MixCltError("degenerate needs c=... (or --c)")
        fam = family_degenerate(c)
    elif name == "random":
        m = take_int("m", 3)
        floor = take_float("floor", 0.05)
        fam_seed = take_int("seed", seed)
        if fam_seed is None:
            raise MixCltError("random family needs seed=... (or --seed)")
        fam = family_random(m, fam_seed, floor)
    elif name == "gaussian-ar1":
        phi = take_float("phi")
        if phi is None:
            raise MixCltError("gaussian-ar1 needs phi=...")
        fam = family_gaussian_ar1(phi, f=params.pop("f", "identity"),
                                  clip=take_float("clip", 3.0))
    else:
        raise MixCltError(
            f"unknown family {name!r}; known: iid, two-state, degenerate, "
            "random, gaussian-ar1")
    if params:
        raise MixCltError(f"unused family parameters: {sorted(params)}")
    return fam


def builtin_catalog() -> Dict[str, str]:
    """Name -> one-line description of every addressable family."""
    return {
        "iid": "independent observations (m=2 default); rho1 = delta1 = 0",
        "two-state": "symmetric two-state chain; a=RATE flip probability "
                     "(grammar: c | c/n | c*n^(-g) | c/n^g)",
        "degenerate": "two-state with a_n = min(0.5, c/n); CLT fails",
        "random": "seeded random rows; m=INT, floor=FLOAT, seed=INT",
        "gaussian-ar1": "Gaussian AR(1), sampler-only; phi=FLOAT, "
                        "f=identity|clip, clip=FLOAT",
    }
