"""Finite-state non-homogeneous Markov chain rows.

A row of length n over states {0..m-1} is described by an initial law, n-1
per-step transition matrices and n per-step observation functions. The
module validates rows, propagates marginal and joint laws exactly, samples
paths from explicit random streams, and enumerates the whole path space as
the brute-force oracle behind every exact cross-check.

All operations are pure; arrays inside a ChainSpec are read-only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    IndexOutOfRange,
    NotCentered,
    NotStochastic,
    SpecFileError,
    StateSpaceTooLarge,
)
from .rng import Stream

STOCHASTIC_TOL = 1e-12   # row sums of probability vectors
DERIVED_TOL = 1e-10      # quantities propagated through long products
ENUMERATION_CAP = 2_000_000


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ChainSpec:
    """One row of a triangular array.

    Attributes
    ----------
    m : int
        Number of states; states are indices 0..m-1.
    n : int
        Row length (number of time steps).
    initial : ndarray, shape (m,)
        Law of the first state.
    transitions : ndarray, shape (n-1, m, m)
        Row-stochastic step matrices; entry [i, x, y] is the probability
        of moving from x at step i+1 to y at step i+2 (steps are 1-based).
    f : ndarray, shape (n, m)
        Observation functions; the observed value at step i is f[i-1, state].
    name : str, optional
    """

    m: int
    n: int
    initial: np.ndarray
    transitions: np.ndarray
    f: np.ndarray
    name: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "initial", _readonly(self.initial))
        t = np.asarray(self.transitions, dtype=np.float64)
        if t.size == 0:
            t = t.reshape(0, self.m, self.m)
        object.__setattr__(self, "transitions", _readonly(t))
        object.__setattr__(self, "f", _readonly(self.f))


@dataclass(frozen=True, eq=False)
class MarginalLaws:
    """Per-step marginal laws pi[i-1] = law of the state at step i."""

    pi: np.ndarray  # shape (n, m)


@dataclass(frozen=True, eq=False)
class JointLaw:
    """Joint law of the states at steps s and s+k (both 1-based).

    J[x, y] = P(state at step s = x, state at step s+k = y).
    """

    s: int
    k: int
    J: np.ndarray  # shape (m, m)


def _check_dimensions(spec: ChainSpec) -> None:
    m, n = spec.m, spec.n
    if m < 1 or n < 1:
        raise DimensionMismatch(f"need m >= 1 and n >= 1, got m={m}, n={n}")
    if spec.initial.shape != (m,):
        raise DimensionMismatch(
            f"initial law has shape {spec.initial.shape}, expected ({m},)")
    if spec.transitions.shape != (n - 1, m, m):
        raise DimensionMismatch(
            f"transitions have shape {spec.transitions.shape}, "
            f"expected ({n - 1}, {m}, {m})")
    if spec.f.shape != (n, m):
        raise DimensionMismatch(
            f"observation table has shape {spec.f.shape}, expected ({n}, {m})")


def _check_stochastic(spec: ChainSpec) -> None:
    if np.any(spec.initial < 0):
        raise NotStochastic("initial law has a negative entry")
    if abs(float(spec.initial.sum()) - 1.0) > STOCHASTIC_TOL:
        raise NotStochastic(
            f"initial law sums to {float(spec.initial.sum())!r}")
    if spec.n > 1:
        if np.any(spec.transitions < 0):
            raise NotStochastic("a transition matrix has a negative entry")
        sums = spec.transitions.sum(axis=2)
        bad = np.abs(sums - 1.0) > STOCHASTIC_TOL
        if np.any(bad):
            i, x = np.argwhere(bad)[0]
            raise NotStochastic(
                f"transition step {i + 1}, row {x} sums to {sums[i, x]!r}")


def validate(spec: ChainSpec, center: bool = False) -> ChainSpec:
    """Check all ChainSpec invariants; optionally center the observations.

    With ``center`` set, each observation function is replaced by
    f_i - sum_x pi_i(x) f_i(x), the mean taken under the exact step-i
    marginal, so raw observation tables may be supplied. Without it, any
    step mean exceeding 1e-10 in absolute value raises NotCentered.

    Centering is idempotent bit for bit: a mean already below
    1e-12 * max(1, |f_i|_inf) is treated as zero and the function is kept
    unchanged. Observation scales far from unity should be rescaled by the
    caller before validation.
    """
    _check_dimensions(spec)
    _check_stochastic(spec)
    pi = marginals(spec).pi
    means = np.einsum("ij,ij->i", pi, spec.f)
    if not center:
        worst = float(np.max(np.abs(means))) if means.size else 0.0
        if worst > DERIVED_TOL:
            i = int(np.argmax(np.abs(means)))
            raise NotCentered(
                f"observation at step {i + 1} has mean {means[i]!r}; "
                "pass center=True to remove it")
        return spec
    f_new = center_rows(pi, spec.f)
    if f_new is spec.f:
        return spec
    return ChainSpec(spec.m, spec.n, spec.initial, spec.transitions,
                     f_new, spec.name)


def center_rows(pi: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Remove per-row means of f under the matching marginals.

    Rows whose mean is already below 1e-12 * max(1, |row|_inf) are kept
    bit for bit, which makes centering idempotent. Returns f itself when
    nothing changes.
    """
    means = np.einsum("ij,ij->i", pi, f)
    scale = np.maximum(1.0, np.max(np.abs(f), axis=1, initial=0.0))
    keep = np.abs(means) <= 1e-12 * scale
    if np.all(keep):
        return f
    f_new = f.copy()
    f_new[~keep] -= means[~keep, None]
    return f_new


def marginals(spec: ChainSpec) -> MarginalLaws:
    """Exact per-step marginals by forward propagation."""
    pi = np.empty((spec.n, spec.m))
    pi[0] = spec.initial
    for i in range(spec.n - 1):
        pi[i + 1] = pi[i] @ spec.transitions[i]
    return MarginalLaws(pi=pi)


def joint_law(spec: ChainSpec, s: int, k: int) -> JointLaw:
    """Joint law of the states at steps s and s+k (1-based, k >= 1).

    J(x, y) = pi_s(x) * (Q_s Q_{s+1} ... Q_{s+k-1})(x, y).
    """
    if k < 1 or s < 1 or s + k > spec.n:
        raise IndexOutOfRange(
            f"need 1 <= s and s+k <= n, got s={s}, k={k}, n={spec.n}")
    pi_s = marginals(spec).pi[s - 1]
    prod = spec.transitions[s - 1]
    for i in range(s, s + k - 1):
        prod = prod @ spec.transitions[i]
    return JointLaw(s=s, k=k, J=pi_s[:, None] * prod)


def _inverse_cdf(cdf: np.ndarray, u: float) -> int:
    # smallest y with u < cdf[y]; clamps the tail so that row sums a hair
    # below 1 (within the stochasticity tolerance) cannot step outside.
    y = int(np.searchsorted(cdf, u, side="right"))
    return min(y, len(cdf) - 1)


def sample_path(spec: ChainSpec, stream: Stream) -> np.ndarray:
    """Sample one path of length n from an explicit random stream.

    Consumes exactly one uniform draw per step: the first draw picks the
    initial state by inverse CDF over the initial law, draw i+1 picks the
    next state by inverse CDF over the current transition row. The result
    is a deterministic function of the stream state.
    """
    path = np.empty(spec.n, dtype=np.int64)
    cdf0 = np.cumsum(spec.initial)
    x = _inverse_cdf(cdf0, stream.uniform())
    path[0] = x
    for i in range(spec.n - 1):
        cdf = np.cumsum(spec.transitions[i, x])
        x = _inverse_cdf(cdf, stream.uniform())
        path[i + 1] = x
    return path


def enumerate_paths(spec: ChainSpec, cap: int = ENUMERATION_CAP):
    """All m**n paths in lexicographic order with their probabilities.

    Returns (paths, probs): an (m**n, n) int8 array and the matching
    probability vector. Raises StateSpaceTooLarge above ``cap``.
    """
    total = spec.m ** spec.n
    if total > cap:
        raise StateSpaceTooLarge(
            f"m**n = {total} exceeds enumeration cap {cap}")
    idx = np.arange(total, dtype=np.int64)
    paths = np.empty((total, spec.n), dtype=np.int8)
    for i in range(spec.n - 1, -1, -1):
        paths[:, i] = idx % spec.m
        idx //= spec.m
    probs = spec.initial[paths[:, 0]].astype(np.float64)
    for i in range(spec.n - 1):
        probs *= spec.transitions[i, paths[:, i], paths[:, i + 1]]
    return paths, probs


def compensated_dot(probs: np.ndarray, values: np.ndarray) -> float:
    """Exactly rounded sum of probs*values (compensated accumulation)."""
    return math.fsum(probs * values)


def enumerate_expectation(
    spec: ChainSpec,
    functional: Callable[[np.ndarray], float],
    cap: int = ENUMERATION_CAP,
) -> float:
    """Exact expectation of a path functional by full enumeration.

    Sums P(path) * functional(path) over all m**n paths with compensated
    accumulation; the per-path probability is the running product of the
    initial mass and the traversed transition entries.
    """
    paths, probs = enumerate_paths(spec, cap=cap)
    values = np.fromiter(
        (float(functional(paths[j])) for j in range(paths.shape[0])),
        dtype=np.float64, count=paths.shape[0])
    return compensated_dot(probs, values)


def path_observation_sums(spec: ChainSpec, paths: np.ndarray) -> np.ndarray:
    """Vector of observation sums over the supplied path array."""
    out = spec.f[0][paths[:, 0]].copy()
    for i in range(1, spec.n):
        out += spec.f[i][paths[:, i]]
    return out


def observation_bound(spec: ChainSpec) -> float:
    """Essential sup of |f| under the chain law: states of zero marginal
    mass do not count."""
    pi = marginals(spec).pi
    live = pi > 0.0
    if not np.any(live):
        return 0.0
    return float(np.max(np.abs(spec.f[live])))


# --- chain-spec files --------------------------------------------------------
#
# JSON document with fields m (int), n (int), initial (m numbers),
# transitions (n-1 arrays of m arrays of m numbers), f (n arrays of m
# numbers) and an optional name. NaN and infinities are rejected.


def spec_to_dict(spec: ChainSpec) -> dict:
    d = {
        "m": spec.m,
        "n": spec.n,
        "initial": spec.initial.tolist(),
        "transitions": spec.transitions.tolist(),
        "f": spec.f.tolist(),
    }
    if spec.name is not None:
        d["name"] = spec.name
    return d


def spec_from_dict(d: dict, path: str = "<dict>") -> ChainSpec:
    def grab(field, typ):
        if field not in d:
            raise SpecFileError(path, field, "missing")
        v = d[field]
        if typ is int and not isinstance(v, int):
            raise SpecFileError(path, field, f"expected integer, got {v!r}")
        return v

    m = grab("m", int)
    n = grab("n", int)
    arrays = {}
    for field, shape in (("initial", (m,)),
                         ("transitions", (max(n - 1, 0), m, m)),
                         ("f", (n, m))):
        try:
            a = np.asarray(grab(field, list), dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise SpecFileError(path, field, f"not numeric: {e}") from None
        if field == "transitions" and a.size == 0:
            a = a.reshape(0, m, m)
        if a.shape != shape:
            raise SpecFileError(
                path, field, f"shape {a.shape}, expected {shape}")
        if not np.all(np.isfinite(a)):
            raise SpecFileError(path, field, "contains NaN or infinity")
        arrays[field] = a
    name = d.get("name")
    if name is not None and not isinstance(name, str):
        raise SpecFileError(path, "name", "must be a string")
    try:
        spec = ChainSpec(m, n, arrays["initial"], arrays["transitions"],
                         arrays["f"], name)
        _check_dimensions(spec)
        _check_stochastic(spec)
    except (DimensionMismatch, NotStochastic) as e:
        raise SpecFileError(path, "-", str(e)) from None
    return spec


def load_spec(path) -> ChainSpec:
    """Read and validate a chain-spec JSON file."""
    def reject_constant(s):
        raise SpecFileError(path, "-", f"non-finite literal {s!r}")

    try:
        with open(path, "r", encoding="utf-8") as fh:
            d = json.load(fh, parse_constant=reject_constant)
    except OSError as e:
        raise SpecFileError(path, "-", str(e)) from None
    except json.JSONDecodeError as e:
        raise SpecFileError(path, "-", f"invalid JSON: {e}") from None
    if not isinstance(d, dict):
        raise SpecFileError(path, "-", "top level must be an object")
    return spec_from_dict(d, path=str(path))


def save_spec(spec: ChainSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec_to_dict(spec), fh, indent=1, sort_keys=True)
        fh.write("\n")
