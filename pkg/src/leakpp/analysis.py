"""Stationary probabilities of the detection chain, plus an exact oracle.

The closed forms and recurrences here are mean-field self-consistency
equations: they treat an interaction partner as an independent draw from the
per-molecule stationary distribution. That is exact only in the large-n
limit; at small n (and for a single detector molecule at any n, whose driving
noise never averages out) the exact chain deviates, which is why
``exact_stationary_small`` exists as a brute-force cross-check.

Cumulative probabilities index levels 0..s, where level 0 is the detector
itself and level i is the i-th alert species.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations
from typing import Dict, NamedTuple, Optional, Tuple

import numpy as np

from ._io import dump_json, open_text
from .model import Protocol, ProtocolError
from .simulate import Configuration, LeakModel, Strategy


class AnalysisError(RuntimeError):
    """Raised when an exact computation fails to converge or is infeasible."""


@dataclass
class StationaryProfile:
    """Per-level stationary probabilities p[i] and cumulatives p_leq[i], i=0..s."""

    mode: str
    n: int
    k: int
    beta: float
    s: int
    p_leq: np.ndarray
    p: np.ndarray
    p_leq_closed_form: Optional[np.ndarray] = None
    closed_form_max_discrepancy: Optional[float] = None
    detection_lower_bound: Optional[float] = None

    def __post_init__(self):
        self.p_leq = np.asarray(self.p_leq, dtype=np.float64)
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.p_leq.shape != (self.s + 1,) or self.p.shape != (self.s + 1,):
            raise ValueError("profile vectors must cover levels 0..s")
        if (np.diff(self.p_leq) < -1e-12).any():
            raise ValueError("cumulative probabilities must be monotone")
        if self.p_leq[0] < -1e-12 or self.p_leq[-1] > 1 + 1e-12:
            raise ValueError("cumulative probabilities must lie in [0, 1]")

    def to_csv(self, path) -> None:
        with open_text(path) as fh:
            fh.write("i,p_leq,p\n")
            for i in range(self.s + 1):
                fh.write(f"{i},{float(self.p_leq[i])!r},{float(self.p[i])!r}\n")

    def to_json_obj(self) -> dict:
        obj = {
            "mode": self.mode,
            "n": self.n,
            "k": self.k,
            "beta": self.beta,
            "s": self.s,
            "p_leq": self.p_leq.tolist(),
            "p": self.p.tolist(),
        }
        if self.p_leq_closed_form is not None:
            obj["p_leq_closed_form"] = self.p_leq_closed_form.tolist()
            obj["closed_form_max_discrepancy"] = float(self.closed_form_max_discrepancy)
        if self.detection_lower_bound is not None:
            obj["detection_lower_bound"] = float(self.detection_lower_bound)
        return obj

    def to_json(self, path) -> None:
        dump_json(self.to_json_obj(), path)


def _diff(p_leq: np.ndarray) -> np.ndarray:
    p = np.empty_like(p_leq)
    p[0] = p_leq[0]
    p[1:] = np.diff(p_leq)
    return np.maximum(p, 0.0)


def stationary_no_leak(n: int, k: int, s: int) -> StationaryProfile:
    """Leak-free stationary cumulatives 1 - (1 - k/n)^(2^i).

    Evaluated as -expm1(2^i * log1p(-k/n)) so that large exponents neither
    overflow nor lose the tail.
    """
    if not 0 <= k <= n:
        raise ValueError(f"k must be in [0, n], got {k}")
    if s < 1:
        raise ValueError("s must be >= 1")
    if k == n:
        p_leq = np.ones(s + 1)
    else:
        base = math.log1p(-k / n)
        p_leq = -np.expm1(np.exp2(np.arange(s + 1)) * base)
    return StationaryProfile("no_leak", n, k, 0.0, s, p_leq, _diff(p_leq))


def stationary_false_positive(n: int, beta: float, s: int) -> StationaryProfile:
    """Worst-case false-positive stationary profile (no detector present).

    Iterates the exact recurrence
        1 - p_leq[i] = (1 - beta/n) / (1 - beta/(2n)) * (1 - p_leq[i-1])^2
    and also evaluates the closed-form approximation
        p_leq[i] ~ 1 - (1 - beta/(2n))^(2^i - 1),
    reporting both and their maximum discrepancy. The recurrence value is the
    primary one (p_leq).
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if s < 1:
        raise ValueError("s must be >= 1")
    ratio = (1 - beta / n) / (1 - beta / (2 * n))
    q = 1.0
    p_leq = np.zeros(s + 1)
    for i in range(1, s + 1):
        q = ratio * q * q
        p_leq[i] = 1 - q
    base = math.log1p(-beta / (2 * n))
    closed = -np.expm1((np.exp2(np.arange(s + 1)) - 1) * base)
    return StationaryProfile(
        "false_positive", n, 0, beta, s, p_leq, _diff(p_leq),
        p_leq_closed_form=closed,
        closed_form_max_discrepancy=float(np.abs(closed - p_leq).max()),
    )


def stationary_false_negative(n: int, k: int, beta: float, s: int) -> StationaryProfile:
    """Worst-case false-negative stationary profile (all leaks go neutral).

    Iterates p_leq[i] = (1 - beta/(2n)) * (1 - (1 - p_leq[i-1])^2) from
    p_leq[0] = k/n: the leak-free recurrence dampened per level. Also reports
    the detection lower bound (1 - 1/e) * (1 - beta/(2n))^log2(n) that holds
    at s = ceil(log2 n).

    Needs at least one non-detector molecule (k < n): an all-detector
    population has no false-negative question, and the recurrence leaves its
    validity domain there (the cumulatives would decrease).
    """
    if k < 1:
        raise ValueError("false-negative analysis needs k >= 1")
    if k >= n:
        raise ValueError("false-negative analysis needs k < n")
    if beta < 0:
        raise ValueError("beta must be >= 0")
    if s < 1:
        raise ValueError("s must be >= 1")
    damp = 1 - beta / (2 * n)
    p_leq = np.empty(s + 1)
    p_leq[0] = k / n
    for i in range(1, s + 1):
        q = 1 - p_leq[i - 1]
        p_leq[i] = damp * (1 - q * q)
    bound = (1 - 1 / math.e) * damp ** math.log2(n)
    return StationaryProfile(
        "false_negative", n, k, beta, s, p_leq, _diff(p_leq),
        detection_lower_bound=bound,
    )


def detect_probability(profile: StationaryProfile) -> float:
    """Probability that a uniformly sampled molecule maps to detect: p_leq[s]."""
    return float(profile.p_leq[-1])


class TheoremBounds(NamedTuple):
    false_positive: float
    false_negative: float


def theorem_bounds(n: int, beta: float) -> TheoremBounds:
    """Error bounds at s = ceil(log2 n): fp <= 1 - e^-beta, fn <= 1/e + beta log2(n)/n.

    The constant in the false-negative O-term is fixed to 1 for reporting;
    quantitative checks compare against the recurrences instead.
    """
    if beta < 0:
        raise ValueError("beta must be >= 0")
    return TheoremBounds(-math.expm1(-beta), 1 / math.e + beta * math.log2(n) / n)


def stationary_profile(n: int, k: int, s: int, leak: LeakModel) -> StationaryProfile:
    """Profile matching a simulator setup, dispatched on (k, leak)."""
    if leak.beta == 0 or leak.strategy is Strategy.NONE:
        return stationary_no_leak(n, k, s)
    if leak.strategy is Strategy.WORST_FALSE_POSITIVE and k == 0:
        return stationary_false_positive(n, leak.beta, s)
    if leak.strategy is Strategy.WORST_FALSE_NEGATIVE and k >= 1:
        return stationary_false_negative(n, k, leak.beta, s)
    raise ValueError(
        f"no closed-form stationary profile for k={k}, strategy={leak.strategy.value}"
    )


# ---------------------------------------------------------------------------
# exact small-instance oracle


@dataclass(eq=False)
class ExactChain:
    """Exhaustive configuration-space Markov chain for a small instance."""

    protocol: Protocol
    n: int
    k: int
    states: Tuple[Tuple[int, ...], ...]
    index: Dict[Tuple[int, ...], int]
    transition: np.ndarray
    stationary: np.ndarray
    iterations: int
    species_marginals: np.ndarray
    detect_marginal: float

    def stationary_of(self, counts: Tuple[int, ...]) -> float:
        return float(self.stationary[self.index[counts]])


def _compositions(total: int, parts: int):
    """All tuples of `parts` non-negative ints summing to `total`."""
    if parts == 0:
        if total == 0:
            yield ()
        return
    for bars in combinations(range(total + parts - 1), parts - 1):
        prev = -1
        out = []
        for b in bars:
            out.append(b - prev - 1)
            prev = b
        out.append(total + parts - 2 - prev)
        yield tuple(out)


def exact_stationary_small(
    protocol: Protocol,
    n: int,
    leak: LeakModel,
    k: int = 0,
    init: Optional[Configuration] = None,
    max_states: int = 1_000_000,
    tol: float = 1e-10,
    max_iters: int = 1_000_000,
) -> ExactChain:
    """Enumerate configurations, build the exact step matrix, power-iterate.

    The state space is every count vector summing to n, with the detector
    species (level 0, if present) pinned to k since its count is conserved;
    enumerating other detector counts would only add disconnected slices.

    Power iteration starts from the point mass on ``init`` when given, else
    from the uniform distribution over the space. The start matters only when
    the leak-free chain is reducible (several absorbing components): passing
    the simulator's start state then yields exactly the absorbing
    distribution a long simulator run measures.
    """
    m = len(protocol.species)
    levels = protocol.arrays()[3]
    d_ids = np.nonzero(levels == 0)[0]
    d: Optional[int] = int(d_ids[0]) if d_ids.size == 1 else None
    if d is None and k != 0:
        raise ProtocolError("k > 0 requires a unique level-0 detector species")
    if not 0 <= k <= n:
        raise ValueError("k must be in [0, n]")

    free = [i for i in range(m) if i != d]
    states = []
    for comp in _compositions(n - k if d is not None else n, len(free)):
        vec = [0] * m
        if d is not None:
            vec[d] = k
        for idx, c in zip(free, comp):
            vec[idx] = c
        states.append(tuple(vec))
    if len(states) > max_states:
        raise AnalysisError(f"state space has {len(states)} configurations (> {max_states})")
    index = {st: i for i, st in enumerate(states)}

    prod1, prod2, detect_mask, _ = protocol.arrays()
    leak_map = leak.resolve(protocol)
    lp = leak.beta / n

    P = np.zeros((len(states), len(states)))
    for si, st in enumerate(states):
        if lp > 0:
            for a in range(m):
                if st[a] == 0:
                    continue
                pa = lp * st[a] / n
                tgt = leak_map[a]
                if tgt >= 0 and tgt != a:
                    nxt = list(st)
                    nxt[a] -= 1
                    nxt[tgt] += 1
                    P[si, index[tuple(nxt)]] += pa
                else:
                    P[si, si] += pa
        for a in range(m):
            if st[a] == 0:
                continue
            for b in range(m):
                nb = st[b] - (1 if b == a else 0)
                if nb == 0:
                    continue
                pab = (1 - lp) * st[a] * nb / (n * (n - 1))
                c = prod1[a, b]
                if c < 0:
                    P[si, si] += pab
                else:
                    nxt = list(st)
                    nxt[a] -= 1
                    nxt[b] -= 1
                    nxt[c] += 1
                    nxt[prod2[a, b]] += 1
                    P[si, index[tuple(nxt)]] += pab

    row_err = np.abs(P.sum(axis=1) - 1).max()
    if row_err > 1e-12:
        raise AnalysisError(f"transition rows sum to 1 only within {row_err:.2e}")

    if init is not None:
        key = tuple(int(c) for c in init.counts)
        if key not in index:
            raise ValueError("init configuration is not in the enumerated state space")
        pi = np.zeros(len(states))
        pi[index[key]] = 1.0
    else:
        pi = np.full(len(states), 1 / len(states))
    for it in range(1, max_iters + 1):
        nxt = pi @ P
        if np.abs(nxt - pi).max() < tol:
            pi = nxt
            break
        pi = nxt
    else:
        raise AnalysisError(f"power iteration did not converge in {max_iters} iterations")

    state_arr = np.array(states, dtype=np.float64)
    marginals = pi @ state_arr / n
    detect_marginal = float(marginals[detect_mask].sum())
    return ExactChain(
        protocol=protocol,
        n=n,
        k=k,
        states=tuple(states),
        index=index,
        transition=P,
        stationary=pi,
        iterations=it,
        species_marginals=marginals,
        detect_marginal=detect_marginal,
    )


def total_variation(p: Dict[Tuple[int, ...], float], q: Dict[Tuple[int, ...], float]) -> float:
    """TV distance between two distributions over configuration tuples."""
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(key, 0.0) - q.get(key, 0.0)) for key in keys)
