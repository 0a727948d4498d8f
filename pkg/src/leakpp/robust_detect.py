"""Generators for the leveled detection protocols and their start states.

``build_robust_detect`` emits the s-level protocol exactly as its six rule
families are written: the level-pair family ranges over i, j in 1..s-1, so a
pair of one top-level molecule with a lower alert level is a null
interaction.

``build_truncated_ideal`` realizes the idealized unbounded-level chain by
collapsing every level above ``cap`` into one neutral label, which makes the
min-rule total over level pairs: (X_i, X_cap) reacts to (X_{i+1}, X_{i+1}).
That totality is what gives the ideal chain its exact min-coupling property,
and it is the one place the two generators differ; see the package README.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Union

import numpy as np

from .model import Output, Protocol, ProtocolError, Reaction, Species, make_protocol
from .simulate import Configuration


@dataclass(frozen=True)
class DetectParams:
    """Population size n, detector count k, and alert-level count s.

    s defaults to ceil(log2 n), the level count at which detection succeeds
    with constant probability.
    """

    n: int
    k: int
    s: Optional[int] = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not 0 <= self.k <= self.n:
            raise ValueError(f"k must be in [0, n], got k={self.k}, n={self.n}")
        if self.s is None:
            object.__setattr__(self, "s", max(1, math.ceil(math.log2(self.n))))
        if self.s < 1:
            raise ValueError(f"s must be >= 1, got {self.s}")


def _chain_species(s: int, neutral_name: str) -> list:
    species = [Species(0, "D", Output.DETECT, level=0)]
    species += [Species(i, f"X{i}", Output.DETECT, level=i) for i in range(1, s + 1)]
    species.append(Species(s + 1, neutral_name, Output.NONDETECT, level=s + 1))
    return species


def build_robust_detect(s: int) -> Protocol:
    """The s-level detection protocol: D, X1..Xs (detect), N (nondetect).

    Rule families (written once per unordered pair):
      D + Xi -> D + X1        for i in 2..s
      D + N  -> D + X1
      Xs + Xs -> N + N
      Xs + N  -> N + N
      Xi + Xj -> Xm + Xm      for i, j in 1..s-1, m = min(i, j) + 1
      Xi + N  -> X(i+1) x 2   for i in 1..s-1

    D + X1 and D + D are null interactions rather than self-loop rules.
    """
    if s < 1:
        raise ValueError(f"s must be >= 1, got {s}")
    species = _chain_species(s, "N")
    D, N = species[0], species[s + 1]
    X = species  # X[i] is level i for 1 <= i <= s
    reactions = []
    for i in range(2, s + 1):
        reactions.append(Reaction((D, X[i]), (D, X[1])))
    reactions.append(Reaction((D, N), (D, X[1])))
    reactions.append(Reaction((X[s], X[s]), (N, N)))
    reactions.append(Reaction((X[s], N), (N, N)))
    for i in range(1, s):
        for j in range(i, s):
            m = min(i, j) + 1
            reactions.append(Reaction((X[i], X[j]), (X[m], X[m])))
    for i in range(1, s):
        reactions.append(Reaction((X[i], N), (X[i + 1], X[i + 1])))
    return make_protocol(species, reactions)


def build_truncated_ideal(cap: int) -> Protocol:
    """The idealized chain {D + Xi -> D + X1, Xi + Xj -> Xm + Xm} truncated.

    All levels above ``cap`` are collapsed into the single label Xinf
    (nondetect, level cap+1). The min-rule is total over level pairs, so
    unlike build_robust_detect, (Xi, Xcap) -> (X(i+1), X(i+1)) for i < cap.
    """
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    species = _chain_species(cap, "Xinf")
    D, INF = species[0], species[cap + 1]
    X = species
    reactions = []
    for i in range(2, cap + 1):
        reactions.append(Reaction((D, X[i]), (D, X[1])))
    reactions.append(Reaction((D, INF), (D, X[1])))
    for i in range(1, cap + 1):
        for j in range(i, cap + 1):
            m = min(i, j) + 1
            out = INF if m > cap else X[m]
            reactions.append(Reaction((X[i], X[j]), (out, out)))
    for i in range(1, cap + 1):
        m = i + 1  # min(i, >cap) + 1
        out = INF if m > cap else X[m]
        reactions.append(Reaction((X[i], INF), (out, out)))
    return make_protocol(species, reactions)


def initial_configuration(
    p: Protocol,
    params: DetectParams,
    init: Union[str, Mapping[str, int]] = "all_n",
) -> Configuration:
    """Start state with params.k detector molecules.

    ``init="all_n"`` puts every non-detector molecule in the (unique)
    nondetect species. A mapping of species name to count gives an arbitrary
    start; it must sum to n and agree with k on the detector count.
    """
    counts = np.zeros(len(p.species), dtype=np.int64)
    level0 = [sp for sp in p.species if sp.level == 0]
    if params.k > 0 and not level0:
        raise ProtocolError("protocol has no level-0 detector species but k > 0")
    if isinstance(init, str):
        if init != "all_n":
            raise ValueError(f"unknown init preset {init!r}")
        neutral = [sp for sp in p.species if sp.output is Output.NONDETECT]
        if len(neutral) != 1:
            raise ProtocolError("all_n init needs exactly one nondetect species")
        if level0:
            counts[level0[0].id] = params.k
        counts[neutral[0].id] += params.n - params.k
    else:
        for name, c in init.items():
            if c < 0:
                raise ValueError(f"negative count for {name!r}")
            counts[p.species_by_name(name).id] += c
        if counts.sum() != params.n:
            raise ValueError(f"custom counts sum to {counts.sum()}, expected n={params.n}")
        if level0 and counts[level0[0].id] != params.k:
            raise ValueError(
                f"custom init has {counts[level0[0].id]} detector molecules, expected k={params.k}"
            )
    return Configuration(counts)
