"""Core representation of a population protocol.

A protocol is a set of species together with a transition table over ordered
species pairs. Pairs without an entry are null interactions: the two molecules
keep their states. The first reactant maps positionally to the first product
and the second to the second, so a rule written for one order determines the
mirrored order as well.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np


class Output(enum.Enum):
    DETECT = "detect"
    NONDETECT = "nondetect"


class ProtocolError(ValueError):
    """Raised when a protocol definition is malformed or inconsistent."""


@dataclass(frozen=True)
class Species:
    """A molecular state.

    ``level`` is optional metadata used by detection protocols (0 for the
    detectable species, ``i`` for the i-th alert level, ``s+1`` for neutral).
    Generic protocols leave it ``None``. It is not part of structural
    equality between protocols.
    """

    id: int
    name: str
    output: Output
    level: Optional[int] = None


@dataclass(frozen=True)
class Reaction:
    """An interaction rule ``A + B -> C + D`` with positional matching."""

    reactants: Tuple[Species, Species]
    products: Tuple[Species, Species]

    def __str__(self) -> str:
        a, b = self.reactants
        c, d = self.products
        return f"{a.name} + {b.name} -> {c.name} + {d.name}"


@dataclass(frozen=True)
class CatalyticPartition:
    """Split of the species set into catalytic and non-catalytic species."""

    catalytic: frozenset
    non_catalytic: frozenset


class Protocol:
    """Validated species list plus a symmetrized ordered-pair transition table.

    Instances are immutable after construction and safe for concurrent reads.
    Structural equality compares species names and outputs (in id order) and
    the transition table; the optional ``level`` annotation is excluded.
    """

    def __init__(self, species: Sequence[Species], table: Dict[Tuple[int, int], Tuple[int, int]]):
        self.species: Tuple[Species, ...] = tuple(species)
        self.table: Dict[Tuple[int, int], Tuple[int, int]] = dict(table)
        self._by_name = {sp.name: sp for sp in self.species}
        self._arrays = None
        self._partition = None

    # -- queries ---------------------------------------------------------

    def __len__(self) -> int:
        return len(self.species)

    def species_by_name(self, name: str) -> Species:
        try:
            return self._by_name[name]
        except KeyError:
            raise ProtocolError(f"unknown species {name!r}") from None

    def apply(self, a: Species, b: Species) -> Optional[Tuple[Species, Species]]:
        """Products of the ordered interaction (a, b), or None if null."""
        for sp in (a, b):
            if sp.id >= len(self.species) or self.species[sp.id] != sp:
                raise ProtocolError(f"species {sp.name!r} does not belong to this protocol")
        prods = self.table.get((a.id, b.id))
        if prods is None:
            return None
        return self.species[prods[0]], self.species[prods[1]]

    def rules(self) -> List[Reaction]:
        """Non-null rules, one per unordered reactant pair, canonically ordered."""
        out = []
        for (i, j) in sorted(self.table):
            if i > j:
                continue
            c, d = self.table[(i, j)]
            out.append(
                Reaction(
                    (self.species[i], self.species[j]),
                    (self.species[c], self.species[d]),
                )
            )
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, Protocol):
            return NotImplemented
        return (
            [(sp.name, sp.output) for sp in self.species]
            == [(sp.name, sp.output) for sp in other.species]
            and self.table == other.table
        )

    def __repr__(self) -> str:
        return f"Protocol({len(self.species)} species, {len(self.rules())} rules)"

    # -- dense views used by the simulator --------------------------------

    def arrays(self):
        """(prod1, prod2, detect_mask, level_vec) as dense numpy arrays.

        prod1/prod2 hold product species ids per ordered reactant pair with -1
        marking null interactions; level_vec holds -1 where level is absent.
        """
        if self._arrays is None:
            m = len(self.species)
            prod1 = np.full((m, m), -1, dtype=np.int64)
            prod2 = np.full((m, m), -1, dtype=np.int64)
            for (i, j), (c, d) in self.table.items():
                prod1[i, j] = c
                prod2[i, j] = d
            detect = np.array([sp.output is Output.DETECT for sp in self.species], dtype=np.bool_)
            levels = np.array(
                [sp.level if sp.level is not None else -1 for sp in self.species],
                dtype=np.int64,
            )
            self._arrays = (prod1, prod2, detect, levels)
        return self._arrays

    def catalytic_mask(self) -> np.ndarray:
        part = classify_catalytic(self)
        names = {sp.name for sp in part.catalytic}
        return np.array([sp.name in names for sp in self.species], dtype=np.bool_)


def make_protocol(species: Sequence[Species], reactions: Iterable[Reaction]) -> Protocol:
    """Build and validate a Protocol from species and reaction declarations.

    Rules are expanded to both reactant orders with positionally swapped
    products. Declaring both orders is allowed only when they agree under the
    swap. Identity rules (products equal reactants) are normalized away into
    null interactions after consistency checking.
    """
    seen_names = set()
    for idx, sp in enumerate(species):
        if sp.id != idx:
            raise ProtocolError(f"species ids must be dense 0..{len(species) - 1}; got {sp.id} at index {idx}")
        if sp.name in seen_names:
            raise ProtocolError(f"duplicate species {sp.name!r}")
        seen_names.add(sp.name)

    by_key = {(sp.id, sp.name): sp for sp in species}

    declared: Dict[Tuple[int, int], Tuple[int, int]] = {}
    for rx in reactions:
        for sp in (*rx.reactants, *rx.products):
            if by_key.get((sp.id, sp.name)) != sp:
                raise ProtocolError(f"reaction {rx} uses undeclared species {sp.name!r}")
        key = (rx.reactants[0].id, rx.reactants[1].id)
        val = (rx.products[0].id, rx.products[1].id)
        if key in declared and declared[key] != val:
            raise ProtocolError(f"conflicting rules for pair {rx.reactants[0].name} + {rx.reactants[1].name}")
        declared[key] = val

    table: Dict[Tuple[int, int], Tuple[int, int]] = dict(declared)
    for (a, b), (c, d) in declared.items():
        if a == b:
            # A self-pair is its own mirror; the two product orientations
            # describe the same multiset outcome, so nothing to reconcile.
            continue
        mirror = (b, a)
        if mirror in declared:
            if declared[mirror] != (d, c):
                raise ProtocolError(
                    f"inconsistent symmetric rules for {species[a].name} + {species[b].name}: "
                    f"the two orders disagree under positional swap"
                )
        else:
            table[mirror] = (d, c)

    for key in [k for k, v in table.items() if k == v]:
        del table[key]

    return Protocol(species, table)


def classify_catalytic(p: Protocol) -> CatalyticPartition:
    """Partition species by whether any rule changes their count.

    A species is catalytic iff for every rule its multiset count among the
    reactants equals its count among the products.
    """
    if p._partition is not None:
        return p._partition
    changed = set()
    for (a, b), (c, d) in p.table.items():
        for sp_id in {a, b, c, d}:
            if (a == sp_id) + (b == sp_id) != (c == sp_id) + (d == sp_id):
                changed.add(sp_id)
    catalytic = frozenset(sp for sp in p.species if sp.id not in changed)
    non_catalytic = frozenset(sp for sp in p.species if sp.id in changed)
    p._partition = CatalyticPartition(catalytic, non_catalytic)
    return p._partition
