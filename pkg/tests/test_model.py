import pytest
from hypothesis import given, settings

from conftest import protocols
from leakpp.model import (
    Output,
    ProtocolError,
    Reaction,
    Species,
    classify_catalytic,
    make_protocol,
)


def _species(*specs):
    return [Species(i, name, out) for i, (name, out) in enumerate(specs)]


def _proto(names_outputs, rules):
    species = _species(*names_outputs)
    by = {sp.name: sp for sp in species}
    reactions = [
        Reaction((by[a], by[b]), (by[c], by[d])) for a, b, c, d in rules
    ]
    return make_protocol(species, reactions)


D, N = ("D", Output.DETECT), ("N", Output.NONDETECT)


class TestMakeProtocol:
    def test_direct_construction(self):
        p = _proto(
            [("A", Output.DETECT), ("B", Output.DETECT), ("C", Output.DETECT), ("Dd", Output.DETECT)],
            [("A", "B", "C", "Dd")],
        )
        a, b = p.species_by_name("A"), p.species_by_name("B")
        c, d = p.apply(a, b)
        assert (c.name, d.name) == ("C", "Dd")
        # mirrored order with positionally swapped products
        c2, d2 = p.apply(b, a)
        assert (c2.name, d2.name) == ("Dd", "C")

    def test_inconsistent_symmetric_entries_rejected(self):
        with pytest.raises(ProtocolError, match="inconsistent|conflict"):
            _proto(
                [("A", Output.DETECT), ("B", Output.DETECT), ("C", Output.DETECT), ("Dd", Output.DETECT)],
                [("A", "B", "C", "Dd"), ("B", "A", "B", "A")],
            )

    def test_conflicting_same_order_rejected(self):
        with pytest.raises(ProtocolError, match="conflict"):
            _proto(
                [("A", Output.DETECT), ("B", Output.DETECT), ("C", Output.DETECT)],
                [("A", "B", "C", "C"), ("A", "B", "A", "A")],
            )

    def test_duplicate_species_rejected(self):
        species = [Species(0, "A", Output.DETECT), Species(1, "A", Output.DETECT)]
        with pytest.raises(ProtocolError, match="duplicate"):
            make_protocol(species, [])

    def test_undeclared_species_rejected(self):
        a = Species(0, "A", Output.DETECT)
        ghost = Species(1, "G", Output.DETECT)
        with pytest.raises(ProtocolError, match="undeclared"):
            make_protocol([a], [Reaction((a, ghost), (a, a))])

    def test_identity_rules_become_null(self):
        p = _proto([("A", Output.DETECT), ("B", Output.DETECT)], [("A", "B", "A", "B")])
        assert p.rules() == []
        assert p.apply(p.species_by_name("A"), p.species_by_name("B")) is None

    def test_self_pair_with_distinct_products(self):
        # L + L -> A + B is legal; the self pair is its own mirror
        p = _proto(
            [("L", Output.DETECT), ("A", Output.DETECT), ("B", Output.DETECT)],
            [("L", "L", "A", "B")],
        )
        ell = p.species_by_name("L")
        prods = p.apply(ell, ell)
        assert tuple(sp.name for sp in prods) == ("A", "B")

    def test_both_orders_accepted_when_consistent(self):
        p = _proto(
            [("A", Output.DETECT), ("B", Output.DETECT), ("C", Output.DETECT), ("Dd", Output.DETECT)],
            [("A", "B", "C", "Dd"), ("B", "A", "Dd", "C")],
        )
        assert len(p.rules()) == 1


class TestApply:
    def test_null_interaction_is_none_not_error(self):
        p = _proto([D, N], [("D", "N", "D", "D")])
        n = p.species_by_name("N")
        assert p.apply(n, n) is None

    def test_apply_is_deterministic(self):
        p = _proto([D, N], [("D", "N", "D", "D")])
        d, n = p.species_by_name("D"), p.species_by_name("N")
        assert p.apply(d, n) == p.apply(d, n)

    def test_foreign_species_rejected(self):
        p = _proto([D, N], [])
        with pytest.raises(ProtocolError, match="belong"):
            p.apply(Species(0, "Z", Output.DETECT), p.species_by_name("N"))


class TestClassifyCatalytic:
    def test_catalyst_example(self):
        # A + C -> B + C keeps C fixed; A + B -> A + Dd changes B, so A is
        # catalytic in one rule but not overall.
        p = _proto(
            [("A", Output.DETECT), ("B", Output.DETECT), ("C", Output.DETECT), ("Dd", Output.DETECT)],
            [("A", "C", "B", "C"), ("A", "B", "A", "Dd")],
        )
        part = classify_catalytic(p)
        assert {sp.name for sp in part.catalytic} == {"C"}
        assert {sp.name for sp in part.non_catalytic} == {"A", "B", "Dd"}

    def test_disappearing_species_is_non_catalytic(self):
        p = _proto(
            [("L", Output.DETECT), ("A", Output.DETECT), ("B", Output.DETECT)],
            [("L", "L", "A", "B")],
        )
        part = classify_catalytic(p)
        assert p.species_by_name("L") in part.non_catalytic

    def test_swap_rule_preserves_counts(self):
        # positional swap changes molecule states but not species counts
        p = _proto(
            [("A", Output.DETECT), ("B", Output.DETECT)], [("A", "B", "B", "A")]
        )
        part = classify_catalytic(p)
        assert {sp.name for sp in part.catalytic} == {"A", "B"}

    def test_partition_covers_species(self):
        p = _proto([D, N], [("D", "N", "D", "D")])
        part = classify_catalytic(p)
        assert part.catalytic | part.non_catalytic == set(p.species)
        assert not (part.catalytic & part.non_catalytic)


@settings(max_examples=60, deadline=None)
@given(protocols())
def test_apply_preserves_catalytic_counts(p):
    """For every pair, catalytic species counts match across in/out."""
    catalytic = {sp.id for sp in classify_catalytic(p).catalytic}
    for a in p.species:
        for b in p.species:
            prods = p.apply(a, b)
            if prods is None:
                continue
            c, d = prods
            for sp_id in catalytic:
                inn = (a.id == sp_id) + (b.id == sp_id)
                out = (c.id == sp_id) + (d.id == sp_id)
                assert inn == out


@settings(max_examples=60, deadline=None)
@given(protocols())
def test_table_is_symmetric_under_swap(p):
    for a in p.species:
        for b in p.species:
            if a.id == b.id:
                continue  # a self pair stores a single orientation
            fwd = p.apply(a, b)
            rev = p.apply(b, a)
            if fwd is None:
                assert rev is None
            else:
                assert rev == (fwd[1], fwd[0])
