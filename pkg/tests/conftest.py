import numpy as np
import pytest
from hypothesis import strategies as st

from leakpp.model import Output, Reaction, Species, make_protocol


@st.composite
def protocols(draw):
    """Random small valid protocols (no conflicting rule declarations)."""
    m = draw(st.integers(min_value=2, max_value=6))
    outputs = draw(
        st.lists(st.sampled_from(list(Output)), min_size=m, max_size=m)
    )
    species = [Species(i, f"S{i}", outputs[i]) for i in range(m)]
    used = set()
    reactions = []
    for _ in range(draw(st.integers(min_value=0, max_value=8))):
        a = draw(st.integers(0, m - 1))
        b = draw(st.integers(0, m - 1))
        if (a, b) in used or (b, a) in used:
            continue
        used.add((a, b))
        c = draw(st.integers(0, m - 1))
        d = draw(st.integers(0, m - 1))
        reactions.append(Reaction((species[a], species[b]), (species[c], species[d])))
    return make_protocol(species, reactions)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
