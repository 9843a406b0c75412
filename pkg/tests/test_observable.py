import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qnetcorr import subsets
from qnetcorr.observable import ObservableSyntaxError, parse_observable


def test_literal_round_trip():
    for J in range(1, 6):
        for m in subsets.all_masks(J):
            assert subsets.parse_literal(subsets.literal(m), J) == m
    assert subsets.literal(0) == "[]"
    assert subsets.literal(0b101) == "[1,3]"


@pytest.mark.parametrize("bad", ["[1,", "1,2", "[a]", "[1,1]", "[4]"])
def test_literal_rejects(bad):
    with pytest.raises(ValueError):
        subsets.parse_literal(bad, 3)


def test_proper_subsets_and_supersets():
    assert sorted(subsets.proper_subsets(0b101)) == [0, 0b001, 0b100]
    assert sorted(subsets.proper_supersets(0b001, 3)) == [0b011, 0b101, 0b111]


def test_evaluation_basics():
    f = parse_observable("qc(1,2) + 3*down(2) - min(q(1), 1) + ndown")
    # D = {2}, n = (5, 0): min(5,2) + 3 - 1 + 1
    assert f(0b10, (5, 0)) == 5.0
    assert f(0, (0, 0)) == 0.0


def test_saturation_profile():
    f = parse_observable("qc(1,2)*qc(2,4) + qc(1,3)")
    assert f.bounded
    assert f.cutoff(1) == 3 and f.cutoff(2) == 4 and f.cutoff(3) == 0
    g = parse_observable("q(2) + qc(1,1)")
    assert not g.bounded
    assert math.isinf(g.cutoff(2))


def test_vectorised_matches_pointwise():
    f = parse_observable("max(qc(1,3), q(2)) * (1 - down(1)) + ndown")
    masks = np.array([0, 1, 2, 3])
    n1 = np.array([0, 4, 2, 1])
    n2 = np.array([3, 0, 1, 5])
    vec = f.evaluate(masks, (n1, n2))
    for k in range(4):
        assert vec[k] == f(int(masks[k]), (int(n1[k]), int(n2[k])))


@pytest.mark.parametrize("text,pos", [("qc(1 2)", 5), ("q(0)", 2), ("foo(1)", 0), ("1 +", 3), ("(q(1)", 5),
                                      ("q(1) $", 5)])
def test_syntax_errors_carry_position(text, pos):
    with pytest.raises(ObservableSyntaxError) as info:
        parse_observable(text)
    assert info.value.position == pos


# --- property tests ---------------------------------------------------------------

_atom = st.one_of(
    st.integers(0, 9).map(str),
    st.integers(1, 3).map(lambda j: f"q({j})"),
    st.tuples(st.integers(1, 3), st.integers(0, 4)).map(lambda t: f"qc({t[0]},{t[1]})"),
    st.integers(1, 3).map(lambda j: f"down({j})"),
    st.just("ndown"),
)


def _combine(children):
    return st.one_of(
        st.tuples(children, st.sampled_from([" + ", " - ", "*"]), children).map(lambda t: f"{t[0]}{t[1]}{t[2]}"),
        children.map(lambda c: f"({c})"),
        children.map(lambda c: f"-{c}"),
        st.tuples(st.sampled_from(["min", "max"]), children, children).map(lambda t: f"{t[0]}({t[1]}, {t[2]})"),
    )


expressions = st.recursive(_atom, _combine, max_leaves=8)
states = st.tuples(st.integers(0, 7), st.tuples(st.integers(0, 8), st.integers(0, 8), st.integers(0, 8)))


@settings(max_examples=200, deadline=None)
@given(expressions, states)
def test_print_parse_round_trip(text, state):
    f = parse_observable(text)
    g = parse_observable(f.text)
    assert g.text == f.text
    D, n = state
    assert f(D, n) == g(D, n)


@settings(max_examples=200, deadline=None)
@given(expressions, states, st.integers(1, 3), st.integers(0, 5))
def test_constant_beyond_cutoff(text, state, j, bump):
    """A bounded observable ignores n_j once n_j is past its cutoff."""
    f = parse_observable(text)
    if not f.bounded:
        return
    D, n = state
    c = int(f.cutoff(j))
    base = list(n)
    base[j - 1] = c
    moved = list(base)
    moved[j - 1] = c + bump
    assert f(D, base) == f(D, moved)
