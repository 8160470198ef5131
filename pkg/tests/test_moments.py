import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from freepressure.measures import make_measure
from freepressure.moments import (MomentSpec, free_cumulants, free_moment, noncrossing_pairings_count,
                                  semicircle_moments)
from freepressure.ncpoly import NCPolynomial, X, words_up_to

from oracles import brute_force_free_semicircular


def test_semicircle_moments_are_catalan():
    m = semicircle_moments(10)
    assert list(m[::2]) == [1, 1, 2, 5, 14, 42]
    assert np.all(m[1::2] == 0)
    assert semicircle_moments(4, variance=2.0)[4] == pytest.approx(8.0)


def test_free_cumulants_of_semicircle_and_arcsine():
    k = free_cumulants(semicircle_moments(8), 8)
    assert np.allclose(k[1:], [0, 1, 0, 0, 0, 0, 0, 0], atol=1e-12)
    arc = [1, 0, 2, 0, 6, 0, 20]  # central binomial moments of arcsine on [-2, 2]
    assert np.allclose(free_cumulants(np.array(arc, float), 6)[1:], [0, 2, 0, -2, 0, 4], atol=1e-12)


def test_free_cumulants_need_enough_moments():
    with pytest.raises(ValueError):
        free_cumulants(np.ones(3), 5)


@pytest.mark.parametrize("degree", [2, 4, 6])
def test_free_semicircular_matches_pair_partition_count(degree):
    spec = MomentSpec.semicircular(2, degree)
    for w in words_up_to(2, degree, include_empty=True):
        assert spec.value(w) == pytest.approx(brute_force_free_semicircular(w), abs=1e-12)
        assert noncrossing_pairings_count(w) == brute_force_free_semicircular(w)


def test_free_product_formula_for_mixed_word():
    # for free a, b: tau(a1 b1 a2 b2) = tau(a1 a2) tau(b1) tau(b2) + tau(a1) tau(a2) tau(b1 b2)
    #                                   - tau(a1) tau(a2) tau(b1) tau(b2)
    ma = make_measure("arcsine", {"a": 2.0}, 2000, 2.0).moments(8)
    mb = make_measure("free_poisson", {"scale": 1.0}, 2000, 4.0).moments(8)
    kap = [free_cumulants(ma, 8), free_cumulants(mb, 8)]
    got = free_moment((0, 0, 1, 1, 0, 0, 1, 1), kap)
    ref = ma[4] * mb[2] ** 2 + ma[2] ** 2 * mb[4] - ma[2] ** 2 * mb[2] ** 2
    assert got == pytest.approx(ref, rel=1e-10)
    assert free_moment((0, 1), kap) == pytest.approx(ma[1] * mb[1], abs=1e-12)


def test_functional_convention():
    vals = {w: 0.0 for w in words_up_to(2, 2, include_empty=True)}
    vals[(0, 1)] = 1.0
    spec = MomentSpec(2, 2, vals)
    comm = 1j * (X(1) * X(2) - X(2) * X(1))
    assert spec(comm) == pytest.approx(-1.0)
    assert not spec.is_reversal_symmetric()
    sym = spec.symmetrized()
    assert sym.is_reversal_symmetric() and sym(comm) == pytest.approx(0.0)


def test_missing_words_rejected():
    with pytest.raises(ValueError):
        MomentSpec(1, 2, {(0,): 0.0})


@settings(max_examples=30)
@given(st.dictionaries(st.sampled_from(words_up_to(2, 3)), st.floats(-3, 3), min_size=1),
       st.lists(st.complex_numbers(max_magnitude=2, allow_nan=False, allow_infinity=False), min_size=4, max_size=4))
def test_functional_is_star_preserving(overrides, cs):
    vals = {w: 0.1 * len(w) for w in words_up_to(2, 3, include_empty=True)}
    vals.update(overrides)
    spec = MomentSpec(2, 3, vals)
    p = NCPolynomial({(0,): cs[0], (0, 1): cs[1], (1, 1, 0): cs[2], (): cs[3]}, 2)
    padj = NCPolynomial({tuple(reversed(w)): np.conj(c) for w, c in p.terms.items()}, 2)
    assert spec(padj) == pytest.approx(np.conj(spec(p)), abs=1e-12)


def test_csv_round_trip(tmp_path):
    spec = MomentSpec.semicircular(2, 4)
    spec.stderr = {w: 0.01 for w in spec.values}
    path = tmp_path / "mom.csv"
    spec.to_csv(path)
    back = MomentSpec.from_csv(path)
    assert back.values == spec.values and back.stderr == spec.stderr
    assert back.nvars == 2 and back.degree == 4


def test_from_measure_and_truncation():
    spec = MomentSpec.from_measure(make_measure("semicircle", {"m": 0.0, "r": 2.0}, 1000, 2.0), 6)
    assert spec.value((0, 0, 0, 0)) == pytest.approx(2.0, abs=1e-4)
    short = spec.truncated(2)
    assert short.degree == 2 and (0, 0, 0) not in short.values
    assert math.isclose(short.value(()), 1.0)
