import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from freepressure.ncpoly import (MatrixTuple, NCPolynomial, SupNormConfig, TensorPolynomial, X, adjoint,
                                 cyclic_reduce, dilate, evaluate, pauli, parse_word, sup_norm, tensor_trace_eval,
                                 trace_eval, transform, word_key, word_str, words_up_to)

SX, SY, SZ = pauli()


# -- strategies ------------------------------------------------------------------

coef = st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False)


@st.composite
def polys(draw, nvars=2, max_len=3, max_terms=5):
    words = st.lists(st.integers(0, nvars - 1), max_size=max_len).map(tuple)
    terms = draw(st.dictionaries(words, coef, max_size=max_terms))
    return NCPolynomial(terms, nvars)


@st.composite
def hermitian_tuple(draw, N=2, n=3):
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    G = rng.normal(size=(N, n, n)) + 1j * rng.normal(size=(N, n, n))
    return 0.5 * (G + np.conj(np.swapaxes(G, -1, -2)))


# -- words -------------------------------------------------------------------------

def test_word_order_is_length_then_lex():
    ws = words_up_to(2, 2, include_empty=True)
    assert ws == sorted(ws, key=word_key)
    assert ws[:3] == [(), (0,), (1,)]


def test_word_string_round_trip():
    for w in words_up_to(3, 3, include_empty=True):
        assert parse_word(word_str(w)) == w


# -- adjoint ----------------------------------------------------------------------

def test_adjoint_examples():
    assert adjoint(X(1) * X(2)) == X(2) * X(1)
    comm = 1j * (X(1) * X(2) - X(2) * X(1))
    assert adjoint(comm) == comm and comm.is_selfadjoint()
    p = (2 + 1j) * X(1) * X(1) * X(2)
    assert adjoint(p) == (2 - 1j) * X(2) * X(1) * X(1)


@given(polys())
def test_adjoint_is_involution(p):
    assert adjoint(adjoint(p)) == p


@settings(max_examples=40)
@given(polys(), hermitian_tuple())
def test_adjoint_matches_conjugate_transpose(p, A):
    assert np.allclose(evaluate(adjoint(p), A), np.conj(evaluate(p, A).T))


@settings(max_examples=40)
@given(polys(), hermitian_tuple())
def test_trace_of_selfadjoint_is_real(p, A):
    s = p + adjoint(p)
    assert abs(np.imag(trace_eval(s, A))) < 1e-10


# -- evaluation ---------------------------------------------------------------------

def test_pauli_examples():
    P = np.stack([SX, SY])
    assert np.allclose(evaluate(X(1) * X(2) + X(2) * X(1), P), 0)
    assert trace_eval(X(1) * X(1), P) == pytest.approx(1)
    comm = 1j * (X(1) * X(2) - X(2) * X(1))
    assert abs(trace_eval(comm, P)) < 1e-14


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        trace_eval(X(1) * X(2), [np.eye(2), np.eye(3)])


def test_matrix_tuple_checks():
    MatrixTuple(np.stack([SX, SY]), R=1.0)
    with pytest.raises(ValueError):
        MatrixTuple(np.stack([SX, 2 * SY]), R=1.0)
    with pytest.raises(ValueError):
        MatrixTuple(np.array([[[0, 1], [0, 0]]]))


# -- transformations --------------------------------------------------------------------

def test_transform_examples():
    assert transform(X(1) * X(1), "dilate", R=2, R1=1) == 4 * X(1) * X(1)
    p = X(1) * X(2) + 0.5 * X(2) * X(2) * X(1)
    assert transform(p, "linear", A=np.eye(2)).allclose(p)
    assert transform(X(2), "triangular", shifts=[None, X(1)]).allclose(X(2) + X(1, 2))
    with pytest.raises(ValueError):
        transform(X(2), "triangular", shifts=[None, X(2)])


@given(polys(), st.floats(0.2, 5), st.floats(0.2, 5), st.floats(0.2, 5))
def test_dilation_composes(p, R, R1, R2):
    assert dilate(dilate(p, R, R1), R1, R2).allclose(dilate(p, R, R2), tol=1e-9 * (1 + max(R, R2) / min(R, R2)) ** 3)


@settings(max_examples=30)
@given(polys(), hermitian_tuple())
def test_linear_change_matches_substitution(p, A):
    M = np.array([[1.0, 0.5], [-0.3, 2.0]])
    beta = np.array([0.1, -0.2])
    B = np.einsum("ij,jkl->ikl", M, A) + beta[:, None, None] * np.eye(A.shape[-1])
    assert np.allclose(evaluate(transform(p, "linear", A=M, beta=beta), A), evaluate(p, B))


@settings(max_examples=30)
@given(polys(), hermitian_tuple())
def test_cyclic_reduce_preserves_traces(p, A):
    assert trace_eval(cyclic_reduce(p), A) == pytest.approx(trace_eval(p, A), abs=1e-9)


def test_cyclic_reduce_cancels_commutator():
    assert cyclic_reduce(X(1) * X(2) - X(2) * X(1)).is_zero()


# -- text serialization -------------------------------------------------------------------

@given(polys(nvars=3))
def test_text_round_trip_exact(p):
    assert NCPolynomial.from_text(p.to_text()) == p


def test_text_inline_sums():
    p = NCPolynomial.from_text("0.5 * X1.X1 + (0.2+1j) * X1.X2 + (0.2-1j) * X2.X1 + -3 * 1")
    assert p == 0.5 * X(1) * X(1) + (0.2 + 1j) * X(1) * X(2) + (0.2 - 1j) * X(2) * X(1) - 3
    assert p.is_selfadjoint()
    with pytest.raises(ValueError):
        NCPolynomial.from_text("X1 + X2")


# -- sup norm ----------------------------------------------------------------------------------

def test_sup_norm_examples():
    est = sup_norm(X(1) * X(1), 2.0)
    assert est.exact and est.value == pytest.approx(4.0, abs=1e-9)
    est = sup_norm(X(1) * X(2) + X(2) * X(1), 1.0)
    assert est.value == pytest.approx(2.0, abs=1e-3) and not est.exact
    est = sup_norm(1j * (X(1) * X(2) - X(2) * X(1)), 1.0)
    assert est.value == pytest.approx(2.0, abs=1e-3)


def test_sup_norm_budget_monotone_and_bounded():
    p = X(1) * X(2) * X(1) + 0.5 * X(2) - 0.3 * X(1) * X(1)
    p = p + adjoint(p)
    vals = [sup_norm(p, 1.5, SupNormConfig(restarts=k, steps=30, dims=(2, 3, 4))).value for k in (2, 6, 12)]
    assert vals[0] <= vals[1] <= vals[2] <= p.coefficient_bound(1.5) + 1e-9


# -- tensor polynomials -----------------------------------------------------------------------------

def test_tensor_examples():
    A = np.stack([SX])
    assert tensor_trace_eval(TensorPolynomial.tensor(X(1), X(1)), A) == pytest.approx(0)
    g = X(1) * X(1) - 1
    assert tensor_trace_eval(TensorPolynomial.tensor(g, g), A) == pytest.approx(0)
    one = NCPolynomial.const(1.0)
    assert tensor_trace_eval(TensorPolynomial.tensor(one, one), np.stack([np.diag([0.3, -2.0])])) == pytest.approx(1)


@settings(max_examples=40)
@given(polys(), hermitian_tuple())
def test_penalty_form_is_nonnegative(g, A):
    # a single g (x) g* is not selfadjoint; the symmetric sum is
    q = TensorPolynomial.tensor(g, adjoint(g)) + TensorPolynomial.tensor(adjoint(g), g)
    assert q.is_selfadjoint()
    val = tensor_trace_eval(q, A)
    assert val.real >= -1e-9 and abs(val.imag) < 1e-9
