import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from freepressure.chains import MCConfig, hermitian_noise, make_rng
from freepressure.duality import (PressureBackend, chi_slack, circular_check, default_family,
                                  divergence_certificate, duality_gap, estimate_chi_penalty, eta_upper,
                                  penalty_polynomial, symmetrized_monomials)
from freepressure.matrixmc import MicrostateSpec, microstate_hits, scaled_log_volume
from freepressure.measures import chi, make_measure
from freepressure.moments import MomentSpec
from freepressure.ncpoly import NCPolynomial, X, tensor_trace_eval, words_up_to

QUAD = NCPolynomial.univariate([0, 0, 0.5])
ZERO = NCPolynomial({}, 1)
B2, B3 = PressureBackend(2.0), PressureBackend(3.0)
ARC = make_measure("arcsine", {"a": 2.0}, 1000, 2.0)
SC2 = make_measure("semicircle", {"m": 0.0, "r": 2.0}, 1000, 2.0)
SC3 = make_measure("semicircle", {"m": 0.0, "r": 2.0}, 1000, 3.0)


# -- eta upper bounds -------------------------------------------------------------------

def test_eta_semicircle_quadratic():
    est = eta_upper(SC3, [QUAD], 3.0, B3, legendre=False)
    assert est.minimum == pytest.approx(0.5 + 0.5 * math.log(2 * math.pi), abs=1e-3)


def test_eta_arcsine_tight():
    est = eta_upper(ARC, [ZERO], 2.0, B2, legendre=False)
    assert est.minimum == pytest.approx(1.668939, abs=1e-3)
    assert est.minimum == pytest.approx(chi(ARC), abs=1e-3)


def test_eta_family_monotone():
    small = eta_upper(SC2, [ZERO], 2.0, B2, legendre=False).minimum
    big = eta_upper(SC2, [ZERO, QUAD], 2.0, B2, legendre=False).minimum
    assert small == pytest.approx(1.668939, abs=1e-3)
    assert big == pytest.approx(1.418939, abs=1e-3)
    assert big <= small


def test_eta_upper_bounds_chi():
    u = make_measure("uniform", {"a": -1.0, "b": 1.0}, 1000, 2.0)
    fam = [ZERO, QUAD, NCPolynomial.univariate([0, 0, 1.0, 0, 0.2])]
    est = eta_upper(u, fam, 2.0, B2)
    assert est.minimum >= chi(u) - 1e-4
    assert est.legendre is not None


def test_eta_concave_in_mu():
    # a minimum of affine functionals of mu is concave
    u = make_measure("uniform", {"a": -1.5, "b": 1.5}, 1000, 3.0)
    fam = [ZERO, QUAD, NCPolynomial.univariate([0, 0.3, 0.8])]
    for a in (0.25, 0.5, 0.8):
        mix = SC3.mix(u, a)
        lhs = eta_upper(mix, fam, 3.0, B3, legendre=False).minimum
        rhs = a * eta_upper(SC3, fam, 3.0, B3, legendre=False).minimum + \
            (1 - a) * eta_upper(u, fam, 3.0, B3, legendre=False).minimum
        assert lhs >= rhs - 1e-10


def test_eta_free_pair():
    fr = MomentSpec.semicircular(2, 4)
    h = NCPolynomial({(0, 0): 0.5, (1, 1): 0.5}, 2)
    assert eta_upper(fr, [h], 3.0, B3).minimum == pytest.approx(2.837877, abs=2e-3)


def test_eta_rejects_bad_family():
    with pytest.raises(ValueError):
        eta_upper(SC3, [], 3.0, B3)
    with pytest.raises(ValueError):
        eta_upper(SC3, [1j * X(1)], 3.0, B3)


def test_symmetrized_monomials_selfadjoint():
    basis = symmetrized_monomials(2, 3)
    assert all(p.is_selfadjoint() for p in basis)
    # reversal classes: 2 + 3 + 6 words of degrees 1, 2, 3
    assert len(basis) == 11


def test_default_family_descends():
    fam = default_family(SC3, 3.0, PressureBackend(3.0, grid=300), degree=2, starts=1, sweeps=1)
    be = PressureBackend(3.0, grid=300)
    val = eta_upper(SC3, fam, 3.0, be, legendre=False).minimum
    assert val <= eta_upper(SC3, [ZERO], 3.0, be, legendre=False).minimum
    assert val == pytest.approx(1.418939, abs=0.02)


# -- certificates ---------------------------------------------------------------------------

def _spec(nvars, degree, overrides):
    vals = {w: 0.0 for w in words_up_to(nvars, degree, include_empty=True)}
    vals[()] = 1.0
    vals.update(overrides)
    return MomentSpec(nvars, degree, vals)


def test_certificate_positivity():
    cert = divergence_certificate(_spec(1, 2, {(0, 0): -1.0}), 3.0)
    assert cert.kind == "positivity"
    steps = np.diff(cert.objectives) / np.diff(cert.alphas)
    assert np.allclose(steps, cert.slope) and cert.slope < 0


def test_certificate_normalization():
    cert = divergence_certificate(_spec(1, 2, {(): 2.0, (0, 0): 1.0}), 3.0)
    assert cert.kind == "normalization" and cert.slope == pytest.approx(-1.0)


def test_certificate_traciality():
    cert = divergence_certificate(_spec(2, 2, {(0, 1): 1.0, (1, 0): 0.0, (0, 0): 1.0, (1, 1): 1.0}), 3.0)
    assert cert.kind == "traciality"
    assert cert.direction.is_selfadjoint()
    assert cert.objectives[-1] < cert.threshold


def test_certificate_boundedness():
    cert = divergence_certificate(_spec(1, 2, {(0, 0): 10.0}), 3.0)
    assert cert.kind == "boundedness"


def test_no_certificate_for_free_semicirculars():
    assert divergence_certificate(MomentSpec.semicircular(2, 4), 3.0) is None


# -- penalty polynomial ---------------------------------------------------------------------

def test_penalty_terms():
    q = penalty_polynomial(MomentSpec.semicircular(1, 2), 2, 0.25, 10.0)
    w = 10.0 / 0.25 ** 2
    assert q.terms[((0,), (0,))] == pytest.approx(w)
    assert q.terms[((0, 0), (0, 0))] == pytest.approx(w)
    assert q.terms[((0, 0), ())] == pytest.approx(-w)
    assert q.terms[((), ())] == pytest.approx(w)
    assert q.is_selfadjoint()


def test_penalty_errors():
    with pytest.raises(ValueError):
        penalty_polynomial(MomentSpec.semicircular(1, 2), 4, 0.25, 1.0)
    with pytest.raises(ValueError):
        penalty_polynomial(MomentSpec.semicircular(1, 2), 2, 0.0, 1.0)


def test_penalty_vanishes_on_exact_match():
    # diag(1, -1) has tr = 0 and tr(A^2) = 1: the semicircle moments up to degree 2
    A = np.diag([1.0, -1.0]).astype(complex)[None]
    q = penalty_polynomial(MomentSpec.semicircular(1, 2), 2, 0.25, 3.0)
    assert abs(tensor_trace_eval(q, A)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.1, 20.0), st.floats(0.05, 0.5))
def test_penalty_at_least_beta_outside_microstates(seed, beta, eps):
    target = MomentSpec.semicircular(2, 2)
    rng = make_rng(seed)
    A = hermitian_noise((64, 2, 3, 3), rng)
    A /= np.abs(np.linalg.eigvalsh(A)).max(axis=-1)[..., None, None] / 1.5
    q = penalty_polynomial(target, 2, eps, beta)
    val = tensor_trace_eval(q, A)
    assert np.all(np.abs(val.imag) < 1e-9 * max(1.0, beta / eps ** 2))
    assert np.all(val.real >= -1e-9)
    inside = microstate_hits(MicrostateSpec(target, eps, 2.0, 2), A)
    assert np.all(val.real[~inside] >= beta * (1 - 1e-12))


# -- chi via penalty ---------------------------------------------------------------------------

def test_chi_penalty_beta_zero_is_volume():
    res = estimate_chi_penalty(MomentSpec.semicircular(1, 2), 3.0, 2, 0.25, betas=(0.0,))
    ns = (8, 16, 32)
    assert res[0].per_n == []
    ref = [scaled_log_volume(n, 3.0) for n in ns]
    assert res[0].estimate.records == [(n, y, 0.0) for n, y in zip(ns, ref)]


def test_chi_penalty_monotone_in_beta():
    cfg = MCConfig(chains=4, adapt=150, samples=80)
    res = estimate_chi_penalty(MomentSpec.semicircular(1, 2), 3.0, 2, 0.25, betas=(5.0, 10.0),
                               n_list=(4, 6, 8), seed=1, config=cfg)
    for a, b in zip(res[0].per_n, res[1].per_n):
        assert b.value <= a.value
    assert res[1].slack < res[0].slack


def test_chi_slack_formula():
    assert chi_slack(1.4, 10.0, 3.0, 1) == pytest.approx(
        math.log1p(math.exp(-11.4) * 3 * math.sqrt(math.pi / 2) * math.exp(0.75)), rel=1e-12)


# -- duality gap --------------------------------------------------------------------------------

def test_gap_equilibrium_pairs():
    assert abs(duality_gap(QUAD, [SC3], 3.0, B3).gaps[0]) < 1e-4
    rep = duality_gap(ZERO, [ARC, SC2], 2.0, B2)
    assert abs(rep.gaps[0]) < 1e-4
    assert rep.gaps[1] == pytest.approx(0.25, abs=1e-3)
    assert rep.best == 0 and rep.consistent


def test_circular_check_small():
    c = circular_check(8, 3.0, seed=0, config=MCConfig(chains=4, adapt=150, samples=80))
    assert c.oracle == pytest.approx(2.144730, abs=1e-5)
    assert math.isfinite(c.eta_hat) and c.stderr > 0
