"""End-to-end acceptance checks, one PASS/FAIL line per criterion.

Monte Carlo runs for criteria 3, 5, 8 and 10 go through the CLI so that the
same records serve the numeric checks and the determinism check.
"""
import json
import math

import numpy as np
import pytest

from freepressure.chains import MCConfig
from freepressure.cli import main
from freepressure.duality import (PressureBackend, circular_check, divergence_certificate, duality_gap, eta_upper,
                                  symmetrized_monomials)
from freepressure.equilibrium import solve_equilibrium
from freepressure.experiments import read_records, replay
from freepressure.gibbs import boltzmann_entropy, estimate_state, polar_descartes_check, run_chain
from freepressure.matrixmc import (estimate_micro_pressure, extrapolate_pressure, log_ball_volume,
                                   scaled_log_volume, volume_limit)
from freepressure.measures import make_measure
from freepressure.moments import MomentSpec
from freepressure.ncpoly import NCPolynomial, dilate, words_up_to

SEED = 0
HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)
CHI_SEMI = 0.5 + HALF_LOG_2PI
VOLUME_R2 = 1.668939
QUAD = NCPolynomial.univariate([0, 0, 0.5])
ZERO = NCPolynomial({}, 1)


@pytest.fixture
def report(capsys):
    def _report(k, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {k}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return _report


# -- shared Monte Carlo runs ---------------------------------------------------------------------

MC_COMMANDS = {
    "pressure": {},
    "gibbs-entropy": {},
    "chi-penalty": {"betas": [5.0, 10.0]},
}


@pytest.fixture(scope="module")
def mc_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("acceptance")
    out = {}
    for cmd, cfg in MC_COMMANDS.items():
        path = base / f"{cmd}.json"
        path.write_text(json.dumps(cfg))
        for jobs in (1, 2):
            d = base / f"{cmd}-j{jobs}"
            code = main([cmd, "--config", str(path), "--seed", str(SEED), "--jobs", str(jobs), "--out", str(d)])
            out[cmd, jobs] = (d, code)
    return out


def _metrics(d):
    return {r["metric"]: r for r in read_records(d / "metrics.jsonl")}


# -- 1 ---------------------------------------------------------------------------------------

def test_criterion_1_volume_constant(report):
    ns = range(4, 65)
    fit = extrapolate_pressure([(n, scaled_log_volume(n, 2.0), 0.0) for n in ns])
    err = abs(fit.value - VOLUME_R2)
    report(1, err < 1e-3 and abs(volume_limit(2.0) - VOLUME_R2) < 1e-6,
           f"extrapolated {fit.value:.6f} vs {VOLUME_R2} (|diff| {err:.2e}, tol 1e-3)")


# -- 2 ---------------------------------------------------------------------------------------

def test_criterion_2_equilibrium(report):
    flat = solve_equilibrium(ZERO, 2.0, 1000)
    l1 = flat.sigma.l1_distance(make_measure("arcsine", {"a": 2.0}, 1000, 2.0))
    gauss = solve_equilibrium(QUAD, 3.0, 1000)
    m2 = gauss.sigma.moment(2)
    ok = (abs(flat.pressure - VOLUME_R2) <= 1e-3 and l1 <= 0.02
          and abs(gauss.pressure - HALF_LOG_2PI) <= 1e-3 and abs(m2 - 1) <= 1e-3)
    report(2, ok, f"pi(0)={flat.pressure:.6f} L1={l1:.4f}; pi(t^2/2)={gauss.pressure:.6f} m2={m2:.6f}")


# -- 3 ---------------------------------------------------------------------------------------

def test_criterion_3_mc_pressure(report, mc_runs):
    d, code = mc_runs["pressure", 1]
    m = _metrics(d)
    ext = m["extrapolated_pressure"]
    err = abs(ext["value"] - HALF_LOG_2PI)
    per_n = {k: (v["value"], v["stderr"]) for k, v in m.items() if k.startswith("scaled_pressure")}
    exact = all(estimate_micro_pressure(ZERO, n, 2.0).scaled == scaled_log_volume(n, 2.0) for n in range(4, 65))
    report(3, err < 0.02 and exact and code == 0,
           f"extrapolated {ext['value']:.6f} +- {ext['stderr']:.1e} vs {HALF_LOG_2PI:.6f} (tol 0.02); "
           f"per-n {per_n}; h=0 exact volumes: {exact}; exit {code}")


# -- 4 ---------------------------------------------------------------------------------------

PAIR_N, PAIR_R = 3, 1.0
PAIR_CFG = MCConfig(chains=6, adapt=200, samples=120)
BASIS = symmetrized_monomials(2, 4)


def _random_poly(rng, scale=0.3):
    p = NCPolynomial({}, 2)
    for b, c in zip(BASIS, rng.normal(scale=scale, size=len(BASIS))):
        p = p + b * float(c)
    return p


def _P(h, seed):
    return estimate_micro_pressure(h, PAIR_N, PAIR_R, seed=seed, config=PAIR_CFG, nvars=2)


def test_criterion_4_identities(report):
    rng = np.random.default_rng(2024)
    lines, ok = [], True

    # exact identities on three random two-variable polynomials
    for k in range(3):
        h = _random_poly(rng)
        base = _P(h, k)
        R1 = 2.5
        dil = estimate_micro_pressure(dilate(h, PAIR_R, R1), PAIR_N, R1, seed=k, config=PAIR_CFG, nvars=2)
        d_err = abs(dil.value - base.value - 2 * PAIR_N ** 2 * math.log(R1 / PAIR_R))
        shift = _P(h + 0.8, k)
        s_err = abs(shift.value - base.value + PAIR_N ** 2 * 0.8)
        # variables 1-2 and 3-4 never interact: the joint pressure splits
        h2 = _random_poly(rng)
        moved = NCPolynomial({tuple(i + 2 for i in w): c for w, c in h2.terms.items()}, 4)
        joint = estimate_micro_pressure(h.with_nvars(4) + moved, PAIR_N, PAIR_R, seed=k, config=PAIR_CFG)
        a_err = abs(joint.value - base.value - _P(h2, k).value)
        ok &= d_err <= 1e-9 * abs(base.value) + 1e-12 and s_err <= 1e-9 and a_err <= 1e-9
        lines.append(f"exact[{k}] dil {d_err:.1e} shift {s_err:.1e} add {a_err:.1e}")

    conv_fail = mono_fail = 0
    worst_conv = worst_mono = -math.inf
    for k in range(20):
        h1, h2 = _random_poly(rng), _random_poly(rng)
        a = float(rng.uniform(0.2, 0.8))
        p1, p2, pm = _P(h1, 100 + k), _P(h2, 100 + k), _P(h1 * a + h2 * (1 - a), 100 + k)
        se = math.sqrt(pm.stderr ** 2 + (a * p1.stderr) ** 2 + ((1 - a) * p2.stderr) ** 2)
        excess = (pm.value - a * p1.value - (1 - a) * p2.value) / se
        worst_conv = max(worst_conv, excess)
        conv_fail += excess > 3
        # h1 + s*s dominates h1 for selfadjoint s
        s = _random_poly(rng, 0.4)
        s = NCPolynomial({w: c for w, c in s.terms.items() if len(w) <= 1}, 2)
        pu = _P(h1 + s * s, 100 + k)
        excess = (pu.value - p1.value) / math.hypot(pu.stderr, p1.stderr)
        worst_mono = max(worst_mono, excess)
        mono_fail += excess > 3
    ok &= conv_fail == 0 and mono_fail == 0
    lines.append(f"convexity violations {conv_fail}/20 (max excess {worst_conv:.2f} SE); "
                 f"monotonicity violations {mono_fail}/20 (max excess {worst_mono:.2f} SE)")
    report(4, ok, "; ".join(lines))


# -- 5 ---------------------------------------------------------------------------------------

def test_criterion_5_entropy(report, mc_runs):
    d, code = mc_runs["gibbs-entropy", 1]
    ext = _metrics(d)["extrapolated_entropy"]
    err = abs(ext["value"] - CHI_SEMI)
    exact = all(boltzmann_entropy(ZERO, n, 3.0).S == log_ball_volume(n, 3.0) for n in (2, 8, 16, 32))
    report(5, err < 0.03 and exact and code == 0,
           f"extrapolated entropy {ext['value']:.6f} +- {ext['stderr']:.1e} vs {CHI_SEMI:.6f} (tol 0.03); "
           f"h0=0 exact: {exact}; exit {code}")


# -- 6 ---------------------------------------------------------------------------------------

def test_criterion_6_duality(report):
    b2, b3 = PressureBackend(2.0), PressureBackend(3.0)
    arc = make_measure("arcsine", {"a": 2.0}, 1000, 2.0)
    sc2 = make_measure("semicircle", {"m": 0.0, "r": 2.0}, 1000, 2.0)
    sc3 = make_measure("semicircle", {"m": 0.0, "r": 2.0}, 1000, 3.0)
    g_flat = duality_gap(ZERO, [arc, sc2], 2.0, b2).gaps
    g_quad = duality_gap(QUAD, [sc3], 3.0, b3).gaps[0]
    free = eta_upper(MomentSpec.semicircular(2, 4), [NCPolynomial({(0, 0): 0.5, (1, 1): 0.5}, 2)], 3.0, b3).minimum
    ok = (abs(g_flat[0]) <= 1e-4 and abs(g_quad) <= 1e-4 and abs(g_flat[1] - 0.25) <= 1e-3
          and abs(free - 2 * CHI_SEMI) <= 2e-3)
    report(6, ok, f"gap(0, arcsine)={g_flat[0]:.2e} gap(t^2/2, semicircle)={g_quad:.2e} "
                  f"gap(0, semicircle)={g_flat[1]:.6f} eta(free pair)={free:.6f}")


# -- 7 ---------------------------------------------------------------------------------------

CERT_R = 2.0


def _base_spec(nvars, degree=4):
    return dict(MomentSpec.semicircular(nvars, degree).values)


def _violations(rng):
    out = []
    for k in range(10):
        if k % 2 == 0:
            a = float(rng.uniform(0.5, 2.0))
            vals = {w: 0.0 for w in words_up_to(1, 4, include_empty=True)}
            vals.update({(): 1.0, (0, 0): a, (0, 0, 0, 0): a * a * float(rng.uniform(0.1, 0.9))})
            out.append(("positivity", MomentSpec(1, 4, vals)))
        else:
            vals = _base_spec(2)
            c = float(rng.uniform(1.1, 3.0)) * rng.choice([-1, 1])
            vals[(0, 1)] = vals[(1, 0)] = c
            out.append(("positivity", MomentSpec(2, 4, vals)))
    rotating = [w for w in words_up_to(2, 4) if len(w) >= 3 and len({w[i:] + w[:i] for i in range(len(w))}) > 1]
    for _ in range(10):
        vals = _base_spec(2)
        w = rotating[rng.integers(len(rotating))]
        vals[w] += float(rng.uniform(0.05, 0.5)) * rng.choice([-1, 1])
        out.append(("traciality", MomentSpec(2, 4, vals)))
    for k in range(10):
        nv = 1 + k % 2
        vals = _base_spec(nv)
        w = [(0, 0), (0, 0, 0, 0), (0,) * 3][k % 3] if nv == 1 else [(0, 1), (1, 1), (0, 0, 1, 1)][k % 3]
        big = CERT_R ** len(w) * (1 + float(rng.uniform(0.05, 1.0))) * rng.choice([-1, 1])
        vals[w] = big
        vals[tuple(reversed(w))] = big
        out.append(("boundedness", MomentSpec(nv, 4, vals)))
    return out


def _chain_specs(rng):
    specs = []
    cfg = MCConfig(chains=4, adapt=100, samples=50)
    for k in range(30):
        nv = 1 + k % 2
        n = int(rng.integers(2, 5)) if nv == 1 else int(rng.integers(2, 4))
        p = NCPolynomial({}, nv)
        for b in symmetrized_monomials(nv, 2):
            p = p + b * float(rng.normal(scale=0.5))
        ch = run_chain(p, n, CERT_R, cfg, seed=k, N=nv)
        specs.append(estimate_state(ch, 4))
    return specs


def test_criterion_7_certificates(report):
    import warnings
    rng = np.random.default_rng(7)
    bad = _violations(rng)
    found = [(kind, divergence_certificate(mu, CERT_R)) for kind, mu in bad]
    detected = sum(c is not None for _, c in found)
    kinds_match = sum(c is not None and c.kind == kind for kind, c in found)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        good = _chain_specs(rng)
    false_pos = [c.kind for c in (divergence_certificate(mu, CERT_R) for mu in good) if c is not None]
    report(7, detected == 30 and not false_pos,
           f"detected {detected}/30 violations ({kinds_match} with the expected kind); "
           f"false positives {len(false_pos)}/30 {false_pos}")


# -- 8 ---------------------------------------------------------------------------------------

def test_criterion_8_chi_penalty(report, mc_runs):
    d, code = mc_runs["chi-penalty", 1]
    m = _metrics(d)
    c5, c10 = m["chi_hat[beta=5.0]"], m["chi_hat[beta=10.0]"]
    err = abs(c10["value"] - CHI_SEMI)
    slack = c10["diagnostics"]["slack"]
    per_n = [(k, m[k]["value"], m[k.replace("beta=5.0", "beta=10.0")]["value"])
             for k in m if k.startswith("scaled_penalty_pressure[beta=5.0")]
    mono = all(v10 <= v5 for _, v5, v10 in per_n) and c10["value"] <= c5["value"]
    report(8, err < 0.15 and mono and math.isfinite(slack) and code == 0,
           f"chi_hat(beta=10)={c10['value']:.6f} +- {c10['stderr']:.1e} vs {CHI_SEMI:.6f} (tol 0.15), "
           f"slack {slack:.2e}; chi_hat(beta=5)={c5['value']:.6f}; monotone in beta: {mono}; exit {code}")


# -- 9 ---------------------------------------------------------------------------------------

def test_criterion_9_correspondences(report):
    r1 = polar_descartes_check(1, 20000, seed=SEED)
    r2 = polar_descartes_check(2, 20000, seed=SEED)
    circ = circular_check(16, 3.0, seed=SEED)
    c1 = abs(r1.exact - math.pi) < 1e-12 and abs(math.exp(r1.log_C) - math.pi) < 1e-12
    ok = c1 and r1.descartes_ok and r2.agree and r2.descartes_ok and circ.holds
    report(9, ok, f"C_1={math.exp(r1.log_C):.12f}; n=2 direct {r2.direct:.4f} +- {r2.direct_stderr:.4f} "
                  f"vs polar {r2.polar:.4f} +- {r2.polar_stderr:.4f}; circular margin {circ.margin:.2e} "
                  f"(SE {circ.stderr:.1e})")


# -- 10 --------------------------------------------------------------------------------------

def _stable_lines(d):
    lines = []
    for r in read_records(d / "metrics.jsonl"):
        r.pop("timestamp")
        lines.append(json.dumps(r, sort_keys=True))
    return lines


def test_criterion_10_determinism(report, mc_runs):
    details, ok = [], True
    for cmd in MC_COMMANDS:
        d1, _ = mc_runs[cmd, 1]
        d2, _ = mc_runs[cmd, 2]
        same_records = _stable_lines(d1) == _stable_lines(d2)
        same_files = all((d1 / f.name).read_bytes() == f.read_bytes()
                         for f in d2.iterdir() if f.suffix in (".csv", ".svg"))
        chash = read_records(d1 / "metrics.jsonl")[0]["config_hash"]
        rep = replay(d1 / "metrics.jsonl", chash, jobs=2)
        ok &= same_records and same_files and rep.ok
        details.append(f"{cmd}: jobs 1 vs 2 records {same_records}, files {same_files}, replay {rep.ok}")
    report(10, ok, "; ".join(details))
