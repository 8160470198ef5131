"""Legendre duality between free pressure and eta-type entropies.

eta_R(mu) = inf_p mu(p) + pi_R(p) over selfadjoint polynomials, so every
finite family of candidates yields an upper bound.  Pressures come from a
:class:`PressureBackend`: single-variable blocks use the equilibrium solver,
blocks that genuinely couple several variables use Monte Carlo.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .chains import MCConfig
from .equilibrium import chi_via_legendre, solve_equilibrium
from .matrixmc import (PressureEstimate, Schedule, decompose, extrapolate_pressure,
                       pressure_path, scaled_log_volume, volume_limit)
from .measures import CHI_CONST, DiscreteMeasure, make_measure
from .moments import MomentSpec
from .ncpoly import NCPolynomial, TensorPolynomial, cyclic_reduce, words_up_to


# -- pressure backend ------------------------------------------------------------------

@dataclass
class PressureBackend:
    """pi_R(p) by exact block decomposition.

    Constants contribute -c exactly.  Variables that do not occur contribute
    pi_R(0) each, single-variable blocks are solved on a ``grid``-cell model
    and linked blocks are estimated by thermodynamic integration at each n in
    ``mc_n`` (extrapolated in 1/n^2 when three or more sizes are given).
    """

    R: float
    grid: int = 1000
    mc_n: tuple = (8, 16, 32)
    mc_config: MCConfig | None = None
    schedule: Schedule | None = None
    seed: int = 0
    _cache: dict = field(default_factory=dict, repr=False)

    def single(self, h: NCPolynomial) -> float:
        key = ("eq", h.to_text())
        if key not in self._cache:
            self._cache[key] = solve_equilibrium(h, self.R, self.grid).pressure
        return self._cache[key]

    def linked(self, h: NCPolynomial, L: int):
        key = ("mc", h.to_text(), L)
        if key not in self._cache:
            recs = [pressure_path(h, n, self.R, (1.0,), self.schedule, self.seed, self.mc_config, nvars=L)[0]
                    for n in self.mc_n]
            if len(recs) >= 3:
                fit = extrapolate_pressure(recs)
                self._cache[key] = (fit.value, fit.stderr, all(r.ok for r in recs))
            else:
                vals = [r.scaled for r in recs]
                errs = [r.scaled_stderr for r in recs]
                self._cache[key] = (float(np.mean(vals)), float(math.sqrt(sum(e * e for e in errs))) / len(errs),
                                    all(r.ok for r in recs))
        return self._cache[key]

    def __call__(self, p: NCPolynomial, nvars: int | None = None):
        """(value, stderr, ok) for pi_R(p)."""
        if not p.is_selfadjoint():
            raise ValueError("pressure needs a selfadjoint polynomial")
        N = max(nvars or 0, p.nvars)
        const, blocks = decompose(p, None, N)
        value, var, ok = -const, 0.0, True
        used = set()
        zero = NCPolynomial({}, 1)
        for vs, hb, _ in blocks:
            used.update(vs)
            if len(vs) == 1:
                value += self.single(hb)
            else:
                v, e, good = self.linked(hb, len(vs))
                value += v
                var += e * e
                ok &= good
        value += (N - len(used)) * self.single(zero) if N > len(used) else 0.0
        return float(value), float(math.sqrt(var)), bool(ok)


# -- eta upper bounds -----------------------------------------------------------------------

def _mu_eval(mu, p: NCPolynomial) -> float:
    if isinstance(mu, MomentSpec):
        return mu.real(p)
    if isinstance(mu, DiscreteMeasure):
        if len(p.variables()) > 1:
            raise ValueError("a measure only evaluates single-variable polynomials")
        coeffs = cyclic_reduce(p).real_coefficients() if not p.is_zero() else np.zeros(1)
        return float(sum(c * mu.moment(k) for k, c in enumerate(coeffs)))
    raise TypeError(f"unsupported functional {type(mu).__name__}")


def _mu_nvars(mu) -> int:
    return mu.nvars if isinstance(mu, MomentSpec) else 1


@dataclass
class EtaEstimate:
    family: list
    values: list
    errors: list
    minimum: float
    argmin: int
    direction: str = "upper"
    legendre: float | None = None    # value of the grid Legendre candidate, if used

    @property
    def best(self) -> NCPolynomial | None:
        return self.family[self.argmin] if self.argmin < len(self.family) else None

    def record(self) -> dict:
        return {"family": [p.to_text() for p in self.family], "values": self.values, "errors": self.errors,
                "minimum": self.minimum, "argmin": self.argmin, "direction": self.direction,
                "legendre": self.legendre}


def eta_upper(mu, family, R: float, backend: PressureBackend | None = None, *,
              legendre: bool = True) -> EtaEstimate:
    """min over the family of mu(p) + pi_R(p), an upper bound of eta_R(mu).

    For a single-variable measure the grid Legendre candidate h* = 2 U_mu is
    added when ``legendre`` is set; it attains chi(mu) on the cell model.
    """
    family = list(family)
    if not family:
        raise ValueError("family must be nonempty")
    for p in family:
        if not p.is_selfadjoint():
            raise ValueError(f"family member {p!r} is not selfadjoint")
    backend = backend or PressureBackend(R)
    N = _mu_nvars(mu)
    vals, errs = [], []
    for p in family:
        v, e, _ = backend(p, N)
        vals.append(_mu_eval(mu, p) + v)
        errs.append(e)
    leg = None
    if legendre and isinstance(mu, DiscreteMeasure):
        mu_g = mu if (mu.R == R and mu.m == backend.grid) else _regrid(mu, R, backend.grid)
        leg = chi_via_legendre(mu_g).value
    allv = vals + ([leg] if leg is not None else [])
    k = int(np.argmin(allv))
    return EtaEstimate(family, vals, errs, float(allv[k]), k, "upper", leg)


def _regrid(mu: DiscreteMeasure, R: float, m: int) -> DiscreteMeasure:
    if mu.kind in ("semicircle", "arcsine", "uniform", "free_poisson"):
        return make_measure(mu.kind, mu.params, m, R)
    raise ValueError("measure grid differs from the backend grid")


def symmetrized_monomials(nvars: int, degree: int) -> list:
    """(w + w*)/2 for words up to ``degree``, one per reversal class."""
    out, seen = [], set()
    for w in words_up_to(nvars, degree):
        rw = tuple(reversed(w))
        if rw in seen:
            continue
        seen.add(w)
        out.append(NCPolynomial({w: 0.5, rw: 0.5} if rw != w else {w: 1.0}, nvars))
    return out


def default_family(mu, R: float, backend: PressureBackend | None = None, degree: int = 4,
                   starts: int = 2, sweeps: int = 2, seed: int = 0, bound: float = 5.0) -> list:
    """Candidates from coordinate descent on symmetrized monomial coefficients.

    The objective mu(p) + pi_R(p) is convex in the coefficients.  Each start
    returns its final polynomial; all are returned as a family.
    """
    N = _mu_nvars(mu)
    backend = backend or PressureBackend(R, grid=300)
    basis = symmetrized_monomials(N, degree)
    rng = np.random.default_rng(seed)

    def poly(c):
        p = NCPolynomial({}, N)
        for ck, b in zip(c, basis):
            if ck != 0.0:
                p = p + b * float(ck)
        return p

    def f(c):
        p = poly(c)
        return _mu_eval(mu, p) + backend(p, N)[0]

    family = []
    for s in range(starts):
        c = np.zeros(len(basis)) if s == 0 else rng.normal(scale=0.3, size=len(basis))
        for _ in range(sweeps):
            for k in range(len(basis)):
                def g(x, k=k):
                    cc = c.copy()
                    cc[k] = x
                    return f(cc)
                res = minimize_scalar(g, bounds=(-bound, bound), method="bounded",
                                      options={"xatol": 1e-3, "maxiter": 40})
                if res.fun <= g(c[k]):
                    c[k] = res.x
        family.append(poly(c))
    return family


# -- divergence certificates -----------------------------------------------------------------

@dataclass
class CertificateBudget:
    floor: float = 1e3
    alpha0: float = 1.0
    max_doublings: int = 80
    tol: float = 1e-9


@dataclass
class Certificate:
    kind: str
    direction: NCPolynomial
    alphas: list
    objectives: list           # upper bounds of mu(alpha p) + pi_R(alpha p)
    threshold: float
    slope: float

    def record(self) -> dict:
        return {"kind": self.kind, "direction": self.direction.to_text(), "alphas": self.alphas,
                "objectives": self.objectives, "threshold": self.threshold, "slope": self.slope}


def _doubling(kind, direction, slope, base, budget: CertificateBudget):
    """Objective base + alpha * slope along alpha = alpha0 * 2^k until below base - floor."""
    if not slope < 0:
        return None
    alphas, objs = [], []
    a = budget.alpha0
    for _ in range(budget.max_doublings + 1):
        alphas.append(a)
        objs.append(base + a * slope)
        if objs[-1] < base - budget.floor:
            return Certificate(kind, direction, alphas, objs, base - budget.floor, slope)
        a *= 2.0
    return None


def divergence_certificate(mu: MomentSpec, R: float, budget: CertificateBudget | None = None):
    """Search for a direction along which mu(alpha p) + pi_R(alpha p) -> -infinity.

    Objectives are certified upper bounds: constants shift pi exactly,
    pi_R(p) <= pi_R(0) + ||p||_R bounds the boundedness direction, commutator
    directions have vanishing trace, and pi_R(alpha p*p) <= pi_R(0).
    Returns None if mu passes every check at this budget.
    """
    budget = budget or CertificateBudget()
    N = mu.nvars
    base = volume_limit(R, N)
    tol = budget.tol
    # normalization
    d = mu.value(()) - 1.0
    if abs(d) > tol:
        s = -math.copysign(1.0, d)
        cert = _doubling("normalization", NCPolynomial.const(s, N), -abs(d), base, budget)
        if cert:
            return cert
    # boundedness
    for w in mu.words():
        rw = tuple(reversed(w))
        re_part = 0.5 * (mu.value(w) + mu.value(rw))
        im_part = 0.5 * (mu.value(w) - mu.value(rw))
        bound = R ** len(w)
        for val, terms in ((re_part, {w: 0.5, rw: 0.5}), (im_part, {w: 0.5j, rw: -0.5j})):
            if rw == w and terms[w] != 0.5:
                continue
            excess = abs(val) - bound
            if excess > tol * max(1.0, bound):
                p = NCPolynomial({k: v for k, v in terms.items()} if rw != w else {w: 1.0}, N)
                p = p * (-math.copysign(1.0, val))
                # mu(p) = -|val|, ||p||_R <= R^{|w|}
                cert = _doubling("boundedness", p, -excess, base, budget)
                if cert:
                    return cert
    # traciality
    for w in mu.words():
        for k in range(1, len(w)):
            u, v = w[:k], w[k:]
            rot = v + u
            dd = mu.functional(w) - mu.functional(rot)
            if abs(dd) > tol * max(1.0, R ** len(w)):
                c = -np.conj(dd) / abs(dd)
                uv = NCPolynomial({w: 1.0}, N) - NCPolynomial({rot: 1.0}, N)
                q = uv * c
                q = q + NCPolynomial({tuple(reversed(x)): np.conj(y) for x, y in q.terms.items()}, N)
                cert = _doubling("traciality", q, -2 * abs(dd), base, budget)
                if cert:
                    return cert
    # positivity
    half = mu.degree // 2
    basis = words_up_to(N, half, include_empty=True)
    M = np.empty((len(basis), len(basis)), dtype=complex)
    for i, a in enumerate(basis):
        for j, b in enumerate(basis):
            M[i, j] = mu.functional(tuple(reversed(a)) + b)
    M = 0.5 * (M + M.conj().T)
    evals, evecs = np.linalg.eigh(M)
    scale = max(1.0, float(np.abs(M).max()))
    if evals[0] < -tol * scale:
        c = evecs[:, 0]
        p = NCPolynomial({w: c[i] for i, w in enumerate(basis)}, N)
        pp = NCPolynomial({tuple(reversed(x)): np.conj(y) for x, y in p.terms.items()}, N) * p
        return _doubling("positivity", pp, float(evals[0]), base, budget)
    return None


# -- tensor penalty and chi -------------------------------------------------------------------------

def penalty_polynomial(target: MomentSpec, r: int, eps: float, beta: float) -> TensorPolynomial:
    """(beta/eps^2) sum_{1 <= |w| <= r} (w - tau_w 1) (x) (w - tau_w 1)*."""
    if r > target.degree:
        raise ValueError(f"target has degree {target.degree} < r = {r}")
    if not eps > 0:
        raise ValueError("eps must be positive")
    N = target.nvars
    q = TensorPolynomial({}, N)
    for w in words_up_to(N, r):
        tau = target.functional(w)
        p = NCPolynomial({w: 1.0, (): -tau}, N)
        ps = NCPolynomial({tuple(reversed(w)): 1.0, (): -np.conj(tau)}, N)
        q = q + TensorPolynomial.tensor(p, ps)
    return q * (beta / eps ** 2)


def chi_slack(chi_hat: float, beta: float, R: float, N: int) -> float:
    """log(1 + e^{-chi_hat - beta} (R (pi/2)^{1/2} e^{3/4})^N)."""
    return float(np.log1p(math.exp(-chi_hat - beta + volume_limit(R, N))))


@dataclass
class ChiPenaltyResult:
    beta: float
    estimate: PressureEstimate
    slack: float
    per_n: list = field(default_factory=list)

    @property
    def value(self) -> float:
        return self.estimate.value

    def record(self) -> dict:
        d = self.estimate.to_dict()
        d.update(beta=self.beta, slack=self.slack, chi_hat=self.value)
        return d


def estimate_chi_penalty(target: MomentSpec, R: float, r: int, eps: float, betas=(10.0,),
                         n_list=(8, 16, 32), seed=0, schedule: Schedule | None = None,
                         config: MCConfig | None = None) -> list:
    """chi-hat = pi^(2)_R(q) for the penalty polynomial at each beta.

    All betas share one coupling path per n, so estimates at different betas
    use identical draws on the common panels.
    """
    N = target.nvars
    betas = [float(b) for b in betas]
    schedule = schedule or Schedule(nodes=24, kind="log", floor=1e-8)
    pos = sorted(b for b in betas if b > 0)
    q1 = penalty_polynomial(target, r, eps, 1.0)
    per_n = {}
    for n in n_list:
        per_n[n] = pressure_path(None, n, R, pos, schedule, seed, config, q=q1, nvars=N) if pos else []
    out = []
    for b in betas:
        if b == 0:
            recs = [(n, N * scaled_log_volume(n, R), 0.0) for n in n_list]
            ests = []
        else:
            k = pos.index(b)
            ests = [per_n[n][k] for n in n_list]
            recs = ests
        fit = extrapolate_pressure(recs, method={"beta": b, "eps": eps, "r": r, "schedule": asdict(schedule)})
        out.append(ChiPenaltyResult(b, fit, chi_slack(fit.value, b, R, N), ests))
    return out


# -- duality gap ----------------------------------------------------------------------------------------

@dataclass
class GapReport:
    pressure: float
    pressure_stderr: float
    gaps: list
    etas: list
    best: int
    tolerance: float

    @property
    def consistent(self) -> bool:
        return all(g >= -self.tolerance for g in self.gaps)

    def record(self) -> dict:
        return {"pressure": self.pressure, "pressure_stderr": self.pressure_stderr, "gaps": self.gaps,
                "etas": [e.minimum for e in self.etas], "best": self.best, "tolerance": self.tolerance,
                "consistent": self.consistent}


def duality_gap(h0: NCPolynomial, candidates, R: float, backend: PressureBackend | None = None,
                family=None, tolerance: float = 1e-4) -> GapReport:
    """gap(mu) = pi_R(h0) - (-mu(h0) + eta_R(mu)) for each candidate; zero at equilibrium."""
    backend = backend or PressureBackend(R)
    family = list(family) if family is not None else [h0]
    candidates = list(candidates)
    N = max([h0.nvars] + [_mu_nvars(m) for m in candidates])
    pi0, err, _ = backend(h0, N)
    gaps, etas = [], []
    for mu in candidates:
        eta = eta_upper(mu, family, R, backend)
        etas.append(eta)
        gaps.append(float(pi0 - (-_mu_eval(mu, h0) + eta.minimum)))
    best = int(np.argmin(np.abs(gaps)))
    return GapReport(pi0, err, gaps, etas, best, tolerance)


# -- circular element spot check ------------------------------------------------------------------------

@dataclass
class CircularCheck:
    eta_hat: float
    stderr: float
    oracle: float
    n: int

    @property
    def margin(self) -> float:
        return self.eta_hat - self.oracle

    @property
    def holds(self) -> bool:
        return self.margin >= -3 * self.stderr


def circular_check(n: int = 16, R: float = 3.0, seed=0, config: MCConfig | None = None,
                   schedule: Schedule | None = None) -> CircularCheck:
    """Upper bound for eta of a circular element against chi(x*x) + log(pi/2)/2 + 3/4.

    x = a1 + i a2 with a1, a2 free semicirculars of variance 1/2, so x*x is
    free Poisson of rate one.  The candidate p = (X1 - iX2)(X1 + iX2) has
    mu(p) = tau(x*x) = 1.
    """
    X1, X2 = NCPolynomial.var(0, 2), NCPolynomial.var(1, 2)
    p = (X1 - X2 * 1j) * (X1 + X2 * 1j)
    mu = MomentSpec.semicircular(2, 2, variance=0.5)
    est = pressure_path(p, n, R, (1.0,), schedule, seed, config, nvars=2)[0]
    eta_hat = mu.real(p) + est.scaled
    # log energy of the rate-one free Poisson law is -1/2
    oracle = -0.5 + CHI_CONST + 0.5 * math.log(math.pi / 2) + 0.75
    return CircularCheck(float(eta_hat), est.scaled_stderr, float(oracle), n)
