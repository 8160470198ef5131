"""Matrix integrals over operator-norm balls: exact volumes and Monte Carlo pressure.

The reference measure on M_n^sa is Lambda_n = 2^{n(n-1)/2} prod dA_ii
prod d(Re A_ij) d(Im A_ij).  In eigenvalue coordinates it factors as

    dLambda_n = c_n |Vandermonde(lambda)|^2 dlambda dHaar,
    c_n = (2 pi)^{n(n-1)/2} / prod_{j=1}^n j!,

so the ball volume reduces to a Selberg integral.

The micro pressure P_{R,n}(h) = log int exp(-n^2 tr_n h(A)) dLambda_n^N over
the product of balls is estimated by thermodynamic integration from the
exact volume at beta = 0.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gammaln

from .chains import (Energy, MCConfig, effective_sample_size, haar_unitary, make_rng, run_ensemble,
                     split_rhat, task_seed)
from .moments import MomentSpec
from .ncpoly import NCPolynomial, TensorPolynomial, cyclic_reduce, word_traces, words_up_to


class MixingWarning(RuntimeWarning):
    pass


# -- exact volumes -----------------------------------------------------------------

def log_ball_volume(n: int, R: float = 1.0) -> float:
    """log Lambda_n of the operator-norm ball of radius R in M_n^sa."""
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    if not R > 0:
        raise ValueError("R must be positive")
    j = np.arange(1, n + 1)
    log_c = 0.5 * n * (n - 1) * math.log(2 * math.pi) - gammaln(j + 1).sum()
    k = np.arange(n)
    # Selberg integral S_n(1, 1, 1) over [0, 1]^n
    log_s = (2 * gammaln(k + 1) + gammaln(k + 2) - gammaln(n + k + 1)).sum()
    return float(n * n * math.log(R) + log_c + n * n * math.log(2.0) + log_s)


def scaled_log_volume(n: int, R: float = 1.0) -> float:
    """(1/n^2) log Lambda_n(ball) + (1/2) log n."""
    return log_ball_volume(n, R) / n ** 2 + 0.5 * math.log(n)


def volume_limit(R: float, N: int = 1) -> float:
    """Large-n limit of the scaled log volume: N (log R + log(pi/2)/2 + 3/4)."""
    return N * (math.log(R) + 0.5 * math.log(math.pi / 2) + 0.75)


# -- uniform sampling ----------------------------------------------------------------

@dataclass
class BallSample:
    matrices: np.ndarray          # (count, n, n) or (count, N, n, n)
    eigenvalues: np.ndarray
    ess: float
    acceptance: float
    thin: int
    rhat: float


def sample_uniform_ball(n: int, R: float, count: int, seed=0, N: int = 1,
                        config: MCConfig | None = None) -> BallSample:
    """Draws uniform on the norm ball (N-tuples when N > 1).

    Eigenvalues come from the Vandermonde-squared density on [-R, R]^n by
    Metropolis with thinning; eigenvectors from Haar unitaries.  The scalar
    case n = 1 is sampled exactly.
    """
    if count < 1:
        raise ValueError("count must be positive")
    total = count * N
    rng = make_rng(task_seed(seed, "ball", n) if not isinstance(seed, np.random.Generator) else seed)
    if n == 1:
        lam = rng.uniform(-1.0, 1.0, size=(total, 1))
        ess, acc, thin, rhat = float(total), 1.0, 1, 1.0
    else:
        cfg = config or MCConfig()
        chains = max(1, min(cfg.chains * 2, total))
        per = -(-total // chains)
        cfg = MCConfig(**{**asdict(cfg), "samples": per})
        run = run_ensemble(Energy(None, None, 1), n, np.zeros(chains), rng, cfg, N=1, keep_states=True)
        lam = run.states.reshape(-1, n)[:total]
        ess = effective_sample_size(run.monitor)
        acc = float(run.acceptance.mean())
        thin = run.thin
        rhat = split_rhat(run.monitor)
    V = haar_unitary(n, total, rng)
    A = R * (V * lam[:, None, :]) @ np.conj(np.swapaxes(V, -1, -2))
    eig = R * lam
    if N > 1:
        A = A.reshape(count, N, n, n)
        eig = eig.reshape(count, N, n)
    return BallSample(A, eig, ess, acc, thin, rhat)


# -- thermodynamic integration -----------------------------------------------------------

@dataclass
class Schedule:
    """Quadrature in the coupling beta.

    ``linear``: Gauss-Legendre on each panel.  ``log``: on a panel [0, b] a
    short Gauss-Legendre panel covers [0, b * floor] and the rest is
    Gauss-Legendre in log(beta), for integrands that vary on small scales.
    """

    nodes: int = 16
    kind: str = "linear"
    floor: float = 1e-7
    floor_nodes: int = 4

    def __post_init__(self):
        if self.nodes < 16:
            raise ValueError("schedule needs at least 16 Gauss-Legendre nodes")
        if self.kind not in ("linear", "log"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not 0 < self.floor < 1:
            raise ValueError("floor must lie in (0, 1)")

    def rule(self, a: float, b: float):
        x, w = np.polynomial.legendre.leggauss(self.nodes)
        if self.kind == "linear":
            return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w
        pts, wts = [], []
        lo = a
        if a == 0:
            lo = b * self.floor
            xf, wf = np.polynomial.legendre.leggauss(self.floor_nodes)
            pts.append(0.5 * lo * (xf + 1))
            wts.append(0.5 * lo * wf)
        ta, tb = math.log(lo), math.log(b)
        t = 0.5 * (tb - ta) * x + 0.5 * (ta + tb)
        pts.append(np.exp(t))
        wts.append(0.5 * (tb - ta) * w * np.exp(t))
        return np.concatenate(pts), np.concatenate(wts)


@dataclass
class MicroPressure:
    n: int
    R: float
    N: int
    coupling: float
    value: float
    stderr: float
    mean_energy: float | None = None      # <tr_n h>_1 when requested
    mean_energy_stderr: float | None = None
    diagnostics: dict = field(default_factory=dict)
    ok: bool = True

    @property
    def scaled(self) -> float:
        return self.value / self.n ** 2 + 0.5 * self.N * math.log(self.n)

    @property
    def scaled_stderr(self) -> float:
        return self.stderr / self.n ** 2


def _union_blocks(word_groups, nvars):
    parent = list(range(nvars))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    used = set()
    for letters in word_groups:
        letters = sorted(set(letters))
        used.update(letters)
        for a in letters[1:]:
            ra, rb = find(letters[0]), find(a)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    groups: dict = {}
    for v in sorted(used):
        groups.setdefault(find(v), []).append(v)
    return list(groups.values())


def decompose(h: NCPolynomial | None, q: TensorPolynomial | None, nvars: int):
    """Split into connected variable blocks.

    Returns (constant, blocks) where each block is (variables, h_block,
    q_block) with letters relabeled to 0..L-1.
    """
    hr = cyclic_reduce(h) if h is not None else None
    qr = None
    if q is not None:
        terms: dict = {}
        for (a, b), c in q.terms.items():
            ra = min((a[k:] + a[:k] for k in range(len(a))), default=a)
            rb = min((b[k:] + b[:k] for k in range(len(b))), default=b)
            terms[(ra, rb)] = terms.get((ra, rb), 0) + c
        qr = TensorPolynomial(terms, q.nvars)
    const = 0.0
    groups = []
    if hr is not None:
        const += complex(hr.constant).real
        groups += [w for w in hr.terms if w]
    if qr is not None:
        const += complex(qr.constant).real
        groups += [a + b for (a, b) in qr.terms if a + b]
    blocks = []
    for vs in _union_blocks(groups, nvars):
        mp = {v: i for i, v in enumerate(vs)}
        sv = set(vs)
        hb = None
        if hr is not None:
            hb = NCPolynomial({tuple(mp[i] for i in w): c for w, c in hr.terms.items() if w and set(w) <= sv},
                              len(vs))
        qb = None
        if qr is not None:
            qb = TensorPolynomial({(tuple(mp[i] for i in a), tuple(mp[i] for i in b)): c
                                   for (a, b), c in qr.terms.items() if a + b and set(a + b) <= sv}, len(vs))
        blocks.append((vs, hb, qb))
    return const, blocks


def _signature(hb, qb):
    sig_h = tuple(sorted(hb.terms)) if hb is not None else ()
    sig_q = tuple(sorted(qb.terms)) if qb is not None else ()
    return (sig_h, sig_q)


def _run_panel(energy: Energy, L: int, n: int, a: float, b: float, schedule: Schedule,
               config: MCConfig, seed, sig):
    pts, wts = schedule.rule(a, b)
    C = config.chains
    betas = np.repeat(pts, C)
    rng = make_rng(task_seed(seed, "ti", n, sig, repr((a, b)), schedule.kind, schedule.nodes))
    run = run_ensemble(energy, n, betas, rng, config, N=L)
    chain_means = run.U.mean(axis=1).reshape(pts.size, C)
    node_mean = chain_means.mean(axis=1)
    node_se = chain_means.std(axis=1, ddof=1) / math.sqrt(C) if C > 1 else np.zeros(pts.size)
    U = run.U.reshape(pts.size, C, -1)
    rhat = np.array([split_rhat(U[k]) if np.ptp(U[k]) > 0 else 1.0 for k in range(pts.size)])
    # exchange moves couple the nodes of a ladder, so errors come from whole-ladder integrals
    ladder = wts @ chain_means
    integral = float(ladder.mean())
    var = float(ladder.var(ddof=1) / C) if C > 1 else 0.0
    diag = {"panel": [a, b], "betas": pts.tolist(), "node_mean": node_mean.tolist(),
            "node_se": node_se.tolist(), "rhat_max": float(np.nanmax(rhat)),
            "acceptance": [float(run.acceptance.min()), float(run.acceptance.max())],
            "thin": run.thin, "iat": run.iat, "kind": run.kind,
            "swap_rate": (run.sampler.swaps / max(run.sampler.swap_tries, 1) * 2).tolist()}
    return integral, var, diag


def _mean_at(energy, L, n, beta, config, seed, sig):
    rng = make_rng(task_seed(seed, "mean", n, sig, repr(beta)))
    run = run_ensemble(energy, n, np.full(config.chains, beta), rng, config, N=L)
    cm = run.U.mean(axis=1)
    se = float(cm.std(ddof=1) / math.sqrt(cm.size)) if cm.size > 1 else 0.0
    rh = split_rhat(run.U) if np.ptp(run.U) > 0 else 1.0
    return float(cm.mean()), se, rh


def pressure_path(h: NCPolynomial | None, n: int, R: float, couplings=(1.0,),
                  schedule: Schedule | None = None, seed=0, config: MCConfig | None = None,
                  *, q: TensorPolynomial | None = None, nvars: int | None = None,
                  with_mean: bool = False) -> list:
    """P_{R,n}(s h + s q) for each coupling s in increasing order.

    Panels [0, s_1], [s_1, s_2], ... are integrated separately and seeded by
    their endpoints, so a coupling shared between two calls gets identical
    draws on its panels.
    """
    schedule = schedule or Schedule()
    config = config or MCConfig()
    for p in (h, q):
        if p is not None and not p.is_selfadjoint():
            raise ValueError("potential must be selfadjoint")
    N = nvars or max([p.nvars for p in (h, q) if p is not None] + [1])
    couplings = [float(s) for s in couplings]
    if any(s <= 0 for s in couplings) or sorted(couplings) != couplings:
        raise ValueError("couplings must be positive and increasing")
    const, blocks = decompose(h, q, N)
    logv = log_ball_volume(n, R)
    nn = n * n
    out_vals = np.full(len(couplings), N * logv) - nn * const * np.array(couplings)
    out_var = np.zeros(len(couplings))
    mean_tot = np.full(len(couplings), const) if with_mean else None
    mean_var = np.zeros(len(couplings))
    diagnostics = {"blocks": [], "constant": const, "log_volume": logv}
    ok = True
    for vs, hb, qb in blocks:
        L = len(vs)
        energy = Energy.build(hb, qb, R, L)
        sig = _signature(hb, qb)
        bcfg = config if L == 1 or config.kind != "spectral" else MCConfig(**{**asdict(config), "kind": "matrix"})
        cum, cvar, a = 0.0, 0.0, 0.0
        bdiag = {"variables": vs, "panels": []}
        for k, s in enumerate(couplings):
            I, v, d = _run_panel(energy, L, n, a, s, schedule, bcfg, seed, sig)
            cum += I
            cvar += v
            out_vals[k] -= nn * cum
            out_var[k] += nn * nn * cvar
            bdiag["panels"].append(d)
            ok &= d["rhat_max"] <= config.rhat_max
            if with_mean:
                m, se, rh = _mean_at(energy, L, n, s, bcfg, seed, sig)
                mean_tot[k] += m
                mean_var[k] += se * se
                ok &= rh <= config.rhat_max
            a = s
        diagnostics["blocks"].append(bdiag)
    if not ok:
        warnings.warn("split-R-hat above threshold: chains did not mix", MixingWarning, stacklevel=2)
    res = []
    for k, s in enumerate(couplings):
        res.append(MicroPressure(n=n, R=R, N=N, coupling=s, value=float(out_vals[k]),
                                 stderr=float(math.sqrt(out_var[k])),
                                 mean_energy=None if mean_tot is None else float(mean_tot[k]),
                                 mean_energy_stderr=None if mean_tot is None else float(math.sqrt(mean_var[k])),
                                 diagnostics=diagnostics, ok=bool(ok)))
    return res


def estimate_micro_pressure(h: NCPolynomial, n: int, R: float, schedule: Schedule | None = None,
                            seed=0, config: MCConfig | None = None, *, q: TensorPolynomial | None = None,
                            nvars: int | None = None, with_mean: bool = False) -> MicroPressure:
    """P_{R,n}(h) by thermodynamic integration from the exact ball volume.

    Constant terms are handled exactly and variables that never interact are
    integrated as separate blocks, so P(h + c) = P(h) - n^2 c and additivity
    over disjoint variable sets hold without Monte Carlo error.
    """
    return pressure_path(h, n, R, (1.0,), schedule, seed, config, q=q, nvars=nvars, with_mean=with_mean)[0]


def micro_record(h: NCPolynomial | None, est: MicroPressure, schedule: Schedule, seed) -> dict:
    """JSON-ready run record."""
    return {"h": h.to_text() if h is not None else None, "n": est.n, "R": est.R, "N": est.N,
            "schedule": asdict(schedule), "seed": int(seed), "value": est.value, "stderr": est.stderr,
            "scaled": est.scaled, "scaled_stderr": est.scaled_stderr, "ok": est.ok,
            "diagnostics": json.loads(json.dumps(est.diagnostics, default=float))}


# -- extrapolation ---------------------------------------------------------------------

@dataclass
class PressureEstimate:
    records: list                  # (n, scaled value, stderr)
    value: float                   # c0
    stderr: float
    slope: float                   # c1
    cov: np.ndarray
    residual: float                # weighted residual sum of squares
    method: dict = field(default_factory=dict)
    h: str | None = None

    def to_dict(self) -> dict:
        return {"records": [list(map(float, r)) for r in self.records], "value": self.value,
                "stderr": self.stderr, "slope": self.slope, "cov": self.cov.tolist(),
                "residual": self.residual, "method": self.method, "h": self.h}


def extrapolate_pressure(records, *, h: str | None = None, method: dict | None = None) -> PressureEstimate:
    """Fit c0 + c1 / n^2 to scaled per-n values; c0 estimates the free pressure.

    Weighted least squares with weights 1/stderr^2; ordinary least squares
    when any stderr is zero (deterministic sequences).
    """
    rows = []
    for r in records:
        if isinstance(r, MicroPressure):
            rows.append((r.n, r.scaled, r.scaled_stderr))
        else:
            n, y, *rest = r
            rows.append((int(n), float(y), float(rest[0]) if rest else 0.0))
    ns = np.array([r[0] for r in rows], dtype=float)
    if len(set(ns.tolist())) < 3:
        raise ValueError("need at least 3 distinct n values")
    y = np.array([r[1] for r in rows])
    se = np.array([r[2] for r in rows])
    X = np.column_stack([np.ones_like(ns), 1.0 / ns ** 2])
    if np.linalg.matrix_rank(X) < 2 or np.linalg.cond(X) > 1e12:
        raise ValueError("degenerate design matrix")
    weighted = bool(np.all(se > 0))
    w = 1.0 / se ** 2 if weighted else np.ones_like(y)
    Xw = X * np.sqrt(w)[:, None]
    yw = y * np.sqrt(w)
    coef, *_ = np.linalg.lstsq(Xw, yw, rcond=None)
    resid = yw - Xw @ coef
    rss = float(resid @ resid)
    XtX_inv = np.linalg.inv(Xw.T @ Xw)
    if weighted:
        cov = XtX_inv
    else:
        dof = len(y) - 2
        cov = XtX_inv * (rss / dof if dof > 0 else 0.0)
    return PressureEstimate(records=rows, value=float(coef[0]), stderr=float(math.sqrt(max(cov[0, 0], 0.0))),
                            slope=float(coef[1]), cov=cov, residual=rss,
                            method=dict(method or {}, fit="wls" if weighted else "ols"), h=h)


# -- microstate volumes --------------------------------------------------------------------

@dataclass
class MicrostateSpec:
    targets: MomentSpec
    eps: float
    R: float
    r: int | None = None

    def __post_init__(self):
        if self.r is None:
            self.r = self.targets.degree
        if self.r > self.targets.degree:
            raise ValueError("targets do not reach degree r")
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    @property
    def words(self) -> list:
        return words_up_to(self.targets.nvars, self.r)


@dataclass
class MicrostateResult:
    log_volume: float
    hits: int
    samples: int
    stderr: float
    exact: bool
    log_upper: float | None = None   # confidence bound when there are no hits


def _interval_region_length(spec: MicrostateSpec) -> float:
    """Exact Lebesgue measure of {t in [-R, R]: |t^k - tau_k| <= eps, k <= r}."""
    R, eps = spec.R, spec.eps
    cuts = {-R, R}
    for k in range(1, spec.r + 1):
        tau = spec.targets.value((0,) * k)
        for c in (tau - eps, tau + eps):
            coeffs = np.zeros(k + 1)
            coeffs[0], coeffs[k] = 1.0, -c
            for root in np.roots(coeffs):
                if abs(root.imag) < 1e-9 and -R < root.real < R:
                    cuts.add(float(root.real))
    pts = np.array(sorted(cuts))
    mids = 0.5 * (pts[1:] + pts[:-1])
    good = np.ones(mids.size, dtype=bool)
    for k in range(1, spec.r + 1):
        tau = spec.targets.value((0,) * k)
        good &= np.abs(mids ** k - tau) <= eps
    return float(np.diff(pts)[good].sum())


def microstate_hits(spec: MicrostateSpec, mats: np.ndarray) -> np.ndarray:
    """Boolean per tuple: every word trace within eps of its target."""
    tr = word_traces(spec.words, mats)
    ok = np.ones(mats.shape[0], dtype=bool)
    for w in spec.words:
        ok &= np.abs(tr[w] - spec.targets.functional(w)) <= spec.eps
    return ok


def microstate_volume(spec: MicrostateSpec, n: int, samples: int = 10000, seed=0,
                      confidence: float = 0.95) -> MicrostateResult:
    """log Lambda_n^N of the microstate set Gamma_R(targets; n, r, eps)."""
    N = spec.targets.nvars
    if n == 1 and N == 1:
        length = _interval_region_length(spec)
        lv = math.log(length) if length > 0 else -math.inf
        return MicrostateResult(lv, 0, 0, 0.0, True)
    draw = sample_uniform_ball(n, spec.R, samples, seed, N=N)
    mats = draw.matrices if N > 1 else draw.matrices[:, None]
    hits = int(microstate_hits(spec, mats).sum())
    base = N * log_ball_volume(n, spec.R)
    if hits == 0:
        p_up = 1.0 - (1.0 - confidence) ** (1.0 / samples)
        return MicrostateResult(-math.inf, 0, samples, math.inf, False, base + math.log(p_up))
    p = hits / samples
    return MicrostateResult(base + math.log(p), hits, samples, math.sqrt((1 - p) / hits), False)
