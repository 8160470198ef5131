"""Gibbs ensembles on products of matrix balls, their moments and entropy."""
from __future__ import annotations

import io
import json
import math
import struct
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gammaln
from scipy.stats import ks_2samp

from .chains import (Energy, MCConfig, SpectralSampler, effective_sample_size, haar_unitary,
                     make_rng, make_sampler, run_ensemble, split_rhat, task_seed)
from .matrixmc import MixingWarning, Schedule, estimate_micro_pressure, log_ball_volume, sample_uniform_ball
from .moments import MomentSpec
from .ncpoly import MatrixTuple, NCPolynomial, cyclic_reduce, word_traces, words_up_to

CHECKPOINT_MAGIC = b"FPCHAIN\0"
CHECKPOINT_VERSION = 1


@dataclass
class GibbsChain:
    """Thinned draws from exp(-n^2 tr_n h0(A)) dLambda_n^N on the ball product.

    ``states`` are stored in unit coordinates A / R: eigenvalues of shape
    (chains, samples, n) for the spectral sampler, full tuples of shape
    (chains, samples, N, n, n) for the matrix sampler.
    """

    h0: NCPolynomial
    n: int
    R: float
    N: int
    kind: str
    seed: int
    states: np.ndarray = field(repr=False)
    U: np.ndarray = field(repr=False)
    monitor: np.ndarray = field(repr=False)
    acceptance: np.ndarray = field(repr=False)
    thin: int = 1
    warmup: int = 0
    rhat: float = 1.0
    ess: float = 0.0
    ok: bool = True
    sampler_state: dict = field(default_factory=dict, repr=False)
    config: MCConfig = field(default_factory=MCConfig, repr=False)

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.acceptance))

    @property
    def chains(self) -> int:
        return self.states.shape[0]

    @property
    def samples(self) -> int:
        return self.states.shape[1]

    def matrices(self, limit: int | None = None) -> np.ndarray:
        """States at scale R as (chains, samples, N, n, n) arrays.

        Spectral states are conjugated by Haar unitaries drawn from a stream
        derived from the chain seed, so repeated calls agree.
        """
        st = self.states if limit is None else self.states[:, :limit]
        if self.kind == "matrix":
            return self.R * st
        rng = make_rng(task_seed(self.seed, "haar", self.n))
        V = haar_unitary(self.n, st.shape[:2], rng)
        A = (V * st[..., None, :]) @ np.conj(np.swapaxes(V, -1, -2))
        return self.R * A[:, :, None]

    def tuples(self, limit: int | None = None) -> list:
        M = self.matrices(limit)
        return [MatrixTuple(M[c, s], self.R, tol=1e-8) for c in range(M.shape[0]) for s in range(M.shape[1])]

    def in_ball(self, tol: float = 1e-12) -> bool:
        if self.kind == "spectral":
            return bool(np.all(np.abs(self.states) <= 1.0 + tol))
        return bool(np.all(np.abs(np.linalg.eigvalsh(self.states)) <= 1.0 + tol))


def _sampler_snapshot(smp) -> dict:
    snap = {"step": smp.step.copy(), "rng": smp.rng.bit_generator.state}
    if isinstance(smp, SpectralSampler):
        snap.update(current=smp.lam.copy(), dil=smp.dil_step.copy(), shift=smp.shift_step.copy())
    else:
        snap.update(current=smp.Y.copy())
    return snap


def run_chain(h0: NCPolynomial, n: int, R: float, config: MCConfig | None = None, seed=0,
              *, N: int | None = None) -> GibbsChain:
    """Metropolis chains targeting the Gibbs ensemble of ``h0``.

    Single-variable (unitarily invariant) potentials use the eigenvalue
    sampler unless ``config.kind == "matrix"``; otherwise each sweep adds
    Gaussian Hermitian noise to one matrix at a time and rejects proposals
    that leave the ball.  Step sizes adapt during warmup only.
    """
    if not h0.is_selfadjoint():
        raise ValueError("h0 must be selfadjoint")
    config = config or MCConfig()
    N = N or h0.nvars
    hr = cyclic_reduce(h0).without_constant()
    kind = config.kind
    if kind == "auto":
        kind = "spectral" if N == 1 else "matrix"
    energy = Energy.build(hr, None, R, N)
    rng = make_rng(task_seed(seed, "gibbs", n, tuple(sorted(hr.terms)), kind))
    run = run_ensemble(energy, n, np.ones(config.chains), rng, config, N=N, keep_states=True)
    rh_u = split_rhat(run.U) if np.ptp(run.U) > 0 else 1.0
    rh_m = split_rhat(run.monitor)
    rhat = float(np.nanmax([rh_u, rh_m]))
    ok = rhat <= config.rhat_max
    if not ok:
        warnings.warn(f"Gibbs chain split-R-hat {rhat:.3f} exceeds {config.rhat_max}", MixingWarning, stacklevel=2)
    return GibbsChain(h0=h0, n=n, R=R, N=N, kind=run.kind, seed=int(seed), states=run.states, U=run.U,
                      monitor=run.monitor, acceptance=run.acceptance, thin=run.thin, warmup=run.warmup,
                      rhat=rhat, ess=effective_sample_size(run.monitor), ok=bool(ok),
                      sampler_state=_sampler_snapshot(run.sampler), config=config)


def continue_chain(chain: GibbsChain, samples: int) -> GibbsChain:
    """Append ``samples`` more thinned draws per chain, resuming the stored sampler."""
    hr = cyclic_reduce(chain.h0).without_constant()
    energy = Energy.build(hr, None, chain.R, chain.N)
    snap = chain.sampler_state
    rng = np.random.Generator(np.random.Philox())
    rng.bit_generator.state = snap["rng"]
    C = chain.chains
    smp = make_sampler(chain.kind, chain.n, energy, np.ones(C), rng, chain.config.step0, chain.N)
    smp.step = np.array(snap["step"], dtype=float)
    if chain.kind == "spectral":
        smp.lam = np.array(snap["current"], dtype=float)
        smp.dil_step = np.array(snap["dil"], dtype=float)
        smp.shift_step = np.array(snap["shift"], dtype=float)
        smp.psum = smp._psums(smp.lam)
        smp.U = smp._U(smp.psum)
    else:
        smp.Y = np.array(snap["current"])
        smp.U = smp._U(smp.Y)
    new_states, U, M = [], np.empty((C, samples)), np.empty((C, samples))
    for s in range(samples):
        for _ in range(chain.thin):
            smp.sweep()
        U[:, s] = smp.U
        M[:, s] = smp.monitor()
        new_states.append((smp.lam if chain.kind == "spectral" else smp.Y).copy())
    acc_new = smp.accepted / max(smp.proposed, 1)
    S0 = chain.samples
    acceptance = (chain.acceptance * S0 + acc_new * samples) / (S0 + samples)
    states = np.concatenate([chain.states, np.stack(new_states, axis=1)], axis=1)
    Uall = np.concatenate([chain.U, U], axis=1)
    Mall = np.concatenate([chain.monitor, M], axis=1)
    rh = float(np.nanmax([split_rhat(Uall) if np.ptp(Uall) > 0 else 1.0, split_rhat(Mall)]))
    return GibbsChain(h0=chain.h0, n=chain.n, R=chain.R, N=chain.N, kind=chain.kind, seed=chain.seed,
                      states=states, U=Uall, monitor=Mall, acceptance=acceptance, thin=chain.thin,
                      warmup=chain.warmup, rhat=rh, ess=effective_sample_size(Mall),
                      ok=rh <= chain.config.rhat_max, sampler_state=_sampler_snapshot(smp), config=chain.config)


# -- checkpoints -------------------------------------------------------------------

def _npy_bytes(a: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, np.ascontiguousarray(a), allow_pickle=False)
    return buf.getvalue()


def save_checkpoint(chain: GibbsChain, path) -> None:
    """Binary checkpoint: magic, version, JSON metadata, then .npy blobs."""
    snap = chain.sampler_state
    arrays = {"states": chain.states, "U": chain.U, "monitor": chain.monitor, "acceptance": chain.acceptance,
              "current": np.asarray(snap["current"]), "step": np.asarray(snap["step"])}
    if chain.kind == "spectral":
        arrays["dil"] = np.asarray(snap["dil"])
        arrays["shift"] = np.asarray(snap["shift"])
    rng_state = json.loads(json.dumps(snap["rng"], default=lambda o: np.asarray(o).tolist()))
    meta = {"h0": chain.h0.to_text(), "n": chain.n, "R": chain.R, "N": chain.N, "kind": chain.kind,
            "seed": chain.seed, "thin": chain.thin, "warmup": chain.warmup, "rhat": chain.rhat,
            "ess": chain.ess, "ok": chain.ok, "config": asdict(chain.config), "rng": rng_state,
            "arrays": list(arrays)}
    mb = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HI", CHECKPOINT_VERSION, len(mb)))
        fh.write(mb)
        for name in arrays:
            blob = _npy_bytes(arrays[name])
            fh.write(struct.pack("<Q", len(blob)))
            fh.write(blob)


def load_checkpoint(path) -> GibbsChain:
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValueError("not a chain checkpoint")
        version, mlen = struct.unpack("<HI", fh.read(6))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        meta = json.loads(fh.read(mlen))
        arrays = {}
        for name in meta["arrays"]:
            (blen,) = struct.unpack("<Q", fh.read(8))
            arrays[name] = np.load(io.BytesIO(fh.read(blen)), allow_pickle=False)
    rng_state = meta["rng"]
    rng_state["state"] = {k: np.array(v, dtype=np.uint64) for k, v in rng_state["state"].items()}
    rng_state["buffer"] = np.array(rng_state["buffer"], dtype=np.uint64)
    snap = {"current": arrays["current"], "step": arrays["step"], "rng": rng_state}
    if meta["kind"] == "spectral":
        snap.update(dil=arrays["dil"], shift=arrays["shift"])
    h0 = NCPolynomial.from_text(meta["h0"])
    return GibbsChain(h0=h0, n=meta["n"], R=meta["R"], N=meta["N"], kind=meta["kind"], seed=meta["seed"],
                      states=arrays["states"], U=arrays["U"], monitor=arrays["monitor"],
                      acceptance=arrays["acceptance"], thin=meta["thin"], warmup=meta["warmup"],
                      rhat=meta["rhat"], ess=meta["ess"], ok=meta["ok"], sampler_state=snap,
                      config=MCConfig(**meta["config"]))


# -- moment functionals ---------------------------------------------------------------

def estimate_state(chain: GibbsChain, r: int) -> MomentSpec:
    """Chain averages of tr_n(w(A)) for all words of degree <= r, reversal-symmetrized.

    Since tr_n(w*(A)) is the conjugate of tr_n(w(A)) for Hermitian
    matrices, averaging a word with its reversal keeps the real part.
    """
    words = words_up_to(chain.N, r)
    C = chain.chains
    per_chain = {}
    if chain.kind == "spectral":
        for w in words:
            per_chain[w] = np.mean(chain.states ** len(w), axis=(1, 2)) * chain.R ** len(w)
    else:
        Y = chain.states.reshape((-1,) + chain.states.shape[2:])
        tr = word_traces(words, Y)
        for w in words:
            t = 0.5 * (tr[w] + tr[tuple(reversed(w))])
            per_chain[w] = np.real(t).reshape(C, -1).mean(axis=1) * chain.R ** len(w)
    vals = {(): 1.0}
    errs = {(): 0.0}
    for w in words:
        pc = per_chain[w]
        vals[w] = float(pc.mean())
        errs[w] = float(pc.std(ddof=1) / math.sqrt(C)) if C > 1 else 0.0
    return MomentSpec(chain.N, r, vals, errs, provenance="chain", R=chain.R)


# -- entropy ----------------------------------------------------------------------------------

@dataclass
class EntropyEstimate:
    n: int
    N: int
    S: float
    stderr: float
    pressure: float
    mean_energy: float
    ok: bool = True

    @property
    def scaled(self) -> float:
        return self.S / self.n ** 2 + 0.5 * self.N * math.log(self.n)

    @property
    def scaled_stderr(self) -> float:
        return self.stderr / self.n ** 2


def boltzmann_entropy(h0: NCPolynomial, n: int, R: float, config: MCConfig | None = None,
                      schedule: Schedule | None = None, seed=0, *, nvars: int | None = None) -> EntropyEstimate:
    """S(lambda^{h0}) = P_{R,n}(h0) + n^2 mu^{h0}(h0).

    Both terms are computed for h0 with its constant removed; the constant
    cancels exactly between them.
    """
    N = nvars or h0.nvars
    h = h0.without_constant()
    est = estimate_micro_pressure(h, n, R, schedule, seed, config, nvars=N, with_mean=True)
    nn = n * n
    S = est.value + nn * est.mean_energy
    err = math.hypot(est.stderr, nn * est.mean_energy_stderr)
    return EntropyEstimate(n=n, N=N, S=float(S), stderr=float(err), pressure=est.value,
                           mean_energy=est.mean_energy, ok=est.ok)


# -- Descartes and polar correspondences -------------------------------------------------------

def log_polar_constant(n: int) -> float:
    """log C_n = log(pi^{n(n+1)/2} / (2^{n(n-1)/2} prod_{j<n} j!))."""
    j = np.arange(1, n)
    return float(0.5 * n * (n + 1) * math.log(math.pi) - 0.5 * n * (n - 1) * math.log(2.0)
                 - gammaln(j + 1).sum())


def _projection_ks(a: np.ndarray, b: np.ndarray, directions: int = 8) -> float:
    """Bonferroni-combined two-sample KS over projections onto fixed directions."""
    th = np.pi * np.arange(directions) / directions
    ps = [ks_2samp(a @ np.array([math.cos(t), math.sin(t)]), b @ np.array([math.cos(t), math.sin(t)])).pvalue
          for t in th]
    return float(min(1.0, directions * min(ps)))


@dataclass
class PolarReport:
    n: int
    r: float
    descartes_pvalues: dict
    direct: float
    direct_stderr: float
    polar: float
    polar_stderr: float
    log_C: float
    exact: float | None = None

    @property
    def agree(self) -> bool:
        return abs(self.direct - self.polar) <= 3 * math.hypot(self.direct_stderr, self.polar_stderr)

    @property
    def descartes_ok(self) -> bool:
        return min(self.descartes_pvalues.values()) > 0.01


def _unit_ball_positive_fraction(n, r2, samples, rng):
    """Fraction of uniform draws on the radius-r2 ball that are positive semidefinite."""
    if n == 1:
        x = rng.uniform(-r2, r2, samples)
        return float(np.mean(x >= 0)), samples
    draw = sample_uniform_ball(n, r2, samples, rng)
    pos = draw.eigenvalues.min(axis=-1) >= 0
    return float(pos.mean()), max(draw.ess, 1.0)


def polar_descartes_check(n: int, samples: int = 20000, seed=0, r: float = 1.0) -> PolarReport:
    """Numerical checks of the Descartes and polar measure correspondences on M_n."""
    if not 1 <= n <= 4:
        raise ValueError("polar_descartes_check supports 1 <= n <= 4")
    rng = make_rng(task_seed(seed, "polar", n))
    # (a) Descartes: pushforward of a product measure under (A1, A2) -> A1 + i A2
    pv = {}
    if n == 1:
        a = rng.uniform(-r, r, (samples, 2))
        rho = r * math.sqrt(2) * np.sqrt(rng.random(4 * samples))
        ang = 2 * np.pi * rng.random(4 * samples)
        pts = np.column_stack([rho * np.cos(ang), rho * np.sin(ang)])
        pts = pts[np.all(np.abs(pts) <= r, axis=1)][:samples]
        pv["planar"] = _projection_ks(a, pts)
    else:
        # Gaussian weight exp(-tr A1^2 - tr A2^2) = exp(-tr X*X) on both sides
        def gue(size):
            G = rng.standard_normal(size + (n, n)) + 1j * rng.standard_normal(size + (n, n))
            return (G + np.conj(np.swapaxes(G, -1, -2))) / (2 * math.sqrt(2))
        X1 = gue((samples,)) + 1j * gue((samples,))
        X2 = (rng.standard_normal((samples, n, n)) + 1j * rng.standard_normal((samples, n, n))) / math.sqrt(2)
        stats = {
            "tr_XsX": lambda X: np.real(np.einsum("sij,sij->s", np.conj(X), X)) / n,
            "re_tr": lambda X: np.real(np.trace(X, axis1=1, axis2=2)),
            "abs_x12": lambda X: np.abs(X[:, 0, 1]),
            "tr_XsX2": lambda X: np.real(np.trace(np.linalg.matrix_power(np.conj(np.swapaxes(X, 1, 2)) @ X, 2),
                                                  axis1=1, axis2=2)) / n,
        }
        raw = {k: ks_2samp(f(X1), f(X2)).pvalue for k, f in stats.items()}
        pv = {k: float(min(1.0, len(raw) * p)) for k, p in raw.items()}
    # (b) measure of {||X|| <= r} two ways
    m = 2 * n * n
    cube = rng.uniform(-r, r, (samples, n, n)) + 1j * rng.uniform(-r, r, (samples, n, n))
    hit = np.linalg.norm(cube, ord=2, axis=(1, 2)) <= r
    p = float(hit.mean())
    cube_vol = (2 * r) ** m
    direct = cube_vol * p
    direct_se = cube_vol * math.sqrt(p * (1 - p) / samples)
    logC = log_polar_constant(n)
    frac, ess = _unit_ball_positive_fraction(n, r * r, samples, rng)
    base = math.exp(logC + log_ball_volume(n, r * r))
    polar = base * frac
    polar_se = base * math.sqrt(frac * (1 - frac) / ess)
    exact = math.pi * r * r if n == 1 else None
    return PolarReport(n=n, r=r, descartes_pvalues=pv, direct=direct, direct_stderr=direct_se,
                       polar=polar, polar_stderr=polar_se, log_C=logC, exact=exact)
