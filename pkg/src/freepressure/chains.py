"""Vectorized Metropolis samplers for Gibbs ensembles on matrix norm balls.

All samplers work in unit coordinates Y = A / R, so the state space is the
product of unit operator-norm balls and the potential is the dilated
polynomial h(R Y).  Many chains advance in lockstep, each with its own
coupling ``beta``; the target of chain c is

    exp(-beta_c * n^2 * U(Y)) restricted to ||Y_i|| <= 1, against Lambda_n,

where U(Y) = Re tr_n h(RY) + Re (tr_n (x) tr_n) q(RY).

Two state representations are available:

* ``spectral``: N = 1 and a unitarily invariant U.  The chain moves the
  eigenvalues one at a time under the density |Vandermonde|^2 exp(-...).
  Matrices are recovered by Haar conjugation.
* ``matrix``: general N.  Each sweep perturbs every matrix in turn by
  Gaussian Hermitian noise; proposals leaving the ball are rejected.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm, rankdata

from .ncpoly import NCPolynomial, TensorPolynomial, dilate, word_traces


# -- seeding --------------------------------------------------------------------

def task_seed(master: int, *key) -> np.random.SeedSequence:
    """Seed for a task, derived from the master seed and a task key only."""
    words = []
    for k in key:
        if isinstance(k, (int, np.integer)):
            words.append(int(k) & 0xFFFFFFFF)
        else:
            digest = hashlib.sha256(repr(k).encode()).digest()
            words.extend(int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4))
    return np.random.SeedSequence(entropy=int(master), spawn_key=tuple(words))


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(seed))


def haar_unitary(n: int, size, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitaries via QR of complex Ginibre with phase fix."""
    shape = tuple(np.atleast_1d(size)) + (n, n)
    Z = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    Q, Rm = np.linalg.qr(Z)
    d = np.diagonal(Rm, axis1=-2, axis2=-1)
    ph = d / np.abs(d)
    return Q * ph[..., None, :]


def hermitian_noise(shape, rng: np.random.Generator) -> np.ndarray:
    """Isotropic Gaussian on M_n^sa w.r.t. the Hilbert-Schmidt inner product."""
    G = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    H = (G + np.conj(np.swapaxes(G, -1, -2))) / 2.0
    return H


# -- diagnostics ------------------------------------------------------------------

def integrated_autocorr_time(x: np.ndarray, c: float = 5.0) -> float:
    """Sokal's windowed estimate of the integrated autocorrelation time."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4 or np.var(x) == 0:
        return 1.0
    f = np.fft.rfft(x - x.mean(), n=2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    taus = 2.0 * np.cumsum(acf) - 1.0
    window = np.arange(n) < c * taus
    m = int(np.argmin(window)) if not window.all() else n - 1
    return float(max(taus[m], 1.0))


def split_rhat(draws: np.ndarray) -> float:
    """Rank-normalized split-R-hat for draws of shape (chains, samples)."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 2 or draws.shape[1] < 4:
        return np.nan
    half = draws.shape[1] // 2
    split = np.concatenate([draws[:, :half], draws[:, half:2 * half]], axis=0)
    if np.ptp(split) == 0:
        return 1.0
    z = norm.ppf((rankdata(split).reshape(split.shape) - 0.375) / (split.size + 0.25))
    m, s = z.shape
    W = z.var(axis=1, ddof=1).mean()
    B = s * z.mean(axis=1).var(ddof=1)
    var = (s - 1) / s * W + B / s
    return float(np.sqrt(var / W)) if W > 0 else np.inf


def effective_sample_size(draws: np.ndarray) -> float:
    draws = np.atleast_2d(draws)
    return float(sum(d.size / integrated_autocorr_time(d) for d in draws))


# -- energies ---------------------------------------------------------------------

@dataclass
class Energy:
    """U(Y) = Re tr_n h(RY) + Re (tr (x) tr) q(RY), stored in unit coordinates."""

    lin: NCPolynomial | None
    quad: TensorPolynomial | None
    nvars: int

    @classmethod
    def build(cls, h=None, q=None, R: float = 1.0, nvars: int | None = None) -> "Energy":
        lin = dilate(h, R, 1.0).without_constant() if h is not None else None
        quad = None
        if q is not None:
            quad = TensorPolynomial({(a, b): c * R ** (len(a) + len(b)) for (a, b), c in q.terms.items()},
                                    q.nvars).without_constant()
        nv = nvars or max([p.nvars for p in (h, q) if p is not None] + [1])
        return cls(lin, quad, nv)

    def is_zero(self) -> bool:
        return (self.lin is None or self.lin.is_zero()) and (self.quad is None or not self.quad.terms)

    def words(self) -> set:
        ws = set()
        if self.lin is not None:
            ws |= set(self.lin.terms)
        if self.quad is not None:
            ws |= {w for pair in self.quad.terms for w in pair}
        ws.discard(())
        return ws

    def variables(self) -> set:
        return {i for w in self.words() for i in w}

    def spectral_coeffs(self):
        """(a, b) with U = a . m + m . b . m in terms of power moments m_k."""
        ws = self.words()
        if len({i for w in ws for i in w}) > 1:
            raise ValueError("spectral energy needs a single indeterminate")
        d = max((len(w) for w in ws), default=0)
        a = np.zeros(d + 1)
        b = np.zeros((d + 1, d + 1))
        if self.lin is not None:
            for w, c in self.lin.terms.items():
                a[len(w)] += c.real
        if self.quad is not None:
            for (w1, w2), c in self.quad.terms.items():
                b[len(w1), len(w2)] += c.real
        b = 0.5 * (b + b.T)
        return a, b

    def from_traces(self, tr: dict) -> np.ndarray:
        out = 0.0
        if self.lin is not None:
            for w, c in self.lin.terms.items():
                out = out + c * tr[w]
        if self.quad is not None:
            for (w1, w2), c in self.quad.terms.items():
                t1 = tr[w1] if w1 else 1.0
                t2 = tr[w2] if w2 else 1.0
                out = out + c * t1 * t2
        return np.real(out)


# -- samplers ---------------------------------------------------------------------

@dataclass
class MCConfig:
    chains: int = 8
    adapt: int = 300
    samples: int = 200
    thin: int | None = None
    max_thin: int = 20
    pilot: int = 100
    kind: str = "auto"
    rhat_max: float = 1.05
    step0: float = 0.05


def _pooled(rate: np.ndarray, groups: np.ndarray) -> np.ndarray:
    """Mean of ``rate`` over chains sharing a coupling, broadcast back."""
    sums = np.bincount(groups, weights=rate)
    counts = np.bincount(groups)
    return (sums / counts)[groups]


class _Ladder:
    """Replica exchange between chains at adjacent couplings.

    Chains are grouped by coupling; the c-th chain of every group forms
    ladder c.  Swaps happen only within a ladder, so ladders stay
    independent and every coupling keeps its own stationary law.
    """

    def _init_ladder(self):
        uniq, self.groups = np.unique(self.betas, return_inverse=True)
        members = [np.flatnonzero(self.groups == g) for g in range(uniq.size)]
        same = len({m.size for m in members}) == 1
        self.rungs = uniq if uniq.size > 1 and same else None
        self.members = members
        self.parity = 0
        self.swaps = np.zeros(max(uniq.size - 1, 0))
        self.swap_tries = 0

    def _exchange(self, state_names):
        if self.rungs is None:
            return
        nn = float(self.n * self.n)
        K = self.rungs.size
        for k in range(self.parity, K - 1, 2):
            i, j = self.members[k], self.members[k + 1]
            logr = nn * (self.rungs[k] - self.rungs[k + 1]) * (self.U[i] - self.U[j])
            ok = np.log(self.rng.random(i.size)) < logr
            a, b = i[ok], j[ok]
            for name in state_names:
                arr = getattr(self, name)
                arr[a], arr[b] = arr[b].copy(), arr[a].copy()
            self.U[a], self.U[b] = self.U[b].copy(), self.U[a].copy()
            self.swaps[k] += ok.mean()
        self.parity ^= 1
        self.swap_tries += 1


class SpectralSampler(_Ladder):
    """Single-site Metropolis on unit-scaled eigenvalues, many chains at once."""

    target = 0.44

    def __init__(self, n: int, energy: Energy, betas: np.ndarray, rng: np.random.Generator, step0: float):
        self.n = n
        self.betas = np.asarray(betas, dtype=float)
        C = self.betas.size
        self.a, self.b = energy.spectral_coeffs() if not energy.is_zero() else (np.zeros(1), np.zeros((1, 1)))
        self.d = self.a.size - 1
        self.rng = rng
        base = np.cos(np.pi * (np.arange(n) + 0.5) / n) * 0.9
        self.lam = np.tile(base, (C, 1)) + 1e-3 * rng.standard_normal((C, n))
        self.lam = np.clip(self.lam, -0.999, 0.999)
        self.psum = self._psums(self.lam)
        self.U = self._U(self.psum)
        self.step = np.full(C, step0 * 2.0 / max(n, 1) ** 0.5)
        self.dil_step = np.full(C, 0.5 / n)
        self.shift_step = np.full(C, 0.5 / n)
        self.last_rate = np.full(C, self.target)
        self.dil_rate = np.full(C, self.target)
        self.shift_rate = np.full(C, self.target)
        self.accepted = np.zeros(C)
        self.proposed = 0
        self._init_ladder()
        self.ema = {"site": np.full(C, self.target), "dil": np.full(C, self.target),
                    "shift": np.full(C, self.target)}

    def _psums(self, lam):
        return np.stack([np.sum(lam ** k, axis=-1) for k in range(self.d + 1)], axis=-1)

    def _U(self, psum):
        m = psum / self.n
        return m @ self.a + np.einsum("ck,kl,cl->c", m, self.b, m)

    def sweep(self):
        n, C = self.n, self.betas.size
        z = self.rng.standard_normal((C, n))
        u = np.log(self.rng.random((C, n)))
        nn = float(n * n)
        acc_total = np.zeros(C)
        pw = np.arange(self.d + 1)
        for i in range(n):
            old = self.lam[:, i]
            new = old + self.step * z[:, i]
            inside = np.abs(new) <= 1.0
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.abs((new[:, None] - self.lam) / (old[:, None] - self.lam))
                ratio[:, i] = 1.0
                dlv = 2.0 * np.sum(np.log(ratio), axis=1)
            psum_new = self.psum + new[:, None] ** pw - old[:, None] ** pw
            U_new = self._U(psum_new) if self.d > 0 else self.U
            logr = dlv - self.betas * nn * (U_new - self.U)
            ok = inside & (u[:, i] < logr)
            self.lam[ok, i] = new[ok]
            self.psum[ok] = psum_new[ok]
            if self.d > 0:
                self.U = np.where(ok, U_new, self.U)
            acc_total += ok
        # refresh power sums against drift from incremental updates
        self.psum = self._psums(self.lam)
        self.U = self._U(self.psum)
        self._global_moves()
        self._exchange(("lam", "psum"))
        rate = acc_total / n
        self.last_rate = rate
        self.accepted += rate
        self.proposed += 1
        return rate

    def _global_moves(self):
        # dilation lam -> c lam: |Vandermonde|^2 d lam scales by c^(n^2)
        C, n = self.betas.size, self.n
        nn = float(n * n)
        z = self.rng.standard_normal((2, C))
        u = np.log(self.rng.random((2, C)))
        logc = self.dil_step * z[0]
        lam = self.lam * np.exp(logc)[:, None]
        inside = np.abs(lam).max(axis=1) <= 1.0
        psum = self._psums(lam)
        U = self._U(psum)
        ok = inside & (u[0] < nn * logc - self.betas * nn * (U - self.U))
        self._take(ok, lam, psum, U)
        self.dil_rate = ok.astype(float)
        # rigid shift: Vandermonde and Lebesgue measure unchanged
        lam = self.lam + (self.shift_step * z[1])[:, None]
        inside = np.abs(lam).max(axis=1) <= 1.0
        psum = self._psums(lam)
        U = self._U(psum)
        ok = inside & (u[1] < -self.betas * nn * (U - self.U))
        self._take(ok, lam, psum, U)
        self.shift_rate = ok.astype(float)

    def _take(self, ok, lam, psum, U):
        self.lam[ok] = lam[ok]
        self.psum[ok] = psum[ok]
        self.U = np.where(ok, U, self.U)

    def adapt(self, gain: float):
        # acceptance is pooled over chains at equal coupling and smoothed, so equal
        # couplings end with equal step sizes
        for key, rate in (("site", self.last_rate), ("dil", self.dil_rate), ("shift", self.shift_rate)):
            self.ema[key] = 0.8 * self.ema[key] + 0.2 * _pooled(rate, self.groups)
        self.step = np.minimum(self.step * np.exp(gain * (self.ema["site"] - self.target)), 2.0)
        self.dil_step = np.minimum(self.dil_step * np.exp(gain * (self.ema["dil"] - self.target)), 1.0)
        self.shift_step = np.minimum(self.shift_step * np.exp(gain * (self.ema["shift"] - self.target)), 1.0)

    def monitor(self) -> np.ndarray:
        return np.mean(self.lam ** 2, axis=1)

    def log_density(self, lam, beta):
        lam = np.asarray(lam, dtype=float)
        if np.any(np.abs(lam) > 1):
            return -np.inf
        diff = np.abs(lam[:, None] - lam[None, :])
        iu = np.triu_indices(lam.size, 1)
        psum = self._psums(lam[None, :])
        with np.errstate(divide="ignore"):
            logv = 2.0 * np.sum(np.log(diff[iu]))
        return logv - beta * self.n ** 2 * self._U(psum)[0]

    def state_matrices(self, R: float, rng: np.random.Generator, lam=None) -> np.ndarray:
        lam = self.lam if lam is None else lam
        V = haar_unitary(self.n, lam.shape[:-1], rng)
        return R * (V * lam[..., None, :]) @ np.conj(np.swapaxes(V, -1, -2))


class MatrixSampler(_Ladder):
    """Random-walk Metropolis on N-tuples of Hermitian matrices in the unit ball."""

    target = 0.3

    def __init__(self, n: int, energy: Energy, betas: np.ndarray, rng: np.random.Generator,
                 step0: float, N: int | None = None):
        self.n = n
        self.N = N or energy.nvars
        self.energy = energy
        self.betas = np.asarray(betas, dtype=float)
        self.rng = rng
        C = self.betas.size
        self.words = sorted(energy.words(), key=lambda w: (len(w), w))
        base = np.cos(np.pi * (np.arange(n) + 0.5) / n) * 0.5
        V = haar_unitary(n, (C, self.N), rng)
        self.Y = (V * base[None, None, None, :]) @ np.conj(np.swapaxes(V, -1, -2))
        self.U = self._U(self.Y)
        self.step = np.full(C, step0 / np.sqrt(n))
        self.last_rate = np.full(C, self.target)
        self.accepted = np.zeros(C)
        self.proposed = 0
        self._init_ladder()
        self.ema = np.full(C, self.target)

    def _U(self, Y):
        if not self.words:
            return np.zeros(Y.shape[0])
        return self.energy.from_traces(word_traces(self.words, Y))

    def sweep(self):
        C, N, n = self.betas.size, self.N, self.n
        rate = np.zeros(C)
        nn = float(n * n)
        for k in range(N):
            G = hermitian_noise((C, n, n), self.rng)
            u = np.log(self.rng.random(C))
            Yk = self.Y[:, k] + self.step[:, None, None] * G
            inside = np.abs(np.linalg.eigvalsh(Yk)).max(axis=-1) <= 1.0
            Ynew = self.Y.copy()
            Ynew[:, k] = Yk
            U_new = self._U(Ynew)
            logr = -self.betas * nn * (U_new - self.U)
            ok = inside & (u < logr)
            self.Y[ok, k] = Yk[ok]
            self.U = np.where(ok, U_new, self.U)
            rate += ok
        self._exchange(("Y",))
        rate /= N
        self.last_rate = rate
        self.accepted += rate
        self.proposed += 1
        return rate

    def adapt(self, gain: float):
        self.ema = 0.8 * self.ema + 0.2 * _pooled(self.last_rate, self.groups)
        self.step = np.minimum(self.step * np.exp(gain * (self.ema - self.target)), 2.0)

    def monitor(self) -> np.ndarray:
        return np.real(np.einsum("ckij,ckji->c", self.Y, self.Y)) / (self.n * self.N)

    def log_density(self, Y, beta):
        Y = np.asarray(Y)
        if np.abs(np.linalg.eigvalsh(Y)).max() > 1.0:
            return -np.inf
        return float(-beta * self.n ** 2 * self._U(Y[None])[0])


def make_sampler(kind: str, n: int, energy: Energy, betas, rng, step0: float, N: int):
    if kind == "auto":
        kind = "spectral" if N == 1 else "matrix"
    if kind == "spectral":
        if N != 1:
            raise ValueError("spectral sampler needs N = 1")
        return SpectralSampler(n, energy, betas, rng, step0)
    if kind == "matrix":
        return MatrixSampler(n, energy, betas, rng, step0, N)
    raise ValueError(f"unknown sampler kind {kind!r}")


@dataclass
class EnsembleRun:
    """Recorded output of a lockstep run."""

    U: np.ndarray                # (chains, samples) potential per recorded state
    monitor: np.ndarray          # (chains, samples) mean tr_n(Y_i^2)
    states: np.ndarray | None    # (chains, samples, ...) unit-coordinate states
    acceptance: np.ndarray       # (chains,) acceptance after the freeze
    thin: int
    warmup: int
    iat: float
    kind: str
    sampler: object = field(repr=False, default=None)


def run_ensemble(energy: Energy, n: int, betas, rng: np.random.Generator, config: MCConfig,
                 N: int = 1, keep_states: bool = False) -> EnsembleRun:
    """Adapt, estimate thinning from a pilot, warm up, then record."""
    kind = config.kind
    if kind == "auto":
        kind = "spectral" if N == 1 else "matrix"
    smp = make_sampler(kind, n, energy, betas, rng, config.step0, N)
    for t in range(config.adapt):
        smp.sweep()
        smp.adapt(1.0 / (1.0 + t / 20.0) ** 0.6)
    if config.thin is None:
        pilot = np.empty((2, len(smp.betas), config.pilot))
        for t in range(config.pilot):
            smp.sweep()
            pilot[0, :, t] = smp.U
            pilot[1, :, t] = smp.monitor()
        taus = [integrated_autocorr_time(p) for p in pilot.reshape(-1, config.pilot) if np.ptp(p) > 0]
        iat = float(np.percentile(taus, 90)) if taus else 1.0
        thin = int(min(max(np.ceil(iat), 1), config.max_thin))
    else:
        iat, thin = float("nan"), int(config.thin)
    warm = 10 * thin
    for _ in range(warm):
        smp.sweep()
    smp.accepted[:] = 0
    smp.proposed = 0
    C = len(smp.betas)
    U = np.empty((C, config.samples))
    M = np.empty((C, config.samples))
    states = [] if keep_states else None
    for s in range(config.samples):
        for _ in range(thin):
            smp.sweep()
        U[:, s] = smp.U
        M[:, s] = smp.monitor()
        if keep_states:
            states.append((smp.lam if kind == "spectral" else smp.Y).copy())
    acc = smp.accepted / max(smp.proposed, 1)
    st = np.stack(states, axis=1) if keep_states else None
    return EnsembleRun(U, M, st, acc, thin, warm, iat, kind, smp)
