"""Single-variable free pressure and equilibrium measures on [-R, R].

The free pressure of a continuous h is the maximum of -mu(h) + chi(mu) over
probability measures on the interval.  On the piecewise-uniform cell model of
:mod:`freepressure.measures` this is a concave quadratic program over the
weight simplex

    maximize  -hbar . w + w . K w        subject to  w >= 0,  sum w = 1,

with K the exact cell-averaged logarithmic kernel.  The solver runs
pairwise conditional-gradient steps with exact line search and then polishes
the support with an active-set solve of the Frostman (KKT) conditions.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.linalg import solve

from .measures import CHI_CONST, DiscreteMeasure, cell_average, cell_log_kernel
from .ncpoly import NCPolynomial


class EquilibriumNotConverged(RuntimeWarning):
    pass


@dataclass
class PotentialFn:
    """A real potential on [-R, R]: a univariate polynomial, a callable, or a table.

    Tables are interpolated with a monotone cubic (PCHIP), which keeps
    pointwise orderings of tables intact.
    """

    source: object
    R: float | None = None

    def __post_init__(self):
        src = self.source
        if isinstance(src, NCPolynomial):
            if len(src.variables()) > 1:
                raise ValueError("potential must involve a single indeterminate")
            if not src.is_selfadjoint():
                raise ValueError("potential polynomial must be selfadjoint (real coefficients)")
            coeffs = src.real_coefficients()
            self._f = np.polynomial.Polynomial(coeffs)
        elif isinstance(src, tuple) and len(src) == 2:
            x, y = (np.asarray(a, dtype=float) for a in src)
            self._f = PchipInterpolator(x, y, extrapolate=True)
        elif callable(src):
            self._f = src
        else:
            raise TypeError(f"cannot build a potential from {type(src).__name__}")

    def __call__(self, x):
        return np.asarray(self._f(x), dtype=float)

    def cell_values(self, R: float, m: int) -> np.ndarray:
        return cell_average(self, R, m)


def _hbar(h, R: float, m: int) -> np.ndarray:
    if isinstance(h, np.ndarray):
        if h.shape != (m,):
            raise ValueError(f"tabulated potential has {h.shape[0]} cells, grid has {m}")
        return h.astype(float)
    if not isinstance(h, PotentialFn):
        h = PotentialFn(h, R)
    return h.cell_values(R, m)


@dataclass
class EquilibriumResult:
    sigma: DiscreteMeasure
    pressure: float
    frostman_constant: float
    residual_on: float
    residual_off: float
    iterations: int
    converged: bool
    hbar: np.ndarray = field(repr=False)
    potential2: np.ndarray = field(repr=False)  # 2 * (cell-averaged U_sigma)
    objective_change: float = 0.0

    @property
    def chi(self) -> float:
        return self.sigma.chi()

    def to_csv(self, path=None) -> str:
        lines = [f"# pressure={float(self.pressure)!r} F={float(self.frostman_constant)!r} "
                 f"residual_on={float(self.residual_on)!r} residual_off={float(self.residual_off)!r} "
                 f"converged={self.converged}",
                 "node,weight,h,twoU"]
        for x, w, h, u in zip(self.sigma.nodes, self.sigma.weights, self.hbar, self.potential2):
            lines.append(f"{float(x)!r},{float(w)!r},{float(h)!r},{float(u)!r}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


class _Kernel:
    """Column access to the Toeplitz cell kernel K_ij = log(width) + kappa_|i-j|."""

    def __init__(self, R, m):
        self.m = m
        self.logw = np.log(2 * R / m)
        self.kap = cell_log_kernel(m)
        self.idx = np.arange(m)

    def col(self, j):
        return self.logw + self.kap[np.abs(self.idx - j)]

    def sub(self, S):
        return self.logw + self.kap[np.abs(S[:, None] - S[None, :])]


def _frostman(w, g, m):
    # g = 2Kw - hbar; Frostman: hbar - 2Kw = F on the support, >= F elsewhere
    v = -g
    thr = 1e-9 / m
    supp = w > thr
    order = np.argsort(v[supp])
    cw = np.cumsum(w[supp][order])
    F = float(v[supp][order][np.searchsorted(cw, 0.5 * cw[-1])])
    on = float(np.abs(v[supp] - F).max())
    off = float(np.clip(F - v[~supp], 0.0, None).max()) if (~supp).any() else 0.0
    return F, on, off


def solve_equilibrium(h, R: float, grid: int = 1000, *, fw_iters: int | None = None,
                      tol: float = 1e-6, obj_tol: float = 1e-10, max_active: int = 60) -> EquilibriumResult:
    """Equilibrium measure and free pressure of ``h`` on [-R, R].

    ``h`` may be a univariate :class:`NCPolynomial`, a callable, a
    ``(nodes, values)`` table, a :class:`PotentialFn`, or an array of cell
    averages of length ``grid``.
    """
    if grid < 200:
        raise ValueError("grid must have at least 200 cells")
    m = grid
    hbar = _hbar(h, R, m)
    K = _Kernel(R, m)
    w = np.full(m, 1.0 / m)
    g = 2 * DiscreteMeasure(R, w).kernel_apply(w) - hbar
    fw_iters = 30 * m if fw_iters is None else fw_iters
    kap0 = K.kap[0]
    it = 0
    for it in range(1, fw_iters + 1):
        a = int(np.argmax(g))
        act = np.flatnonzero(w > 0)
        b = int(act[np.argmin(g[act])])
        gap = g[a] - g[b]
        if gap < 1e-3 * tol:
            break
        curv = 2 * (kap0 - K.kap[abs(a - b)])
        gamma = min(w[b], gap / (-2 * curv))
        w[a] += gamma
        w[b] -= gamma
        if w[b] < 1e-300:
            w[b] = 0.0
        g += 2 * gamma * (K.col(a) - K.col(b))

    def objective(wv, gv):
        # -h.w + w.Kw = (g.w - h.w) / 2 with g = 2Kw - h
        return 0.5 * float(gv @ wv - hbar @ wv)

    obj = objective(w, g)
    dobj = np.inf
    # active-set polish on the Frostman conditions
    S = np.flatnonzero(w > 1e-9 / m)
    for _ in range(max_active):
        s = S.size
        A = np.zeros((s + 1, s + 1))
        A[:s, :s] = 2 * K.sub(S)
        A[:s, s] = -1.0
        A[s, :s] = 1.0
        rhs = np.concatenate([hbar[S], [1.0]])
        sol = solve(A, rhs)
        wS, lam = sol[:s], sol[s]
        if np.any(wS < 0):
            cur = w[S]
            neg = wS < cur
            steps = np.where(neg & (wS < 0), cur / np.where(cur - wS > 0, cur - wS, 1.0), np.inf)
            alpha = min(1.0, float(steps.min()))
            new = cur + alpha * (wS - cur)
            new[new < 1e-15] = 0.0
            w = np.zeros(m)
            w[S] = new
            S = S[new > 0]
            w /= w.sum()
            g = 2 * DiscreteMeasure(R, w).kernel_apply(w) - hbar
            continue
        w_new = np.zeros(m)
        w_new[S] = wS
        g_new = 2 * DiscreteMeasure(R, w_new).kernel_apply(w_new) - hbar
        new_obj = objective(w_new, g_new)
        dobj = abs(new_obj - obj)
        w, g, obj = w_new, g_new, new_obj
        viol = g - lam
        viol[S] = -np.inf
        add = np.flatnonzero(viol > 0.1 * tol)
        if add.size == 0:
            break
        S = np.union1d(S, add)
    w = np.clip(w, 0.0, None)
    w /= w.sum()
    g = 2 * DiscreteMeasure(R, w).kernel_apply(w) - hbar
    F, on, off = _frostman(w, g, m)
    # dobj stays infinite when the first step already lands inside tolerance
    converged = on < tol and off < tol and (dobj < obj_tol or dobj == np.inf)
    if not converged:
        warnings.warn(f"equilibrium solver did not converge: residuals on={on:.2e}, off={off:.2e}",
                      EquilibriumNotConverged, stacklevel=2)
    sigma = DiscreteMeasure(R, w, "equilibrium")
    obj = objective(w, g)
    return EquilibriumResult(sigma=sigma, pressure=obj + CHI_CONST, frostman_constant=F,
                             residual_on=on, residual_off=off, iterations=it,
                             converged=bool(converged), hbar=hbar, potential2=g + hbar,
                             objective_change=float(dobj if np.isfinite(dobj) else 0.0))


def free_pressure(h, R: float, grid: int = 1000) -> float:
    """pi_R(h) for a single-variable potential."""
    return solve_equilibrium(h, R, grid).pressure


@dataclass
class LegendreResult:
    value: float
    upper_bound: bool
    h_star: np.ndarray = field(repr=False)
    equilibrium: EquilibriumResult = field(repr=False)


def chi_via_legendre(mu: DiscreteMeasure) -> LegendreResult:
    """mu(h*) + pi_R(h*) at the candidate dual optimizer h* = 2 U_mu.

    Any h gives an upper bound of chi(mu) = inf_h mu(h) + pi_R(h); at
    h* = 2 U_mu the bound is attained on the grid.
    """
    h_star = 2 * mu.cell_potential()
    eq = solve_equilibrium(h_star, mu.R, mu.m)
    return LegendreResult(float(mu.weights @ h_star) + eq.pressure, True, h_star, eq)
