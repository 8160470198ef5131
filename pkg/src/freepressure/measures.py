"""Probability measures on [-R, R] discretized as piecewise-uniform cells.

A :class:`DiscreteMeasure` spreads ``weights[i]`` uniformly over cell ``i``
of the uniform partition of [-R, R].  Under that reading every quantity
below is an exact integral: moments integrate monomials over cells, and the
logarithmic energy uses the closed-form average of log|x - y| over pairs of
cells, diagonal included.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

HALF_LOG_2PI = 0.5 * np.log(2 * np.pi)
CHI_CONST = HALF_LOG_2PI + 0.75


def _g2(z):
    """Second antiderivative of log|z| with value 0 at the origin."""
    z = np.asarray(z, dtype=float)
    az = np.abs(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(az > 0, 0.5 * z * z * np.log(np.where(az > 0, az, 1.0)) - 0.75 * z * z, 0.0)
    return out


def _g1(z):
    """Antiderivative of log|z|: z log|z| - z."""
    z = np.asarray(z, dtype=float)
    az = np.abs(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(az > 0, z * np.log(np.where(az > 0, az, 1.0)) - z, 0.0)


def cell_log_kernel(m: int) -> np.ndarray:
    """kappa[k] = int_0^1 int_0^1 log|k + s - t| ds dt for k = 0..m-1.

    Closed form for small k; for k >= 8 the even-moment series of the
    triangular difference s - t avoids cancellation in the second difference.
    """
    k = np.arange(m, dtype=float)
    out = np.empty(m)
    small = k < 8
    ks = k[small]
    out[small] = _g2(ks + 1) - 2 * _g2(ks) + _g2(ks - 1)
    kb = k[~small]
    if kb.size:
        series = np.zeros_like(kb)
        for j in range(1, 9):
            series += 1.0 / (j * (2 * j + 1) * (2 * j + 2) * kb ** (2 * j))
        out[~small] = np.log(kb) - series
    return out


# -- analytic CDFs for named densities ----------------------------------------

def _cdf_semicircle(x, center, r):
    u = np.clip((x - center) / r, -1.0, 1.0)
    return 0.5 + (u * np.sqrt(1 - u * u) + np.arcsin(u)) / np.pi


def _cdf_arcsine(x, center, a):
    u = np.clip((x - center) / a, -1.0, 1.0)
    return 0.5 + np.arcsin(u) / np.pi


def _cdf_uniform(x, a, b):
    return np.clip((x - a) / (b - a), 0.0, 1.0)


def _cdf_free_poisson(x, scale):
    # rate-one free Poisson on [0, 4 scale], density sqrt(x(4s - x)) / (2 pi s x)
    u = np.clip(x / (4 * scale), 0.0, 1.0)
    th = np.arcsin(np.sqrt(u))
    return (2 / np.pi) * (th + np.sin(th) * np.cos(th))


KINDS = ("semicircle", "arcsine", "uniform", "free_poisson", "point", "custom")


@dataclass
class DiscreteMeasure:
    R: float
    weights: np.ndarray
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a nonempty vector")
        if np.any(w < -1e-15):
            raise ValueError("weights must be nonnegative")
        w = np.clip(w, 0.0, None)
        s = w.sum()
        if abs(s - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {s!r}, not 1")
        self.weights = w / s
        self.R = float(self.R)

    @property
    def m(self) -> int:
        return self.weights.size

    @property
    def width(self) -> float:
        return 2 * self.R / self.m

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(-self.R, self.R, self.m + 1)

    @property
    def nodes(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[1:] + e[:-1])

    # -- integrals --------------------------------------------------------
    def moment(self, k: int) -> float:
        if k < 0:
            raise ValueError("k must be >= 0")
        if k == 0:
            return float(self.weights.sum())
        e = self.edges
        cell = (e[1:] ** (k + 1) - e[:-1] ** (k + 1)) / ((k + 1) * self.width)
        return float(self.weights @ cell)

    def moments(self, kmax: int) -> np.ndarray:
        return np.array([self.moment(k) for k in range(kmax + 1)])

    def integrate(self, f, order: int = 8) -> float:
        """mu(f) = sum_i w_i * (cell average of f)."""
        return float(self.weights @ cell_average(f, self.R, self.m, order))

    def kernel_apply(self, v: np.ndarray | None = None) -> np.ndarray:
        """(K v)_i = sum_j K_ij v_j with K_ij the mean of log|x-y| over cells i, j."""
        v = self.weights if v is None else v
        kap = cell_log_kernel(self.m)
        full = np.concatenate([kap[:0:-1], kap])
        conv = fftconvolve(v, full, mode="full")[self.m - 1: 2 * self.m - 1]
        return np.log(self.width) * v.sum() + conv

    def log_energy(self) -> float:
        """Sigma(mu) = double integral of log|x - y|."""
        return float(self.weights @ self.kernel_apply())

    def chi(self) -> float:
        return self.log_energy() + CHI_CONST

    def potential(self, x) -> np.ndarray:
        """U(x) = int log|x - y| dmu(y), exact for piecewise-uniform cells."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        e = self.edges
        hi = x[:, None] - e[None, :-1]
        lo = x[:, None] - e[None, 1:]
        cell = (_g1(hi) - _g1(lo)) / self.width
        out = cell @ self.weights
        return out

    def cell_potential(self) -> np.ndarray:
        """Cell averages of U over the grid, i.e. K @ weights."""
        return self.kernel_apply()

    # -- derived measures --------------------------------------------------
    def scaled(self, s: float) -> "DiscreteMeasure":
        """Pushforward under t -> s t (same cell count, radius s R)."""
        if s <= 0:
            raise ValueError("scale must be positive")
        return DiscreteMeasure(s * self.R, self.weights.copy(), self.kind, dict(self.params, scale=s))

    def mix(self, other: "DiscreteMeasure", alpha: float) -> "DiscreteMeasure":
        if other.m != self.m or other.R != self.R:
            raise ValueError("measures live on different grids")
        return DiscreteMeasure(self.R, alpha * self.weights + (1 - alpha) * other.weights, "custom")

    def l1_distance(self, other: "DiscreteMeasure") -> float:
        if other.m != self.m or other.R != self.R:
            raise ValueError("measures live on different grids")
        return float(np.abs(self.weights - other.weights).sum())

    # -- CSV ----------------------------------------------------------------
    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(f"# R={self.R!r} kind={self.kind} gridsize={self.m}\n")
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["node", "weight"])
        for x, w in zip(self.nodes, self.weights):
            wr.writerow([repr(float(x)), repr(float(w))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "DiscreteMeasure":
        text = source if "\n" in str(source) else open(source).read()
        lines = text.splitlines()
        header = dict(tok.split("=", 1) for tok in lines[0].lstrip("# ").split())
        rows = list(csv.reader(lines[2:]))
        w = np.array([float(r[1]) for r in rows])
        if len(w) != int(header["gridsize"]):
            raise ValueError("gridsize header does not match row count")
        return cls(float(header["R"]), w, header.get("kind", "custom"))


def cell_average(f, R: float, m: int, order: int = 8) -> np.ndarray:
    """Average of f over each cell of the uniform m-cell partition of [-R, R]."""
    if isinstance(f, np.ndarray):
        if f.shape != (m,):
            raise ValueError("tabulated cell averages must have one value per cell")
        return f
    x, wq = np.polynomial.legendre.leggauss(order)
    e = np.linspace(-R, R, m + 1)
    mid = 0.5 * (e[1:] + e[:-1])
    half = 0.5 * (e[1] - e[0])
    pts = mid[:, None] + half * x[None, :]
    vals = np.asarray(f(pts), dtype=float)
    return 0.5 * vals @ wq


def make_measure(kind: str, params: dict | None = None, gridsize: int = 1000, R: float | None = None) -> DiscreteMeasure:
    """Discretize a named density by exact CDF differences over cells.

    kinds and params:
      semicircle  {m: center, r: radius}
      arcsine     {a: half-width, center}     (a defaults to R)
      uniform     {a, b}
      free_poisson {scale}                    (rate one, support [0, 4 scale])
      point       {x}                         (all mass in the cell holding x)
      custom      {weights}
    """
    params = dict(params or {})
    if kind not in KINDS:
        raise ValueError(f"unknown measure kind {kind!r}; expected one of {KINDS}")
    if kind == "semicircle":
        c, r = params.get("m", 0.0), params.get("r", 2.0)
        lo, hi = c - r, c + r
        cdf = lambda x: _cdf_semicircle(x, c, r)
    elif kind == "arcsine":
        a = params.get("a", params.get("R", R))
        if a is None:
            raise ValueError("arcsine needs a half-width 'a' or R")
        c = params.get("center", 0.0)
        lo, hi = c - a, c + a
        cdf = lambda x: _cdf_arcsine(x, c, a)
    elif kind == "uniform":
        a, b = params.get("a", -1.0), params.get("b", 1.0)
        if not b > a:
            raise ValueError("uniform needs a < b")
        lo, hi = a, b
        cdf = lambda x: _cdf_uniform(x, a, b)
    elif kind == "free_poisson":
        s = params.get("scale", 1.0)
        lo, hi = 0.0, 4 * s
        cdf = lambda x: _cdf_free_poisson(x, s)
    elif kind == "point":
        x0 = float(params["x"])
        lo = hi = x0
        cdf = None
    else:
        w = np.asarray(params["weights"], dtype=float)
        if R is None:
            raise ValueError("custom measure needs R")
        return DiscreteMeasure(R, w, "custom", {})
    if R is None:
        R = max(abs(lo), abs(hi))
    if lo < -R - 1e-12 or hi > R + 1e-12:
        raise ValueError(f"support [{lo}, {hi}] exceeds [-{R}, {R}]")
    edges = np.linspace(-R, R, gridsize + 1)
    if cdf is None:
        w = np.zeros(gridsize)
        w[min(np.searchsorted(edges, x0, side="right") - 1, gridsize - 1)] = 1.0
    else:
        w = np.diff(cdf(edges))
        w = np.clip(w, 0.0, None)
    return DiscreteMeasure(R, w / w.sum(), kind, params)


def log_energy(mu: DiscreteMeasure) -> float:
    return mu.log_energy()


def chi(mu: DiscreteMeasure) -> float:
    """Free entropy of a single variable: Sigma(mu) + log(2 pi)/2 + 3/4."""
    return mu.chi()


def moments(mu: DiscreteMeasure, k: int) -> float:
    return mu.moment(k)


def potential(mu: DiscreteMeasure, x):
    out = mu.potential(x)
    return float(out[0]) if np.ndim(x) == 0 else out
