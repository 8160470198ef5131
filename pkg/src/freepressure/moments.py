"""Truncated tracial functionals on words and free-product moment recursions.

A :class:`MomentSpec` stores one real number ``a_w`` per word up to a degree.
The functional it defines on polynomials is

    mu(w) = (a_w + a_{w*}) / 2 + i (a_w - a_{w*}) / 2,

which makes mu *-preserving (mu(p*) = conj mu(p)) and hence real on
selfadjoint polynomials.  Reversal-symmetric tables (a_w = a_{w*}) give real
word values.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .ncpoly import NCPolynomial, Word, parse_word, word_key, word_str, words_up_to


@dataclass
class MomentSpec:
    nvars: int
    degree: int
    values: dict
    stderr: dict | None = None
    provenance: str = "analytic"
    R: float | None = None

    def __post_init__(self):
        vals = {tuple(w): float(v) for w, v in self.values.items()}
        vals.setdefault((), 1.0)
        missing = [w for w in words_up_to(self.nvars, self.degree, include_empty=True) if w not in vals]
        if missing:
            raise ValueError(f"moment table lacks word {word_str(missing[0])} (and {len(missing) - 1} more)")
        self.values = dict(sorted(vals.items(), key=lambda t: word_key(t[0])))
        if self.stderr is not None:
            self.stderr = {tuple(w): float(v) for w, v in self.stderr.items()}

    # -- evaluation ---------------------------------------------------------
    def value(self, w: Word) -> float:
        w = tuple(w)
        if w not in self.values:
            raise KeyError(f"word {word_str(w)} beyond degree {self.degree}")
        return self.values[w]

    def functional(self, w: Word) -> complex:
        a, b = self.value(w), self.value(tuple(reversed(w)))
        return complex(0.5 * (a + b), 0.5 * (a - b))

    def __call__(self, p: NCPolynomial) -> complex:
        return complex(sum(c * self.functional(w) for w, c in p.terms.items()))

    def real(self, p: NCPolynomial) -> float:
        return float(np.real(self(p)))

    def error_of(self, p: NCPolynomial) -> float:
        """Standard error of mu(p), treating per-word errors as independent."""
        if self.stderr is None:
            return 0.0
        return float(np.sqrt(sum((abs(c) * self.stderr.get(w, 0.0)) ** 2 for w, c in p.terms.items())))

    # -- structure ------------------------------------------------------------
    def is_reversal_symmetric(self, tol: float = 0.0) -> bool:
        return all(abs(v - self.values[tuple(reversed(w))]) <= tol for w, v in self.values.items())

    def symmetrized(self) -> "MomentSpec":
        vals = {w: 0.5 * (v + self.values[tuple(reversed(w))]) for w, v in self.values.items()}
        return MomentSpec(self.nvars, self.degree, vals, self.stderr, self.provenance, self.R)

    def truncated(self, degree: int) -> "MomentSpec":
        vals = {w: v for w, v in self.values.items() if len(w) <= degree}
        err = None if self.stderr is None else {w: v for w, v in self.stderr.items() if len(w) <= degree}
        return MomentSpec(self.nvars, degree, vals, err, self.provenance, self.R)

    def words(self, include_empty: bool = False) -> list:
        return [w for w in self.values if w or include_empty]

    # -- CSV ----------------------------------------------------------------------
    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(f"# nvars={self.nvars} degree={self.degree} provenance={self.provenance}\n")
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["word", "value", "stderr"])
        for w, v in self.values.items():
            se = 0.0 if self.stderr is None else self.stderr.get(w, 0.0)
            wr.writerow([word_str(w), repr(v), repr(se)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "MomentSpec":
        text = source if "\n" in str(source) else open(source).read()
        lines = text.splitlines()
        header = dict(tok.split("=", 1) for tok in lines[0].lstrip("# ").split())
        vals, errs = {}, {}
        for row in csv.reader(lines[2:]):
            w = parse_word(row[0])
            vals[w] = float(row[1])
            errs[w] = float(row[2])
        prov = header.get("provenance", "analytic")
        return cls(int(header["nvars"]), int(header["degree"]), vals,
                   errs if any(errs.values()) else None, prov)

    # -- constructors ---------------------------------------------------------------
    @classmethod
    def from_measure(cls, mu, degree: int) -> "MomentSpec":
        """Moments of a single-variable measure (a DiscreteMeasure)."""
        vals = {(0,) * k: mu.moment(k) for k in range(degree + 1)}
        return cls(1, degree, vals, provenance=f"measure:{mu.kind}", R=mu.R)

    @classmethod
    def free(cls, marginals, degree: int) -> "MomentSpec":
        """Mixed moments of a free family given each variable's moment sequence."""
        kappas = [free_cumulants(np.asarray(m, dtype=float), degree) for m in marginals]
        N = len(marginals)
        vals = {w: free_moment(w, kappas) for w in words_up_to(N, degree, include_empty=True)}
        return cls(N, degree, vals, provenance="free")

    @classmethod
    def semicircular(cls, nvars: int, degree: int, variance: float = 1.0) -> "MomentSpec":
        m = [semicircle_moments(degree, variance)] * nvars
        return cls.free(m, degree)


def semicircle_moments(kmax: int, variance: float = 1.0) -> np.ndarray:
    """m_k of the centred semicircle: Catalan numbers times variance^{k/2}."""
    out = np.zeros(kmax + 1)
    for k in range(0, kmax + 1, 2):
        j = k // 2
        out[k] = math.comb(2 * j, j) / (j + 1) * variance ** j
    return out


def free_cumulants(moments: np.ndarray, kmax: int) -> np.ndarray:
    """Free cumulants kappa_1..kappa_kmax from moments m_0..m_kmax (m_0 = 1).

    Uses m_k = sum_s kappa_s sum_{i_1+...+i_s = k-s} m_{i_1} ... m_{i_s}.
    """
    m = np.asarray(moments, dtype=float)
    if m.size < kmax + 1:
        raise ValueError(f"need moments up to order {kmax}")
    # conv[s][j] = coefficient sum over compositions of j into s parts of prod m
    kap = np.zeros(kmax + 1)
    conv = [np.zeros(kmax + 1) for _ in range(kmax + 1)]
    conv[0][0] = 1.0
    for s in range(1, kmax + 1):
        conv[s] = np.convolve(conv[s - 1], m[:kmax + 1])[:kmax + 1]
    for k in range(1, kmax + 1):
        rest = sum(kap[s] * conv[s][k - s] for s in range(1, k))
        kap[k] = m[k] - rest  # conv[k][0] = m_0^k = 1
    return kap


def free_moment(w: Word, kappas) -> float:
    """tau(w) for a free family with single-variable free cumulants ``kappas[i]``."""
    kap = tuple(tuple(float(x) for x in k) for k in kappas)
    return _free_moment(tuple(w), kap)


@lru_cache(maxsize=None)
def _free_moment(w: tuple, kap: tuple) -> float:
    if not w:
        return 1.0
    letter = w[0]
    L = len(w)
    total = 0.0
    # enumerate blocks containing position 0 with constant letter; gaps are independent
    positions = [i for i in range(1, L) if w[i] == letter]

    def rec(last: int, size: int, idx: int, acc: float):
        nonlocal total
        # close the block here: remaining tail after `last`
        tail = w[last + 1:]
        total += kap[letter][size] * acc * _free_moment(tail, kap) if size < len(kap[letter]) else 0.0
        for j in range(idx, len(positions)):
            p = positions[j]
            gap = w[last + 1:p]
            g = _free_moment(gap, kap)
            if g != 0.0:
                rec(p, size + 1, j + 1, acc * g)

    rec(0, 1, 0, 1.0)
    return total


def noncrossing_pairings_count(w: Word) -> int:
    """Brute-force count of non-crossing pair partitions with equal letters in pairs."""
    w = tuple(w)
    if not w:
        return 1
    if len(w) % 2:
        return 0
    total = 0
    for j in range(1, len(w), 2):
        if w[j] == w[0]:
            total += noncrossing_pairings_count(w[1:j]) * noncrossing_pairings_count(w[j + 1:])
    return total
