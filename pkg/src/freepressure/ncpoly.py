"""Noncommutative *-polynomials in selfadjoint indeterminates.

Words are tuples of 0-based letter indices, so ``(0, 1, 0)`` is ``X1 X2 X1``
and ``()`` is the identity word.  Coefficients are complex doubles.  The text
format prints letters 1-based, one term per line::

    (0.5+0j) * X1.X1
    1j * X1.X2
    -1j * X2.X1

Matrix arguments are arrays of shape ``(..., N, n, n)``; every evaluation
routine broadcasts over the leading batch axes.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

Word = tuple

SA_TOL = 1e-12


def word_key(w: Word) -> tuple:
    """Total order on words: length first, then lexicographic."""
    return (len(w), tuple(w))


def word_str(w: Word) -> str:
    if not w:
        return "1"
    return ".".join(f"X{i + 1}" for i in w)


def parse_word(s: str) -> Word:
    s = s.strip()
    if s == "1":
        return ()
    letters = []
    for tok in s.split("."):
        tok = tok.strip()
        if not tok.startswith("X"):
            raise ValueError(f"bad letter {tok!r} in word {s!r}")
        idx = int(tok[1:])
        if idx < 1:
            raise ValueError(f"letter index must be >= 1, got {tok!r}")
        letters.append(idx - 1)
    return tuple(letters)


def words_up_to(nvars: int, degree: int, include_empty: bool = False) -> list:
    out = [()] if include_empty else []
    for k in range(1, degree + 1):
        out.extend(itertools.product(range(nvars), repeat=k))
    return out


def _fmt_coef(c: complex) -> str:
    c = complex(c)
    if c.imag == 0.0:
        return repr(c.real)
    return repr(c)


def _clean(terms: Mapping, tol: float = 0.0) -> dict:
    return {w: complex(c) for w, c in terms.items() if abs(c) > tol}


class NCPolynomial:
    """Element of C<X_1, ..., X_N> with X_i* = X_i."""

    __slots__ = ("terms", "nvars")

    def __init__(self, terms: Mapping | None = None, nvars: int | None = None):
        terms = _clean(terms or {})
        maxidx = max((max(w) for w in terms if w), default=-1)
        if nvars is None:
            nvars = max(maxidx + 1, 1)
        if maxidx >= nvars:
            raise ValueError(f"letter X{maxidx + 1} out of range for nvars={nvars}")
        if any(i < 0 for w in terms for i in w):
            raise ValueError("negative letter index")
        self.terms = {tuple(w): c for w, c in sorted(terms.items(), key=lambda t: word_key(t[0]))}
        self.nvars = int(nvars)

    # -- constructors -----------------------------------------------------
    @classmethod
    def var(cls, i: int, nvars: int | None = None) -> "NCPolynomial":
        """The indeterminate X_{i+1} (``i`` is 0-based)."""
        return cls({(i,): 1.0}, nvars if nvars is not None else i + 1)

    @classmethod
    def const(cls, c: complex, nvars: int = 1) -> "NCPolynomial":
        return cls({(): c}, nvars)

    @classmethod
    def univariate(cls, coeffs: Sequence[float], var: int = 0, nvars: int | None = None) -> "NCPolynomial":
        """sum_k coeffs[k] X^k in a single letter."""
        terms = {(var,) * k: c for k, c in enumerate(coeffs)}
        return cls(terms, nvars if nvars is not None else var + 1)

    # -- algebra ----------------------------------------------------------
    def with_nvars(self, nvars: int) -> "NCPolynomial":
        return NCPolynomial(self.terms, nvars)

    def _coerce(self, other) -> "NCPolynomial":
        if isinstance(other, NCPolynomial):
            return other
        if np.isscalar(other):
            return NCPolynomial.const(other, self.nvars)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms = dict(self.terms)
        for w, c in other.terms.items():
            terms[w] = terms.get(w, 0) + c
        return NCPolynomial(terms, max(self.nvars, other.nvars))

    __radd__ = __add__

    def __neg__(self):
        return NCPolynomial({w: -c for w, c in self.terms.items()}, self.nvars)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if np.isscalar(other):
            return NCPolynomial({w: c * other for w, c in self.terms.items()}, self.nvars)
        if not isinstance(other, NCPolynomial):
            return NotImplemented
        terms: dict = {}
        for w1, c1 in self.terms.items():
            for w2, c2 in other.terms.items():
                w = w1 + w2
                terms[w] = terms.get(w, 0) + c1 * c2
        return NCPolynomial(terms, max(self.nvars, other.nvars))

    def __rmul__(self, other):
        if np.isscalar(other):
            return self * other
        return NotImplemented

    def __pow__(self, k: int):
        out = NCPolynomial.const(1.0, self.nvars)
        for _ in range(k):
            out = out * self
        return out

    def __eq__(self, other):
        if not isinstance(other, NCPolynomial):
            return NotImplemented
        return self.nvars == other.nvars and self.terms == other.terms

    def __hash__(self):
        return hash((self.nvars, tuple(self.terms.items())))

    def allclose(self, other: "NCPolynomial", tol: float = SA_TOL) -> bool:
        d = self - other
        return all(abs(c) <= tol for c in d.terms.values())

    # -- structure --------------------------------------------------------
    @property
    def degree(self) -> int:
        return max((len(w) for w in self.terms), default=0)

    @property
    def constant(self) -> complex:
        return self.terms.get((), 0.0)

    def without_constant(self) -> "NCPolynomial":
        return NCPolynomial({w: c for w, c in self.terms.items() if w}, self.nvars)

    def variables(self) -> set:
        return {i for w in self.terms for i in w}

    def is_zero(self) -> bool:
        return not self.terms

    def is_selfadjoint(self, tol: float = SA_TOL) -> bool:
        return self.allclose(adjoint(self), tol)

    def coefficient_bound(self, R: float) -> float:
        """sum_w |c_w| R^{|w|}, an upper bound for the norm ||p||_R."""
        return float(sum(abs(c) * R ** len(w) for w, c in self.terms.items()))

    def real_coefficients(self) -> np.ndarray:
        """Coefficient vector of a univariate polynomial, lowest degree first."""
        if len(self.variables()) > 1:
            raise ValueError("polynomial is not univariate")
        out = np.zeros(self.degree + 1)
        for w, c in self.terms.items():
            out[len(w)] += c.real
        return out

    def relabel(self, mapping: Mapping[int, int], nvars: int) -> "NCPolynomial":
        return NCPolynomial({tuple(mapping[i] for i in w): c for w, c in self.terms.items()}, nvars)

    # -- evaluation -------------------------------------------------------
    def evaluate(self, mats) -> np.ndarray:
        return evaluate(self, mats)

    def trace_eval(self, mats):
        return trace_eval(self, mats)

    # -- text -------------------------------------------------------------
    def to_text(self) -> str:
        lines = [f"# nvars={self.nvars}"]
        lines += [f"{_fmt_coef(c)} * {word_str(w)}" for w, c in self.terms.items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, nvars: int | None = None) -> "NCPolynomial":
        terms: dict = {}
        for raw in text.replace(";", "\n").splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "nvars=" in line and nvars is None:
                    nvars = int(line.split("nvars=")[1].split()[0])
                continue
            for term in _split_terms(line):
                coef, sep, word = term.rpartition("*")
                if not sep:
                    raise ValueError(f"term {term!r} is not of the form 'coef * word'")
                w = parse_word(word)
                terms[w] = terms.get(w, 0) + complex(coef.strip().replace(" ", ""))
        return cls(terms, nvars)

    def __repr__(self):
        if not self.terms:
            return "NCPolynomial(0)"
        body = " + ".join(f"{_fmt_coef(c)}*{word_str(w)}" for w, c in self.terms.items())
        return f"NCPolynomial({body}; N={self.nvars})"


def _split_terms(line: str) -> list:
    """Split on ' + ' outside parentheses, so '(1+2j) * X1' stays whole."""
    parts, depth, start = [], 0, 0
    for i, ch in enumerate(line):
        depth += (ch == "(") - (ch == ")")
        if ch == "+" and depth == 0 and line[i - 1:i] == " " and line[i + 1:i + 2] == " ":
            parts.append(line[start:i])
            start = i + 1
    parts.append(line[start:])
    return [p.strip() for p in parts if p.strip()]


def X(i: int, nvars: int | None = None) -> NCPolynomial:
    """1-based shorthand: ``X(1)`` is the first indeterminate."""
    return NCPolynomial.var(i - 1, nvars)


def adjoint(p: NCPolynomial) -> NCPolynomial:
    return NCPolynomial({tuple(reversed(w)): np.conj(c) for w, c in p.terms.items()}, p.nvars)


def selfadjoint_part(p: NCPolynomial) -> NCPolynomial:
    return (p + adjoint(p)) * 0.5


# -- matrix functional calculus ---------------------------------------------

def _as_stack(mats) -> np.ndarray:
    if isinstance(mats, MatrixTuple):
        return mats.mats
    arr = np.asarray(mats)
    if arr.ndim < 3:
        raise ValueError("expected matrices of shape (..., N, n, n)")
    if arr.shape[-1] != arr.shape[-2]:
        raise ValueError(f"matrices are not square: {arr.shape[-2:]}")
    return arr


def word_products(words: Iterable[Word], mats) -> dict:
    """Products A_{i1}...A_{ik} for every requested word, sharing prefixes."""
    A = _as_stack(mats)
    n = A.shape[-1]
    eye = np.broadcast_to(np.eye(n, dtype=A.dtype), A.shape[:-3] + (n, n))
    cache: dict = {(): eye}

    def get(w):
        if w in cache:
            return cache[w]
        val = get(w[:-1]) @ A[..., w[-1], :, :]
        cache[w] = val
        return val

    return {w: get(tuple(w)) for w in words}


def _check_nvars(p, A):
    N = A.shape[-3]
    needed = max((max(w) for w in _all_words(p) if w), default=-1) + 1
    if needed > N:
        raise ValueError(f"polynomial uses {needed} letters but tuple has N={N}")


def _all_words(p):
    if isinstance(p, TensorPolynomial):
        return [w for pair in p.terms for w in pair]
    return list(p.terms)


def evaluate(p: NCPolynomial, mats) -> np.ndarray:
    """p(A_1, ..., A_N) for a (batch of) matrix tuple(s)."""
    A = _as_stack(mats)
    _check_nvars(p, A)
    prods = word_products(p.terms, A)
    n = A.shape[-1]
    out = np.zeros(A.shape[:-3] + (n, n), dtype=complex)
    for w, c in p.terms.items():
        out = out + c * prods[w]
    return out


def word_traces(words: Iterable[Word], mats) -> dict:
    """Normalized traces tr_n(w(A)) for each word."""
    words = list(words)
    A = _as_stack(mats)
    n = A.shape[-1]
    # last letter is folded into the trace to save one product
    prefixes = {w[:-1] for w in words if w}
    prods = word_products(prefixes, A)
    out = {}
    for w in words:
        if not w:
            out[w] = np.ones(A.shape[:-3], dtype=complex)
            continue
        P = prods[w[:-1]]
        B = A[..., w[-1], :, :]
        out[w] = np.einsum("...ij,...ji->...", P, B) / n
    return out


def trace_eval(p: NCPolynomial, mats):
    """tr_n(p(A)) with tr_n = Trace / n.  Real part is exact for selfadjoint p."""
    A = _as_stack(mats)
    _check_nvars(p, A)
    tr = word_traces(p.terms, A)
    total = sum((c * tr[w] for w, c in p.terms.items()), np.zeros(A.shape[:-3], dtype=complex))
    return total


# -- transformations ----------------------------------------------------------

def substitute(p: NCPolynomial, images: Sequence[NCPolynomial], nvars: int | None = None) -> NCPolynomial:
    """Replace X_i by images[i] everywhere and expand."""
    if len(images) < p.nvars:
        raise ValueError("need one image per indeterminate")
    nv = nvars if nvars is not None else max([q.nvars for q in images] + [1])
    one = NCPolynomial.const(1.0, nv)
    cache: dict = {(): one}

    def prod(w):
        if w not in cache:
            cache[w] = prod(w[:-1]) * images[w[-1]].with_nvars(nv)
        return cache[w]

    out = NCPolynomial({}, nv)
    for w, c in p.terms.items():
        out = out + prod(w) * c
    return out


def dilate(p: NCPolynomial, R: float, R1: float) -> NCPolynomial:
    """p((R/R1) X_1, ..., (R/R1) X_N): the isomorphism A_R -> A_{R1}."""
    s = R / R1
    return NCPolynomial({w: c * s ** len(w) for w, c in p.terms.items()}, p.nvars)


def linear_change(p: NCPolynomial, A, beta=None) -> NCPolynomial:
    """Substitute X_i -> sum_j A[i, j] X_j + beta[i]."""
    A = np.asarray(A, dtype=float)
    N = A.shape[0]
    if A.shape != (N, N):
        raise ValueError("A must be square")
    if N < p.nvars:
        raise ValueError(f"A is {N}x{N} but p has {p.nvars} indeterminates")
    beta = np.zeros(N) if beta is None else np.asarray(beta, dtype=float)
    images = []
    for i in range(N):
        terms = {(j,): A[i, j] for j in range(N)}
        terms[()] = beta[i]
        images.append(NCPolynomial(terms, N))
    return substitute(p, images, N)


def triangular_change(p: NCPolynomial, shifts: Sequence[NCPolynomial | None]) -> NCPolynomial:
    """Substitute X_1 -> X_1 and X_i -> X_i + q_i(X_1, ..., X_{i-1}).

    ``shifts[i]`` is q for the 0-based letter i; ``shifts[0]`` must be None
    or zero.
    """
    N = max(p.nvars, len(shifts))
    images = []
    for i in range(N):
        q = shifts[i] if i < len(shifts) else None
        img = NCPolynomial.var(i, N)
        if q is not None and not q.is_zero():
            bad = [j for j in q.variables() if j >= i]
            if bad:
                raise ValueError(
                    f"shift for X{i + 1} uses X{bad[0] + 1}; only X1..X{i} are allowed")
            img = img + q.with_nvars(N)
        images.append(img)
    return substitute(p, images, N)


def cyclic_reduce(p: NCPolynomial, tol: float = 1e-14) -> NCPolynomial:
    """Representative with the same trace: each word replaced by its least rotation.

    tr_n(w(A)) is invariant under cyclic rotation of w, so the result has the
    same normalized trace on every matrix tuple; commutators cancel.
    """
    terms: dict = {}
    for w, c in p.terms.items():
        rep = min((w[k:] + w[:k] for k in range(len(w))), default=w)
        terms[rep] = terms.get(rep, 0) + c
    return NCPolynomial({w: c for w, c in terms.items() if abs(c) > tol}, p.nvars)


def transform(p: NCPolynomial, kind: str, **kw) -> NCPolynomial:
    if kind == "dilate":
        return dilate(p, kw["R"], kw["R1"])
    if kind == "linear":
        return linear_change(p, kw["A"], kw.get("beta"))
    if kind == "triangular":
        return triangular_change(p, kw["shifts"])
    raise ValueError(f"unknown transform {kind!r}")


# -- tensor polynomials ---------------------------------------------------------

class TensorPolynomial:
    """Element of C<X> (x) C<X>, stored as {(w1, w2): coefficient}."""

    __slots__ = ("terms", "nvars")

    def __init__(self, terms: Mapping | None = None, nvars: int = 1):
        terms = _clean(terms or {})
        self.terms = {(tuple(a), tuple(b)): c for (a, b), c in
                      sorted(terms.items(), key=lambda t: (word_key(t[0][0]), word_key(t[0][1])))}
        self.nvars = nvars

    @classmethod
    def tensor(cls, p: NCPolynomial, q: NCPolynomial) -> "TensorPolynomial":
        terms: dict = {}
        for w1, c1 in p.terms.items():
            for w2, c2 in q.terms.items():
                terms[(w1, w2)] = terms.get((w1, w2), 0) + c1 * c2
        return cls(terms, max(p.nvars, q.nvars))

    def __add__(self, other: "TensorPolynomial") -> "TensorPolynomial":
        terms = dict(self.terms)
        for k, c in other.terms.items():
            terms[k] = terms.get(k, 0) + c
        return TensorPolynomial(terms, max(self.nvars, other.nvars))

    def __mul__(self, s):
        return TensorPolynomial({k: c * s for k, c in self.terms.items()}, self.nvars)

    __rmul__ = __mul__

    def adjoint(self) -> "TensorPolynomial":
        return TensorPolynomial(
            {(tuple(reversed(a)), tuple(reversed(b))): np.conj(c) for (a, b), c in self.terms.items()},
            self.nvars)

    def is_selfadjoint(self, tol: float = SA_TOL) -> bool:
        adj = self.adjoint().terms
        keys = set(adj) | set(self.terms)
        return all(abs(self.terms.get(k, 0) - adj.get(k, 0)) <= tol for k in keys)

    def variables(self) -> set:
        return {i for pair in self.terms for w in pair for i in w}

    @property
    def degree(self) -> int:
        return max((max(len(a), len(b)) for a, b in self.terms), default=0)

    def without_constant(self) -> "TensorPolynomial":
        return TensorPolynomial({k: c for k, c in self.terms.items() if k != ((), ())}, self.nvars)

    @property
    def constant(self) -> complex:
        return self.terms.get(((), ()), 0.0)

    def trace_eval(self, mats):
        return tensor_trace_eval(self, mats)

    def __repr__(self):
        body = " + ".join(f"{_fmt_coef(c)}*{word_str(a)}(x){word_str(b)}" for (a, b), c in self.terms.items())
        return f"TensorPolynomial({body or 0}; N={self.nvars})"


def tensor_trace_eval(q: TensorPolynomial, mats):
    """(tr_n (x) tr_n)(q(A)) = sum c tr_n(w1(A)) tr_n(w2(A))."""
    A = _as_stack(mats)
    _check_nvars(q, A)
    words = {w for pair in q.terms for w in pair}
    tr = word_traces(words, A)
    total = np.zeros(A.shape[:-3], dtype=complex)
    for (a, b), c in q.terms.items():
        total = total + c * tr[a] * tr[b]
    return total


# -- matrix tuples --------------------------------------------------------------

@dataclass
class MatrixTuple:
    """N Hermitian n x n matrices with operator norm at most R."""

    mats: np.ndarray
    R: float = np.inf
    tol: float = field(default=1e-9, repr=False)

    def __post_init__(self):
        self.mats = np.asarray(self.mats, dtype=complex)
        if self.mats.ndim != 3 or self.mats.shape[1] != self.mats.shape[2]:
            raise ValueError(f"expected shape (N, n, n), got {self.mats.shape}")
        herm = np.abs(self.mats - np.conj(np.swapaxes(self.mats, -1, -2))).max()
        if herm > self.tol:
            raise ValueError(f"matrices are not Hermitian (deviation {herm:.2e})")
        if np.isfinite(self.R):
            norms = np.abs(np.linalg.eigvalsh(self.mats)).max(axis=-1)
            if norms.max() > self.R + self.tol:
                raise ValueError(f"operator norm {norms.max():.6g} exceeds R={self.R}")

    @property
    def N(self) -> int:
        return self.mats.shape[0]

    @property
    def n(self) -> int:
        return self.mats.shape[-1]


def pauli() -> tuple:
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]], dtype=complex)
    sz = np.array([[1, 0], [0, -1]], dtype=complex)
    return sx, sy, sz


# -- norm estimation --------------------------------------------------------------

@dataclass
class SupNormConfig:
    restarts: int = 24
    steps: int = 60
    dims: tuple = (2, 3, 4, 5, 6, 7, 8)
    lr: float = 0.2
    seed: int = 0
    grid: int = 100_000


@dataclass
class SupNormEstimate:
    value: float
    upper_bound: float
    exact: bool
    witness: np.ndarray | None = None


def _clip_ball(A: np.ndarray, R: float) -> np.ndarray:
    A = 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))
    lam, V = np.linalg.eigh(A)
    lam = np.clip(lam, -R, R)
    return (V * lam[..., None, :]) @ np.conj(np.swapaxes(V, -1, -2))


def _norm_and_grad(p: NCPolynomial, A: np.ndarray):
    """Largest singular value of p(A) and its gradient w.r.t. each A_i."""
    P = evaluate(p, A)
    U, s, Vh = np.linalg.svd(P)
    u = U[:, 0]
    v = np.conj(Vh[0])
    n = A.shape[-1]
    prods = word_products({w[:k] for w in p.terms for k in range(len(w) + 1)}, A)
    suffix_cache: dict = {}

    def suffix(w):
        if w not in suffix_cache:
            suffix_cache[w] = np.eye(n, dtype=complex) if not w else A[w[0]] @ suffix(w[1:])
        return suffix_cache[w]

    grad = np.zeros_like(A)
    outer = np.outer(v, np.conj(u))
    for w, c in p.terms.items():
        for k, letter in enumerate(w):
            pre = prods[w[:k]]
            suf = suffix(w[k + 1:])
            G = c * (suf @ outer @ pre)
            grad[letter] += np.conj(G.T)
    grad = 0.5 * (grad + np.conj(np.swapaxes(grad, -1, -2)))
    return s[0], grad


def sup_norm(p: NCPolynomial, R: float, budget: SupNormConfig | None = None) -> SupNormEstimate:
    """Estimate ||p||_R.

    For one indeterminate the sup over the spectrum is the sup of |p(t)| on
    [-R, R]; a dense grid plus bounded refinement makes it exact to grid
    tolerance.  For two or more the result is the best value found by
    randomized projected ascent over small matrix dimensions, i.e. a lower
    bound; ``upper_bound`` carries sum |c_w| R^{|w|}.
    """
    if R <= 0:
        raise ValueError("R must be positive")
    budget = budget or SupNormConfig()
    ub = p.coefficient_bound(R)
    if p.is_zero():
        return SupNormEstimate(0.0, 0.0, True)
    vars_used = sorted(p.variables())
    if len(vars_used) <= 1:
        from scipy.optimize import minimize_scalar

        coeffs = np.zeros(p.degree + 1, dtype=complex)
        for w, c in p.terms.items():
            coeffs[len(w)] += c
        f = np.polynomial.Polynomial(coeffs)
        t = np.linspace(-R, R, budget.grid)
        vals = np.abs(f(t))
        best = float(vals.max())
        wit = t[vals.argmax()]
        h = t[1] - t[0]
        for i in np.argsort(vals)[-5:]:
            lo, hi = max(-R, t[i] - h), min(R, t[i] + h)
            res = minimize_scalar(lambda x: -abs(f(x)), bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-13})
            if -res.fun > best:
                best, wit = float(-res.fun), res.x
        return SupNormEstimate(min(best, ub), ub, True, np.array([wit]))

    N = p.nvars
    best = 0.0
    witness = None
    # commuting scalar corners first: cheap and often optimal
    for signs in itertools.product((-R, R), repeat=len(vars_used)):
        A = np.zeros((N, 1, 1), dtype=complex)
        for j, s in zip(vars_used, signs):
            A[j, 0, 0] = s
        val = float(np.abs(evaluate(p, A)[0, 0]))
        if val > best:
            best, witness = val, A
    for r in range(budget.restarts):
        rng = np.random.default_rng([budget.seed, r])
        n = budget.dims[r % len(budget.dims)]
        G = rng.standard_normal((N, n, n)) + 1j * rng.standard_normal((N, n, n))
        A = _clip_ball(G, R)
        A = A * (R / np.maximum(np.abs(np.linalg.eigvalsh(A)).max(axis=-1), 1e-12))[:, None, None]
        lr = budget.lr * R
        val, g = _norm_and_grad(p, A)
        for _ in range(budget.steps):
            gn = np.sqrt(np.sum(np.abs(g) ** 2)) + 1e-300
            B = _clip_ball(A + lr * g / gn, R)
            vb, gb = _norm_and_grad(p, B)
            if vb >= val:
                A, val, g = B, vb, gb
                lr *= 1.2
            else:
                lr *= 0.5
                if lr < 1e-10 * R:
                    break
        if val > best:
            best, witness = float(val), A
    return SupNormEstimate(min(best, ub), ub, False, witness)
