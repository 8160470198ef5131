#!/usr/bin/env python3
"""Finite-n identities of the micro pressure on random two-variable polynomials.

Prints one row per polynomial pair: the dilation, constant-shift and
additivity errors (exact identities) and the convexity and monotonicity
excesses in units of the combined standard error (should be <= 3).
"""
import argparse
import math
import warnings

import numpy as np

from freepressure.chains import MCConfig
from freepressure.duality import symmetrized_monomials
from freepressure.matrixmc import estimate_micro_pressure
from freepressure.ncpoly import NCPolynomial, dilate


def random_poly(rng, basis, scale):
    p = NCPolynomial({}, 2)
    for b, c in zip(basis, rng.normal(scale=scale, size=len(basis))):
        p = p + b * float(c)
    return p


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pairs", type=int, default=20)
    ap.add_argument("--n", type=int, default=3)
    ap.add_argument("--R", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    basis = symmetrized_monomials(2, 4)
    cfg = MCConfig(chains=6, adapt=200, samples=120)
    n, R = args.n, args.R

    def P(h, seed, R=R):
        return estimate_micro_pressure(h, n, R, seed=seed, config=cfg, nvars=2)

    print(f"{'k':>3} {'dilation':>10} {'shift':>10} {'additivity':>10} {'convex/SE':>10} {'monotone/SE':>11}")
    for k in range(args.pairs):
        h1, h2 = random_poly(rng, basis, 0.3), random_poly(rng, basis, 0.3)
        a = float(rng.uniform(0.2, 0.8))
        p1, p2 = P(h1, k), P(h2, k)
        dil = abs(P(dilate(h1, R, 2 * R), k, 2 * R).value - p1.value - 2 * n * n * math.log(2))
        shift = abs(P(h1 + 0.5, k).value - p1.value + 0.5 * n * n)
        moved = NCPolynomial({tuple(i + 2 for i in w): c for w, c in h2.terms.items()}, 4)
        joint = estimate_micro_pressure(h1.with_nvars(4) + moved, n, R, seed=k, config=cfg)
        add = abs(joint.value - p1.value - p2.value)
        pm = P(h1 * a + h2 * (1 - a), k)
        se = math.sqrt(pm.stderr ** 2 + (a * p1.stderr) ** 2 + ((1 - a) * p2.stderr) ** 2)
        conv = (pm.value - a * p1.value - (1 - a) * p2.value) / se
        s = NCPolynomial({w: c for w, c in random_poly(rng, basis, 0.4).terms.items() if len(w) == 1}, 2)
        pu = P(h1 + s * s, k)
        mono = (pu.value - p1.value) / math.hypot(pu.stderr, p1.stderr)
        print(f"{k:>3} {dil:>10.1e} {shift:>10.1e} {add:>10.1e} {conv:>10.2f} {mono:>11.2f}")


if __name__ == "__main__":
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        main()
