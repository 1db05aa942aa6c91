"""Invariant suites behind ``expfam-minimax verify``.

Each suite returns ``(name, ok, detail)``. ``quick`` shrinks sample sizes
for smoke runs; the full sizes match the acceptance suite.
"""

from __future__ import annotations

import math

import numpy as np

from ..bounds import monotone_entropy, segment_entropy, volumetric_entropy
from ..estimator import compute_J_star
from ..expfam import bernoulli, cumulant_constants, gaussian_unit_variance, kl_divergence, mgf_bound_check
from ..geometry import (
    MonotoneLatticeSet,
    cloud_set,
    epsilon_star,
    greedy_maximal_packing,
    segment_set,
    verify_packing,
)
from ..tree import build_tree


def kl_sandwich(trials: int, seed: int):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for M in (0.5, 1.0, 2.0):
        fam = bernoulli(M)
        k = cumulant_constants(fam)
        for _ in range(trials):
            n = int(rng.integers(1, 17))
            a, b = rng.uniform(-M, M, n), rng.uniform(-M, M, n)
            kl, sq = kl_divergence(fam, a, b), float(np.sum((a - b) ** 2))
            worst = max(worst, k.cM * sq - kl, kl - k.CM * sq)
    g = gaussian_unit_variance(1.0)
    a, b = rng.uniform(-1, 1, 16), rng.uniform(-1, 1, 16)
    gauss = abs(kl_divergence(g, a, b) - 0.5 * float(np.sum((a - b) ** 2)))
    return "kl_sandwich", worst <= 1e-9 and gauss <= 1e-12, f"worst_excess={worst:.3g}"


def mgf(samples: int, seed: int):
    rep = mgf_bound_check(bernoulli(1.0), 0.3, np.linspace(-1, 1, 21), samples, seed)
    return "mgf_bound", rep.ok, f"violations={len(rep.violations)}"


def packing(clouds: int, seed: int):
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(clouds):
        pts = rng.uniform(-1, 1, (int(rng.integers(2, 21)), 2))
        cs = cloud_set(pts)
        res = greedy_maximal_packing(cs, cs.star_center, 10.0, 0.5)
        ok, _ = verify_packing(res, cs)
        bad += not ok
    return "packing", bad == 0, f"invalid={bad}"


def trees(budget: int, seed: int):
    failed = []
    seg = segment_set([0.0], [1.0])
    for c in (8.0, 16.0):
        t = build_tree(seg, None, c, 6, seed=seed, entropy_oracle=segment_entropy(1.0), strict=False)
        if not t.report.ok:
            failed.append(f"segment c={c:g}")
    mono = MonotoneLatticeSet(1, 8, 1.0, cloud_budget=budget, seed=seed)
    t = build_tree(mono, None, 8.0, 6, entropy_oracle=volumetric_entropy(8), strict=False,
                   node_cap=20_000_000)
    if not t.report.ok:
        failed.append("monotone c=8")
    return "tree", not failed, "failed=" + (",".join(failed) or "none")


def jstar():
    got = (compute_J_star(1, 1, 1, lambda e, c: 0.0), compute_J_star(1, 1, 100, lambda e, c: 0.0),
           compute_J_star(1, 1, 1, lambda e, c: 1e9))
    return "jstar", got == (1, 3, 1), f"got={got}"


def rate_exponents():
    ns = 2.0 ** np.arange(6, 17)
    slopes = {}
    for q in (1, 2, 3, 4):
        r = [epsilon_star(monotone_entropy(q, int(n), 1.0), 1.0, 2 * math.sqrt(n)) ** 2 for n in ns]
        slopes[q] = float(np.polyfit(np.log(ns), np.log(r), 1)[0])
    ok = (abs(slopes[1] - 1 / 3) <= 0.02 and 0.5 <= slopes[2] <= 0.65
          and abs(slopes[3] - 2 / 3) <= 0.02 and abs(slopes[4] - 0.75) <= 0.02)
    return "rate_exponents", ok, " ".join(f"q{q}={s:.4f}" for q, s in slopes.items())


def run_suites(quick: bool = False, seed: int = 0):
    return [
        kl_sandwich(300 if quick else 3400, seed),
        mgf(20_000 if quick else 1_000_000, seed),
        packing(10 if quick else 50, seed),
        trees(150 if quick else 300, seed),
        jstar(),
        rate_exponents(),
    ]
