"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest -s tests/test_acceptance.py`` to see the lines, or as a
script with ``python3 tests/test_acceptance.py``. Tolerances are fixed here
and are not tuned per run.
"""

import functools
import math
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.spatial.distance import cdist
from scipy.stats import binom

from conftest import brute_force_max_packing
from expfam_minimax.bounds import monotone_entropy, segment_entropy, volumetric_entropy
from expfam_minimax.estimator import compute_J_star, dominates, h_score
from expfam_minimax.expfam import (
    bernoulli,
    cumulant_constants,
    gaussian_unit_variance,
    kl_divergence,
    mgf_bound_check,
)
from expfam_minimax.geometry import (
    MonotoneLatticeSet,
    cloud_set,
    epsilon_star,
    greedy_maximal_packing,
    segment_set,
    verify_packing,
)
from expfam_minimax.harness.config import ExperimentSpec
from expfam_minimax.harness.experiment import run_experiment
from expfam_minimax.tree import build_tree, dump_tree

KL_TOL = 1e-9
GAUSS_TOL = 1e-12
SE_MULT = 3.0
EXPONENT_TOL = 0.02
Q2_WINDOW = (0.5, 0.65)
MC_WINDOW = (0.13, 0.53)

OUT = Path(tempfile.mkdtemp(prefix="expfam-acceptance-"))


def report(k, ok, detail, elapsed, limit):
    within = elapsed < limit
    verdict = "PASS" if ok and within else "FAIL"
    print(f"{verdict} criterion {k}: {detail} ({elapsed:.1f}s, limit {limit:g}s)")
    return ok and within


def timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


# 1 ----------------------------------------------------------------------


def criterion_1():
    rng = np.random.default_rng(1)
    worst = -math.inf
    for M in (0.5, 1.0, 2.0):
        fam = bernoulli(M)
        k = cumulant_constants(fam)
        for _ in range(10_000):
            n = int(rng.integers(1, 17))
            a, b = rng.uniform(-M, M, n), rng.uniform(-M, M, n)
            kl, sq = kl_divergence(fam, a, b), float(np.sum((a - b) ** 2))
            worst = max(worst, k.cM * sq - kl, kl - k.CM * sq)
    g = gaussian_unit_variance(3.0)
    gauss = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 17))
        a, b = rng.uniform(-3, 3, n), rng.uniform(-3, 3, n)
        gauss = max(gauss, abs(kl_divergence(g, a, b) - 0.5 * float(np.sum((a - b) ** 2))))
    ok = worst <= KL_TOL and gauss <= GAUSS_TOL
    return ok, f"KL sandwich worst excess {worst:.3g}, Gaussian error {gauss:.3g}"


# 2 ----------------------------------------------------------------------


def criterion_2():
    fam = bernoulli(1.0)
    lams = np.linspace(-1.0, 1.0, 21)
    bad = []
    for theta in (-1.0, 0.0, 0.7):
        rep = mgf_bound_check(fam, theta, lams, 1_000_000, seed=2)
        bad += rep.violations
    return not bad, f"{len(bad)} violations over 21 lambdas at theta in (-1, 0, 0.7)"


# 3 ----------------------------------------------------------------------


def criterion_3():
    rng = np.random.default_rng(3)
    invalid, worst_ratio = 0, math.inf
    for _ in range(50):
        m = int(rng.integers(2, 21))
        pts = rng.uniform(-1, 1, (m, 2))
        sep = float(rng.uniform(0.1, 1.2))
        cs = cloud_set(pts)
        res = greedy_maximal_packing(cs, cs.star_center, 10.0, sep)
        ok, _ = verify_packing(res, cs)
        # independent check of validity and maximality
        dd = cdist(res.centers, res.centers)
        valid = np.all(dd[np.triu_indices(len(res), 1)] > sep)
        maximal = np.all(cdist(pts, res.centers).min(axis=1) <= sep)
        invalid += not (ok and valid and maximal)
        worst_ratio = min(worst_ratio, len(res) / brute_force_max_packing(pts, sep))
    return invalid == 0 and worst_ratio >= 0.5, f"{invalid} invalid, worst greedy/optimum {worst_ratio:.3f}"


# 4 ----------------------------------------------------------------------


def independent_tree_checks(tree, cloud):
    d, c = tree.d, tree.c
    for J in range(3, tree.depth + 1):
        pts = tree.points(tree.levels[J - 1])
        dd = cdist(pts, pts)
        if not np.all(dd[np.triu_indices(len(pts), 1)] > d / (2 ** (J - 1) * c)):
            return False
        if cdist(cloud, pts).min(axis=1).max() > d / (2 ** (J - 2) * c):
            return False
    rng = np.random.default_rng(4)
    for _ in range(200):
        node, path = tree.root, [tree.root]
        while tree.offspring.get(node):
            kids = tree.offspring[node]
            node = kids[rng.integers(len(kids))]
            path.append(node)
        pts = tree.points(path)
        for jp in range(len(path)):
            bound = d * (2 + 4 * c) / (c * 2 ** (jp + 1))
            if np.linalg.norm(pts[jp:] - pts[jp], axis=1).max() > bound + 1e-12:
                return False
    return True


def build_criterion_4_trees():
    trees = {}
    seg = segment_set([0.0], [1.0], resolution=1e-3)
    for c in (8.0, 16.0):
        trees[f"segment-c{c:g}"] = (seg, build_tree(seg, None, c, 6, entropy_oracle=segment_entropy(1.0),
                                                    strict=False))
        mono = MonotoneLatticeSet(1, 8, 1.0, cloud_budget=1000, seed=0)
        trees[f"monotone-c{c:g}"] = (mono, build_tree(mono, None, c, 6, entropy_oracle=volumetric_entropy(8),
                                                      strict=False, node_cap=20_000_000))
    return trees


def dump_trees(trees, out):
    out.mkdir(parents=True, exist_ok=True)
    for name, (_, tree) in trees.items():
        dump_tree(tree, out / f"{name}.txt")


@functools.cache
def criterion_4_result():
    trees = build_criterion_4_trees()
    dump_trees(trees, OUT / "c4-first")
    failed = [name for name, (cs, t) in trees.items()
              if not (t.report.ok and independent_tree_checks(t, cs.candidate_cloud()))]
    return not failed, "tree invariants failed for: " + (", ".join(failed) or "none")


def criterion_4():
    return criterion_4_result()


# 5 ----------------------------------------------------------------------


def criterion_5():
    fam = bernoulli(1.0)
    kappa = cumulant_constants(fam).kappaM
    n, C, R = 50, 3.0, 10_000
    rng = np.random.default_rng(5)
    lines, ok = [], True
    for delta in (1.0, 2.0, 3.0):
        u = np.ones(n) / math.sqrt(n)
        theta = np.full(n, 0.3)
        near = theta + delta * u          # distance delta from the truth
        far = near - C * delta * u        # C delta from near, (C - 1) delta from the truth
        ys = fam.sample(np.broadcast_to(theta, (R, n)), rng)
        bad = np.array([dominates(fam, y, near, far) for y in ys])
        rate = bad.mean()
        se = math.sqrt(rate * (1 - rate) / R)
        bound = math.exp(-kappa * delta**2)
        # exact value: the statistic depends on y only through its sum
        s = np.arange(n + 1)
        a, b = near[0], far[0]
        stat = (a - b) * s + n * (fam.A(np.float64(b)) - fam.A(np.float64(a)))
        exact = float(binom.pmf(s, n, 1 / (1 + math.exp(-theta[0])))[stat <= 0].sum())
        ok = ok and bool(rate <= bound + SE_MULT * se)
        lines.append(f"delta={delta:g} rate={rate:.4f} exact={exact:.4f} bound={bound:.4f}")
    return ok, "; ".join(lines)


# 6 ----------------------------------------------------------------------


def criterion_6():
    fam = bernoulli(1.0)
    kappa = cumulant_constants(fam).kappaM
    n, C, delta, R = 64, 3.0, 3.0, 10_000
    half = n // 2
    # two orthogonal replicated directions: K = {(a 1, b 1) : a, b in [-0.8, 0.8]}
    scale = math.sqrt(half)

    def embed(ab):
        ab = np.atleast_2d(ab)
        return np.hstack([np.repeat(ab[:, :1], half, axis=1), np.repeat(ab[:, 1:], half, axis=1)])

    step = 2 * delta / (math.sqrt(2) * scale)
    axis = np.arange(-0.8, 0.8 + step, step)
    axis = np.clip(axis, -0.8, 0.8)
    grid = np.array([(a, b) for a in axis for b in axis])
    S = embed(grid)
    N = len(S)
    # independent check that S is a delta-covering of a fine grid of K
    fine = np.linspace(-0.8, 0.8, 41)
    K = embed(np.array([(a, b) for a in fine for b in fine]))
    cover = cdist(K, S).min(axis=1).max()
    rng = np.random.default_rng(6)
    misses = 0
    for _ in range(R):
        theta = embed(rng.uniform(-0.8, 0.8, 2))[0]
        y = fam.sample(theta, rng)
        scores = [h_score(fam, y, delta, s, S, C) for s in S]
        best = min(range(N), key=lambda i: (scores[i], tuple(S[i]), i))
        misses += np.linalg.norm(S[best] - theta) >= (C + 1) * delta
    rate = misses / R
    se = math.sqrt(rate * (1 - rate) / R)
    bound = N * math.exp(-kappa * delta**2)
    ok = bool(N <= 50 and cover <= delta and rate <= bound + SE_MULT * se)
    return ok, f"N={N} covering radius {cover:.3f} rate={rate:.4f} bound={bound:.3f}"


# 7 ----------------------------------------------------------------------


def criterion_7():
    zero = lambda e, c: 0.0  # noqa: E731
    got = (compute_J_star(1, 1, 1, zero), compute_J_star(1, 1, 100, zero),
           compute_J_star(1, 1, 1, lambda e, c: 1e9))
    return got == (1, 3, 1), f"J* = {got}, expected (1, 3, 1)"


# 8 ----------------------------------------------------------------------


def criterion_8():
    ns = 2.0 ** np.arange(6, 17)
    slopes = {}
    for q in (1, 2, 3, 4):
        r = [epsilon_star(monotone_entropy(q, int(n), 1.0), 1.0, 2 * math.sqrt(n)) ** 2 for n in ns]
        slopes[q] = float(np.polyfit(np.log(ns), np.log(r), 1)[0])
    ok = (abs(slopes[1] - 1 / 3) <= EXPONENT_TOL
          and Q2_WINDOW[0] <= slopes[2] <= Q2_WINDOW[1]
          and abs(slopes[3] - 2 / 3) <= EXPONENT_TOL
          and abs(slopes[4] - 3 / 4) <= EXPONENT_TOL)
    return ok, " ".join(f"q{q}={s:.4f}" for q, s in slopes.items())


# 9 ----------------------------------------------------------------------


def mc_spec():
    return ExperimentSpec(family="bernoulli", M=1.0, set="monotone", q=1, ns=[16, 32, 64, 128, 256],
                          truth="random", replicates=200, seed=0, budget=1000, cloud_seed=0,
                          steps=4, extra_levels=1, node_cap=20_000_000)


@functools.cache
def criterion_9_result():
    spec = mc_spec()
    curve = run_experiment(spec, OUT / "c9-w1", workers=1)
    fit = curve.fit
    below = all(r.mean_sq_err < 4 * spec.M**2 * r.n for r in curve.rows)
    clean = all(r.excluded == 0 for r in curve.rows)
    ok = fit is not None and MC_WINDOW[0] <= fit.slope <= MC_WINDOW[1] and below and clean
    risks = ",".join(f"{r.mean_sq_err:.2f}" for r in curve.rows)
    slope = "none" if fit is None else f"{fit.slope:.3f} [{fit.ci_low:.3f}, {fit.ci_high:.3f}]"
    return ok, f"slope {slope} risks {risks} below 4n: {below}"


def criterion_9():
    return criterion_9_result()


# 10 ---------------------------------------------------------------------


def criterion_10():
    criterion_4_result()
    criterion_9_result()
    dump_trees(build_criterion_4_trees(), OUT / "c4-second")
    same_trees = all((OUT / "c4-first" / p.name).read_bytes() == p.read_bytes()
                     for p in (OUT / "c4-second").iterdir())
    run_experiment(mc_spec(), OUT / "c9-w8", workers=8)
    a, b = OUT / "c9-w1", OUT / "c9-w8"
    same_reps = (a / "replicates.csv").read_bytes() == (b / "replicates.csv").read_bytes()
    # mean_runtime_s is wall-clock; every other risk column must match exactly
    strip = lambda p: [",".join(line.split(",")[:4]) for line in p.read_text().splitlines()]  # noqa: E731
    same_risk = strip(a / "risk.csv") == strip(b / "risk.csv")
    ok = same_trees and same_reps and same_risk
    return ok, f"trees identical: {same_trees}, replicates.csv identical: {same_reps}, risk columns identical: {same_risk}"


CRITERIA = [
    (1, criterion_1, 5),
    (2, criterion_2, 60),
    (3, criterion_3, 30),
    (4, criterion_4, 120),
    (5, criterion_5, 60),
    (6, criterion_6, 120),
    (7, criterion_7, 1),
    (8, criterion_8, 5),
    (9, criterion_9, 1800),
    (10, criterion_10, 1800),
]


@pytest.mark.parametrize("k,fn,limit", CRITERIA, ids=[f"criterion_{k}" for k, _, _ in CRITERIA])
def test_criterion(k, fn, limit):
    (ok, detail), elapsed = timed(fn)
    assert report(k, ok, detail, elapsed, limit), detail


if __name__ == "__main__":
    results = []
    for k, fn, limit in CRITERIA:
        (ok, detail), elapsed = timed(fn)
        results.append(report(k, ok, detail, elapsed, limit))
    raise SystemExit(0 if all(results) else 1)
