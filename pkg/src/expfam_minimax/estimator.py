"""Likelihood-domination traversal of the pruned tree.

At step k the iterate moves from Upsilon_k to the offspring minimising the
H-score at scale delta_k = d / (2^k (C + 1)); ties go to the
lexicographically smallest point. The number of steps is J*, the deepest
level at which the separation/entropy condition still holds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DepthExceeded, DimensionMismatch
from .expfam import ExponentialFamily, FamilyConstants, cumulant_constants
from .geometry import ConstraintSet, lexsort_rows, local_entropy
from .tree import DEFAULT_NODE_CAP, PrunedTree, build_tree

LOG2 = math.log(2.0)

EntropyOracle = Callable[[float, float], float]


@dataclass
class EstimatorConfig:
    """Constants of the estimator.

    ``c`` defaults to 2 (C + 1). ``kappaM`` defaults to the family's computable
    floor. ``jstar_rule`` selects the entropy constant in the J* condition:
    ``"2c"`` (default) or ``"c"`` (the matched-constant variant). The tree
    is built to depth ``steps + 1 + extra_levels``.
    """

    C: float = 3.0
    c: float | None = None
    kappaM: float | None = None
    Jstar_override: int | None = None
    steps: int | None = None
    seed: int = 0
    jstar_rule: str = "2c"
    budget: int | None = None
    node_cap: int = DEFAULT_NODE_CAP
    entropy_probes: int = 8
    extra_levels: int = 1
    verify_tree: bool = True
    verify_parents: int | None = None
    tie_break: str = field(default="lexicographic", init=False)

    def __post_init__(self):
        if not self.C > 2:
            raise ValueError(f"C must exceed 2, got {self.C}")
        if self.c is None:
            self.c = 2.0 * (self.C + 1.0)
        if self.jstar_rule not in ("2c", "c"):
            raise ValueError("jstar_rule must be '2c' or 'c'")

    def kappa(self, constants: FamilyConstants) -> float:
        return constants.kappaM if self.kappaM is None else float(self.kappaM)


def _check_pair(theta_a, theta_b, y=None):
    theta_a = np.atleast_1d(np.asarray(theta_a, dtype=float))
    theta_b = np.atleast_1d(np.asarray(theta_b, dtype=float))
    if theta_a.shape != theta_b.shape:
        raise DimensionMismatch(f"shapes differ: {theta_a.shape} vs {theta_b.shape}")
    if y is not None and np.shape(y) != theta_a.shape:
        raise DimensionMismatch(f"len(y)={np.shape(y)} but len(theta)={theta_a.shape}")
    return theta_a, theta_b


def domination_statistic(family: ExponentialFamily, y, theta_a, theta_b) -> float:
    """sum_i (a_i - b_i) T(y_i) + A(b_i) - A(a_i); b dominates a when this is <= 0."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    theta_a, theta_b = _check_pair(theta_a, theta_b, y)
    family.check_box(theta_a)
    family.check_box(theta_b)
    return float(np.sum((theta_a - theta_b) * family.T(y) + family.A(theta_b) - family.A(theta_a)))


def dominates(family: ExponentialFamily, y, theta_a, theta_b) -> bool:
    """True iff ``theta_b`` dominates ``theta_a`` on data ``y``."""
    return domination_statistic(family, y, theta_a, theta_b) <= 0.0


def h_score(family: ExponentialFamily, y, delta: float, theta_a, S, C: float) -> float:
    """Distance from ``theta_a`` to its farthest dominator in ``S`` lying at least C delta away.

    Zero when no member of ``S`` that far dominates ``theta_a``.
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    theta_a = np.asarray(theta_a, dtype=float)
    best = 0.0
    for theta_b in S:
        dist = float(np.linalg.norm(theta_a - theta_b))
        if dist >= C * delta and dist > best and dominates(family, y, theta_a, theta_b):
            best = dist
    return best


def _h_scores(loglik: np.ndarray, dist: np.ndarray, threshold: float) -> np.ndarray:
    # H[a] = max_b dist[a, b] over b with loglik[b] >= loglik[a] and dist[a, b] >= threshold
    ok = (loglik[None, :] >= loglik[:, None]) & (dist >= threshold)
    return np.where(ok, dist, 0.0).max(axis=1)


def epsilon_J(d: float, C: float, J: int) -> float:
    return d / (2 ** (J - 1) * (C + 1.0))


def compute_J_star(d: float, C: float, kappaM: float, entropy_oracle: EntropyOracle,
                   rule: str = "2c", c: float | None = None, max_J: int = 64) -> int:
    """Deepest J with kappa eps_J^2 > max(2 log N^loc(c eps_J, c')^2, log 2); 1 if none.

    ``2 log N^2`` is read as 4 log N. ``c'`` is 2c under the default rule and
    c under ``rule="c"``; c defaults to 2 (C + 1).
    """
    c = 2.0 * (C + 1.0) if c is None else c
    c_arg = 2.0 * c if rule == "2c" else c
    j_star = 1
    for J in range(1, max_J + 1):
        eps = epsilon_J(d, C, J)
        rhs = max(4.0 * entropy_oracle(c * eps, c_arg), LOG2)
        if kappaM * eps * eps > rhs:
            j_star = J
        else:
            break
    return j_star


@dataclass
class TraversalStep:
    level: int
    node: int
    offspring: list[int]
    h_scores: np.ndarray
    chosen: int
    epsilon: float

    @property
    def h_min(self) -> float:
        return float(self.h_scores.min()) if self.h_scores.size else 0.0


@dataclass
class TraversalTrace:
    path: list[TraversalStep]
    epsilons: list[float]
    stopped_at: int
    estimate: np.ndarray
    root: int

    @property
    def node_ids(self) -> list[int]:
        return [self.root] + [s.chosen for s in self.path]

    def to_text(self) -> str:
        lines = ["# step J eps_J chosen_id H_min n_offspring"]
        for k, s in enumerate(self.path, start=1):
            lines.append(f"{k} {s.level} {s.epsilon!r} {s.chosen} {s.h_min!r} {len(s.offspring)}")
        return "\n".join(lines) + "\n"


def _sorted_offspring(tree: PrunedTree, node: int) -> list[int]:
    kids = list(tree.offspring.get(node, []))
    if not kids:
        return kids
    pts = tree.points(kids)
    keys = np.column_stack([pts, np.asarray(kids, dtype=float)])
    return [kids[i] for i in lexsort_rows(keys)]


def traverse(tree: PrunedTree, family: ExponentialFamily, y, cfg: EstimatorConfig,
             steps: int) -> TraversalTrace:
    """Run ``steps`` iterations from the root; the estimate is the final iterate."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if tree.depth < steps + 1:
        raise DepthExceeded(f"tree has {tree.depth} levels, traversal needs {steps + 1}")
    y = np.asarray(y, dtype=float)
    if y.shape != (tree.coords.shape[1],):
        raise DimensionMismatch(f"len(y)={y.shape} but the tree lives in R^{tree.coords.shape[1]}")
    t_y = family.T(y)
    cache: dict[int, float] = {}

    def loglik(nodes):
        missing = [u for u in nodes if u not in cache]
        if missing:
            pts = tree.points(missing)
            vals = (pts * t_y).sum(axis=1) - family.A(pts).sum(axis=1)
            cache.update(zip(missing, vals.tolist()))
        return np.array([cache[u] for u in nodes])

    node = tree.root
    path, epsilons = [], []
    for k in range(1, steps + 1):
        kids = _sorted_offspring(tree, node)
        if not kids:
            raise DepthExceeded(f"node {node} at level {k} has no offspring")
        delta = tree.d / (2**k * (cfg.C + 1.0))
        pts = tree.points(kids)
        h = _h_scores(loglik(kids), cdist(pts, pts), cfg.C * delta)
        chosen = kids[int(np.argmin(h))]
        path.append(TraversalStep(k + 1, node, kids, h, chosen, delta))
        epsilons.append(delta)
        node = chosen
    return TraversalTrace(path, epsilons, steps, tree.point(node).copy(), tree.root)


# --------------------------------------------------------------------------
# end to end


def estimated_entropy_oracle(cset: ConstraintSet, probes: int = 8, budget=None,
                             seed=None) -> EntropyOracle:
    """Cached local-entropy lower bounds, made nonincreasing in eps per c."""
    cache: dict[tuple[float, float], float] = {}

    def oracle(eps: float, c: float) -> float:
        key = (float(eps), float(c))
        if key not in cache:
            cache[key] = local_entropy(cset, eps, c, probes, budget, seed).log_N
        # running max over larger radii already evaluated at this c
        return max(v for (e, cc), v in cache.items() if cc == key[1] and e >= key[0])

    return oracle


@dataclass
class EstimatorPlan:
    """Data-independent part of the estimator: constants, J*, and the tree."""

    cset: ConstraintSet
    family: ExponentialFamily
    cfg: EstimatorConfig
    constants: FamilyConstants
    kappaM: float
    J_star: int
    steps: int
    tree: PrunedTree
    entropy_source: str

    def run(self, y) -> TraversalTrace:
        return traverse(self.tree, self.family, y, self.cfg, self.steps)


def prepare(cset: ConstraintSet, family: ExponentialFamily, cfg: EstimatorConfig,
            entropy_oracle: EntropyOracle | None = None, budget=None, seed=None,
            tree_oracle: EntropyOracle | None = None) -> EstimatorPlan:
    """Compute constants and J*, then build a tree deep enough for the traversal.

    Without ``entropy_oracle`` the J* rule consumes local-entropy lower bounds,
    which can only deepen J*.
    """
    budget = cfg.budget if budget is None else budget
    seed = cfg.seed if seed is None else seed
    constants = cumulant_constants(family)
    kappa = cfg.kappa(constants)
    source = "analytic"
    if entropy_oracle is None:
        entropy_oracle = estimated_entropy_oracle(cset, cfg.entropy_probes, budget, seed)
        source = "estimated-lower-bound"
    d = cset.diameter
    if d == 0:
        j_star = 1
    elif cfg.Jstar_override is not None:
        j_star = int(cfg.Jstar_override)
    else:
        j_star = compute_J_star(d, cfg.C, kappa, entropy_oracle, cfg.jstar_rule, cfg.c)
    steps = max(j_star, 1) if cfg.steps is None else int(cfg.steps)
    if steps < j_star:
        raise ValueError(f"steps={steps} is below J*={j_star}")
    jmax = steps + 1 + cfg.extra_levels
    tree = build_tree(cset, None, cfg.c, jmax, budget, seed,
                      entropy_oracle=tree_oracle, node_cap=cfg.node_cap,
                      verify=cfg.verify_tree, verify_parents=cfg.verify_parents)
    return EstimatorPlan(cset, family, cfg, constants, kappa, j_star, steps, tree, source)


def estimate(cset: ConstraintSet, family: ExponentialFamily, y, cfg: EstimatorConfig | None = None,
             budget=None, seed=None, entropy_oracle: EntropyOracle | None = None):
    """End-to-end estimator. Returns ``(theta_hat, trace, tree)``."""
    cfg = cfg or EstimatorConfig()
    y = np.asarray(y, dtype=float)
    if y.shape != (cset.n,):
        raise DimensionMismatch(f"len(y)={y.shape} but the set lives in R^{cset.n}")
    plan = prepare(cset, family, cfg, entropy_oracle, budget, seed)
    trace = plan.run(y)
    return trace.estimate, trace, plan.tree
