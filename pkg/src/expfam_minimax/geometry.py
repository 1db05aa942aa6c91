"""Star-shaped constraint sets and the metric geometry built on them.

A continuous set K is only ever touched through a membership oracle and a
finite *candidate cloud* of points of K. Packings, coverings and local
entropies are all computed relative to that cloud. Clouds are stored in
lexicographic row order, so "first index" and "lexicographically smallest"
coincide everywhere tie-breaking matters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import EmptyIntersection, LatticeSizeError, NotMonotone

DEFAULT_BUDGET = 2000
FULL_MATRIX_LIMIT = 4096


def lexsort_rows(points: np.ndarray) -> np.ndarray:
    """Indices that sort the rows of ``points`` lexicographically (first column most significant)."""
    points = np.atleast_2d(points)
    if points.shape[0] == 0:
        return np.zeros(0, dtype=int)
    return np.lexsort(points.T[::-1])


def canonical_cloud(points) -> np.ndarray:
    """Deduplicate and lexicographically sort a point cloud."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return np.unique(points, axis=0)


class ConstraintSet:
    """Oracle view of a star-shaped set K in R^n.

    Parameters
    ----------
    n : int
        Ambient dimension.
    contains : callable
        Membership oracle, vector -> bool.
    star_center : array_like
        A point x0 in K such that every segment [x0, x] with x in K lies in K.
    diameter : float
        Euclidean diameter. ``diameter_exact=False`` marks a lower-bound estimate.
    sampler : callable, optional
        ``sampler(rng) -> vector`` drawing points of K.
    cloud : array_like, optional
        Fixed candidate cloud. When absent, clouds are generated on demand by
        ``cloud_builder(budget, rng)`` (or the generic sampler-based builder).
    """

    def __init__(
        self,
        n: int,
        contains: Callable[[np.ndarray], bool],
        star_center,
        diameter: float,
        *,
        diameter_exact: bool = True,
        sampler: Callable[[np.random.Generator], np.ndarray] | None = None,
        cloud=None,
        cloud_builder: Callable[[int, np.random.Generator], np.ndarray] | None = None,
        h_cloud: float | None = None,
        name: str = "set",
        cloud_budget: int = DEFAULT_BUDGET,
        cloud_seed: int = 0,
    ):
        self.n = int(n)
        self._contains = contains
        self.star_center = np.asarray(star_center, dtype=float).reshape(self.n)
        self.diameter = float(diameter)
        self.diameter_exact = diameter_exact
        self._sampler = sampler
        self._cloud_builder = cloud_builder
        self.h_cloud = h_cloud
        self.name = name
        self.cloud_budget = int(cloud_budget)
        self.cloud_seed = int(cloud_seed)
        self._fixed_cloud = None if cloud is None else self._with_center(cloud)
        self._cache: dict = {}
        if not self.contains(self.star_center):
            raise ValueError("star_center is not a member of the set")

    def __repr__(self):
        return f"ConstraintSet({self.name}, n={self.n}, d={self.diameter:.6g})"

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            return False
        return bool(self._contains(x))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        if self._sampler is None:
            raise NotImplementedError(f"{self.name} has no sampler")
        return np.asarray(self._sampler(rng), dtype=float)

    @property
    def has_fixed_cloud(self) -> bool:
        return self._fixed_cloud is not None

    def _with_center(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, self.n)
        return canonical_cloud(np.vstack([self.star_center[None, :], points]))

    def candidate_cloud(self, budget: int | None = None, seed: int | None = None) -> np.ndarray:
        """Lexicographically sorted candidate points of K, star center included.

        A fixed cloud is returned unchanged; generated clouds hold at most
        ``budget`` points plus the star center and are cached per (budget, seed).
        """
        if self._fixed_cloud is not None:
            return self._fixed_cloud
        budget = self.cloud_budget if budget is None else budget
        seed = self.cloud_seed if seed is None else seed
        key = (int(budget), int(seed))
        if key not in self._cache:
            rng = np.random.default_rng(seed)
            builder = self._cloud_builder or self._generic_cloud
            self._cache[key] = self._with_center(builder(int(budget), rng))
        return self._cache[key]

    def _generic_cloud(self, budget: int, rng: np.random.Generator) -> np.ndarray:
        # samples plus points on their segments to the star center (in K by star-shapedness)
        if self._sampler is None:
            raise NotImplementedError(f"{self.name} has neither a cloud nor a sampler")
        n_samples = max(1, budget // 4)
        samples = np.array([self.sample(rng) for _ in range(n_samples)])
        ts = rng.random(budget - n_samples)
        picks = samples[rng.integers(0, n_samples, size=budget - n_samples)]
        shrunk = self.star_center + ts[:, None] * (picks - self.star_center)
        return np.vstack([samples, shrunk])


def segment_set(start, end, resolution: float | None = 1e-3, name: str = "segment") -> ConstraintSet:
    """The segment {start + t (end - start) : t in [0, 1]}, star center ``start``.

    The cloud is the equispaced grid of spacing at most ``resolution`` along the
    segment, endpoints included.
    """
    start = np.atleast_1d(np.asarray(start, dtype=float))
    end = np.atleast_1d(np.asarray(end, dtype=float))
    direction = end - start
    length = float(np.linalg.norm(direction))
    n = start.size

    def contains(x):
        if length == 0:
            return bool(np.allclose(x, start, rtol=0, atol=1e-12))
        t = float(np.dot(x - start, direction)) / length**2
        if t < -1e-12 or t > 1 + 1e-12:
            return False
        return bool(np.linalg.norm(x - (start + t * direction)) <= 1e-9 * max(1.0, length))

    def sampler(rng):
        return start + rng.random() * direction

    m = 1 if length == 0 else int(math.ceil(length / resolution)) + 1
    ts = np.linspace(0.0, 1.0, m) if m > 1 else np.zeros(1)
    cloud = start + ts[:, None] * direction
    return ConstraintSet(
        n, contains, start, length, sampler=sampler, cloud=cloud,
        h_cloud=length / max(m - 1, 1), name=name,
    )


def singleton_set(point) -> ConstraintSet:
    point = np.atleast_1d(np.asarray(point, dtype=float))

    return ConstraintSet(
        point.size,
        lambda x: bool(np.array_equal(x, point)),
        point,
        0.0,
        sampler=lambda rng: point.copy(),
        cloud=point[None, :],
        h_cloud=0.0,
        name="singleton",
    )


def cloud_set(points, star_center=None, contains=None, name: str = "cloud") -> ConstraintSet:
    """A set known only through a finite cloud.

    Membership defaults to exact cloud membership. The diameter is the maximal
    pairwise cloud distance and is flagged as a lower bound.
    """
    points = canonical_cloud(points)
    center = points[0] if star_center is None else np.asarray(star_center, dtype=float)
    if contains is None:
        rows = {tuple(p) for p in points} | {tuple(center)}

        def contains(x):
            return tuple(x) in rows

    diameter = float(cdist(points, points).max()) if len(points) > 1 else 0.0
    return ConstraintSet(
        points.shape[1], contains, center, diameter, diameter_exact=False,
        cloud=points, name=name,
    )


# --------------------------------------------------------------------------
# monotone functions on the lattice L_{q,n}


def lattice_side(q: int, n: int) -> int:
    if q < 1 or n < 1:
        raise LatticeSizeError(f"need q >= 1 and n >= 1, got q={q}, n={n}")
    m = int(round(n ** (1.0 / q)))
    for cand in (m - 1, m, m + 1):
        if cand >= 1 and cand**q == n:
            return cand
    raise LatticeSizeError(f"n={n} is not a perfect {q}-th power")


def lattice_points(q: int, n: int) -> np.ndarray:
    """Lattice points (i_1/m, ..., i_q/m), i_j in 1..m, in C (lexicographic) order."""
    m = lattice_side(q, n)
    idx = np.indices((m,) * q).reshape(q, -1).T
    return (idx + 1) / m


def lattice_edges(q: int, n: int) -> np.ndarray:
    """Directed edges (lo, hi) between lattice neighbours along each axis."""
    m = lattice_side(q, n)
    grid = np.arange(n).reshape((m,) * q)
    edges = []
    for axis in range(q):
        lo = np.take(grid, np.arange(m - 1), axis=axis).ravel()
        hi = np.take(grid, np.arange(1, m), axis=axis).ravel()
        edges.append(np.column_stack([lo, hi]))
    if not edges or edges[0].size == 0:
        return np.zeros((0, 2), dtype=int)
    return np.vstack(edges)


class MonotoneLatticeSet(ConstraintSet):
    """Evaluations on L_{q,n} of functions [0,1]^q -> [-M, M] nondecreasing in each variable.

    Convex, star-shaped about the zero vector, diameter exactly 2 M sqrt(n).
    """

    def __init__(self, q: int, n: int, M: float, cloud_budget: int = DEFAULT_BUDGET,
                 seed: int = 0, atol: float = 1e-12):
        self.q = int(q)
        self.M = float(M)
        self.side = lattice_side(q, n)
        self.edges = lattice_edges(q, n)
        self.atol = atol
        super().__init__(
            n,
            self._member,
            np.zeros(n),
            2.0 * self.M * math.sqrt(n),
            sampler=self._draw,
            cloud_builder=self._build_cloud,
            name=f"monotone(q={q}, n={n}, M={M:g})",
            cloud_budget=cloud_budget,
            cloud_seed=seed,
        )

    def _member(self, x):
        if np.max(np.abs(x)) > self.M + self.atol:
            return False
        if self.edges.size == 0:
            return True
        return bool(np.all(x[self.edges[:, 1]] >= x[self.edges[:, 0]] - self.atol))

    def _unit_monotone(self, u: np.ndarray) -> np.ndarray:
        # cumulative maxima along each axis in a fixed order; each pass keeps earlier axes sorted
        grid = u.reshape((self.side,) * self.q)
        for axis in range(self.q):
            grid = np.maximum.accumulate(grid, axis=axis)
        return grid.ravel()

    def _draw(self, rng):
        u = rng.random(self.n)
        if self.q == 1:
            u = np.sort(u)
        else:
            u = self._unit_monotone(u)
        return self.M * (2.0 * u - 1.0)

    def _level_index(self) -> np.ndarray:
        # a linear extension of the lattice order: normalized coordinate sum
        return lattice_points(self.q, self.n).sum(axis=1) / self.q

    def _build_cloud(self, budget: int, rng: np.random.Generator) -> np.ndarray:
        """Step functions, shrunken random draws and multi-scale random monotone vectors."""
        M, n = self.M, self.n
        pieces = []
        levels = np.linspace(-M, M, 9)
        pieces.append(levels[:, None] * np.ones((1, n)))
        score = self._level_index()
        cuts = np.unique(score)[:-1]
        if cuts.size:
            take = cuts[np.linspace(0, cuts.size - 1, min(cuts.size, 16)).round().astype(int)]
            lo_hi = [(-M, M), (-M, 0.0), (0.0, M), (-M / 2, M / 2)]
            for t in np.unique(take):
                for lo, hi in lo_hi:
                    pieces.append(np.where(score > t, hi, lo)[None, :])
        fixed = np.vstack(pieces)
        remaining = max(budget - fixed.shape[0], 0)
        draws = np.empty((remaining, n))
        for k in range(remaining):
            kind = k % 3
            if kind == 0:
                x = self._draw(rng)
            elif kind == 1:
                x = self._draw(rng) * rng.random()
            else:
                # random step function: few jumps, values in a random sub-interval
                a, b = np.sort(rng.uniform(-M, M, size=2))
                jumps = int(np.exp(rng.uniform(0.0, np.log(n + 1))))
                knots = np.sort(rng.random(jumps))
                vals = np.sort(rng.uniform(a, b, size=jumps + 1))
                x = vals[np.searchsorted(knots, score, side="left")]
            draws[k] = x
        return np.vstack([fixed[:budget], draws])


def monotone_lattice_set(q: int, n: int, M: float, cloud_budget: int = DEFAULT_BUDGET,
                         seed: int = 0) -> MonotoneLatticeSet:
    return MonotoneLatticeSet(q, n, M, cloud_budget=cloud_budget, seed=seed)


def is_monotone_bruteforce(theta, q: int, n: int, M: float) -> bool:
    """All-pairs check of the lattice order; O(n^2 q), meant as a test oracle."""
    pts = lattice_points(q, n)
    theta = np.asarray(theta, dtype=float)
    if np.max(np.abs(theta)) > M:
        return False
    below = np.all(pts[:, None, :] <= pts[None, :, :], axis=2)
    i, j = np.nonzero(below)
    return bool(np.all(theta[j] >= theta[i]))


# --------------------------------------------------------------------------
# packings


@dataclass
class PackingResult:
    """A strict ``radius``-packing of B(ball_center, ball_radius) ∩ K.

    ``indices`` point into ``cloud`` (the candidate cloud the packing was
    computed from), when known.
    """

    centers: np.ndarray
    radius: float
    ball_center: np.ndarray
    ball_radius: float
    is_maximal: bool
    indices: np.ndarray | None = None
    cloud: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.centers)


def farthest_point_packing(points: np.ndarray, separation: float, start: int = 0,
                           seeds: Sequence[int] | None = None) -> list[int]:
    """Farthest-point greedy over rows of ``points``.

    Starts from ``seeds`` (or the single index ``start``) and keeps adding the
    row with the largest distance to the chosen set while that distance
    exceeds ``separation``. Ties go to the lowest row index.
    """
    m = points.shape[0]
    chosen = list(seeds) if seeds else [int(start)]
    mind = np.full(m, np.inf)
    for i in chosen:
        np.minimum(mind, cdist(points[i:i + 1], points)[0], out=mind)
    while True:
        j = int(np.argmax(mind))
        if not mind[j] > separation:
            break
        chosen.append(j)
        np.minimum(mind, cdist(points[j:j + 1], points)[0], out=mind)
    return chosen


def greedy_maximal_packing(cset: ConstraintSet, ball_center, ball_radius: float,
                           separation: float, budget: int | None = None,
                           seed: int | None = None) -> PackingResult:
    """Maximal strict ``separation``-packing of the cloud points of B(ball_center, ball_radius) ∩ K.

    The greedy starts at the cloud point nearest ``ball_center`` and proceeds
    farthest-point first; the result is a packing that is maximal relative to
    the cloud, hence also a ``separation``-covering of it.
    """
    if separation <= 0:
        raise ValueError("separation must be positive")
    ball_center = np.asarray(ball_center, dtype=float)
    cloud = cset.candidate_cloud(budget, seed)
    dist = cdist(ball_center[None, :], cloud)[0]
    inside = np.flatnonzero(dist <= ball_radius)
    if inside.size == 0:
        raise EmptyIntersection("no cloud point lies in the ball")
    local = cloud[inside]
    start = int(np.argmin(dist[inside]))
    picked = farthest_point_packing(local, separation, start=start)
    idx = inside[picked]
    return PackingResult(cloud[idx], float(separation), ball_center, float(ball_radius),
                         True, indices=idx, cloud=cloud)


def verify_packing(result: PackingResult, cset: ConstraintSet,
                   cloud: np.ndarray | None = None) -> tuple[bool, list]:
    """Re-check the packing invariants. Returns ``(ok, violations)``.

    Violations are tuples ``("pair", i, j, dist)``, ``("outside", i)`` or
    ``("uncovered", point)``.
    """
    violations = []
    centers = np.atleast_2d(result.centers)
    if len(centers) > 1:
        dd = cdist(centers, centers)
        for i, j in zip(*np.triu_indices(len(centers), 1)):
            if not dd[i, j] > result.radius:
                violations.append(("pair", int(i), int(j), float(dd[i, j])))
    to_ball = cdist(centers, result.ball_center[None, :])[:, 0]
    for i, c in enumerate(centers):
        if to_ball[i] > result.ball_radius or not cset.contains(c):
            violations.append(("outside", i))
    if result.is_maximal:
        if cloud is None:
            cloud = result.cloud if result.cloud is not None else cset.candidate_cloud()
        in_ball = cloud[cdist(result.ball_center[None, :], cloud)[0] <= result.ball_radius]
        if len(in_ball):
            gap = cdist(in_ball, centers).min(axis=1)
            for p in in_ball[gap > result.radius]:
                violations.append(("uncovered", p))
    return not violations, violations


# --------------------------------------------------------------------------
# local entropy and the critical radius


@dataclass
class LocalEntropyEstimate:
    log_N: float
    count: int
    center: np.ndarray
    epsilon: float
    c: float
    is_lower_bound: bool = True


def local_entropy(cset: ConstraintSet, epsilon: float, c: float, probes: int = 16,
                  budget: int | None = None, seed: int | None = None) -> LocalEntropyEstimate:
    """Lower bound on log N^loc(epsilon, c) from greedy packings around probe centers.

    Probes are the star center, the cloud points farthest from it, and random
    cloud points. Each probe packs B(theta, epsilon) ∩ cloud at separation
    epsilon / c. The star center is also probed with the whole cloud pulled
    radially into its ball, which stays inside K by star-shapedness. The
    largest count wins.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if c <= 2:
        raise ValueError("c must exceed 2")
    if probes < 1:
        raise ValueError("probes must be >= 1")
    cloud = cset.candidate_cloud(budget, seed)
    rng = np.random.default_rng(cset.cloud_seed if seed is None else seed)
    from_center = cdist(cset.star_center[None, :], cloud)[0]
    order = np.argsort(-from_center, kind="stable")
    n_extreme = min(len(cloud), max(1, (probes - 1) // 2))
    candidates = [cset.star_center] + [cloud[i] for i in order[:n_extreme]]
    n_random = probes - len(candidates)
    if n_random > 0:
        picks = rng.choice(len(cloud), size=min(n_random, len(cloud)), replace=False)
        candidates += [cloud[i] for i in np.sort(picks)]
    best = None
    for theta in candidates[:max(probes, 1)]:
        try:
            res = greedy_maximal_packing(cset, theta, epsilon, epsilon / c, budget, seed)
        except EmptyIntersection:
            continue
        if best is None or len(res) > best[0]:
            best = (len(res), theta)
    # star-shapedness puts x0 + t (x - x0) in K, so the cloud can be pulled radially into B(x0, eps)
    x0 = cset.star_center
    scale = np.minimum(1.0, epsilon / np.maximum(from_center, 1e-300))
    pulled = canonical_cloud(x0 + scale[:, None] * (cloud - x0))
    start = int(np.argmin(cdist(x0[None, :], pulled)[0]))
    count = len(farthest_point_packing(pulled, epsilon / c, start=start))
    if best is None or count > best[0]:
        best = (count, x0)
    if best is None:
        raise EmptyIntersection("every probe ball missed the cloud")
    return LocalEntropyEstimate(math.log(best[0]), best[0], np.asarray(best[1]), epsilon, c)


def running_max_smoother(entropy: Callable[[float], float]) -> Callable[[float], float]:
    """Make a noisy entropy estimate nonincreasing: e(eps) := max over queried eps' >= eps."""
    seen: dict[float, float] = {}

    def smoothed(eps: float) -> float:
        value = entropy(eps)
        seen[eps] = value
        return max(v for e, v in seen.items() if e >= eps)

    return smoothed


def epsilon_star(entropy: Callable[[float], float], kappaM: float, d: float,
                 tol: float = 1e-9, max_iter: int = 200) -> float:
    """Largest eps in (0, d] with eps^2 kappaM <= entropy(eps), to within ``tol``.

    Returns 0 when the inequality already fails at eps = tol. Raises
    ``NotMonotone`` if the queried entropy values increase by more than ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    queried: list[tuple[float, float]] = []

    def g(eps):
        val = float(entropy(eps))
        for e, v in queried:
            if (e < eps and val > v + tol) or (e > eps and v > val + tol):
                raise NotMonotone(f"entropy({eps})={val} vs entropy({e})={v}")
        queried.append((eps, val))
        return val - kappaM * eps * eps

    if d <= 0 or d < tol or g(tol) < 0:
        return 0.0
    if g(d) >= 0:
        return float(d)
    lo, hi = tol, float(d)
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if g(mid) >= 0:
            lo = mid
        else:
            hi = mid
    return lo


# --------------------------------------------------------------------------
# CSV interchange


def save_cloud(path, points) -> None:
    np.savetxt(path, np.atleast_2d(points), delimiter=",", fmt="%.17g")


def load_cloud(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", comments="#", ndmin=2))


def save_packing(path, result: PackingResult) -> None:
    header = f"separation={result.radius!r} ball_radius={result.ball_radius!r}"
    np.savetxt(path, np.atleast_2d(result.centers), delimiter=",", fmt="%.17g",
               header=header, comments="# ")


def load_packing(path, ball_center=None) -> PackingResult:
    with open(path) as fh:
        header = fh.readline().lstrip("#").split()
    meta = dict(item.split("=", 1) for item in header)
    centers = load_cloud(path)
    center = centers[0] if ball_center is None else np.asarray(ball_center, dtype=float)
    return PackingResult(centers, float(meta["separation"]), center,
                         float(meta["ball_radius"]), False)
