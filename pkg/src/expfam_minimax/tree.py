"""Leveled packing tree with cross-parent pruning.

Level 1 is the root, level 2 a maximal d/c-packing of K, and level k >= 3 is
assembled from per-parent packings of B(u, d/2^(k-2)) ∩ K at separation
d/(2^(k-1) c), followed by a front-to-back pruning pass that merges nodes
closer than that separation and rewires their parents.

All packing points are candidate-cloud points; a node is an integer id bound
to a cloud row. Coincident points created under different parents are
distinct nodes until pruning merges them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import InvariantViolation, NodeCapExceeded
from .geometry import FULL_MATRIX_LIMIT, ConstraintSet, canonical_cloud

DEFAULT_JMAX = 20
DEFAULT_NODE_CAP = 1_000_000

EntropyOracle = Callable[[float, float], float]


class CloudMetric:
    """Euclidean distances between cloud rows; full matrix for small clouds, cached rows otherwise."""

    def __init__(self, cloud: np.ndarray, full_limit: int = FULL_MATRIX_LIMIT):
        self.cloud = cloud
        self._full = cdist(cloud, cloud) if len(cloud) <= full_limit else None
        self._rows: dict[int, np.ndarray] = {}
        self._nn = None

    @property
    def nearest(self) -> np.ndarray:
        """Distance from each cloud row to its nearest other row."""
        if self._nn is None:
            if len(self.cloud) < 2:
                self._nn = np.full(len(self.cloud), np.inf)
            elif self._full is not None:
                self._nn = np.where(np.eye(len(self.cloud), dtype=bool), np.inf, self._full).min(axis=1)
            else:
                self._nn = cKDTree(self.cloud).query(self.cloud, k=2)[0][:, 1]
        return self._nn

    def __len__(self):
        return len(self.cloud)

    def row(self, i: int) -> np.ndarray:
        if self._full is not None:
            return self._full[i]
        r = self._rows.get(i)
        if r is None:
            if len(self._rows) > 8192:
                self._rows.clear()
            r = self._rows[i] = cdist(self.cloud[i:i + 1], self.cloud)[0]
        return r

    def block(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        if self._full is not None:
            return self._full[np.ix_(rows, cols)]
        return cdist(self.cloud[rows], self.cloud[cols])


@dataclass
class PruneRecord:
    level: int
    absorber: int
    absorbed: list[int]
    parents: list[int]


@dataclass
class TreeReport:
    ok: bool
    checks: dict[str, bool] = field(default_factory=dict)
    witnesses: dict[str, list] = field(default_factory=dict)
    level_sizes: list[int] = field(default_factory=list)
    preliminary_sizes: list[int] = field(default_factory=list)

    def summary(self) -> str:
        return " ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in self.checks.items())


@dataclass
class PrunedTree:
    """Immutable-by-convention result of :func:`build_tree`.

    ``levels[0]`` is level 1 (the root). ``offspring[u]`` and ``parents[u]``
    hold node ids; ``coords[row[u]]`` is the point of node ``u``.
    """

    levels: list[list[int]]
    ids: np.ndarray
    coords: np.ndarray
    offspring: dict[int, list[int]]
    parents: dict[int, list[int]]
    d: float
    c: float
    Jmax: int
    pruning_log: list[PruneRecord] = field(default_factory=list, repr=False)
    report: TreeReport | None = field(default=None, repr=False)
    node_point: dict[int, int] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.row = {int(i): k for k, i in enumerate(self.ids)}

    @property
    def root(self) -> int:
        return self.levels[0][0]

    @property
    def depth(self) -> int:
        return len(self.levels)

    def point(self, node: int) -> np.ndarray:
        return self.coords[self.row[node]]

    def points(self, nodes) -> np.ndarray:
        return self.coords[[self.row[u] for u in nodes]]

    def level_of(self, node: int) -> int:
        for k, lvl in enumerate(self.levels, start=1):
            if node in lvl:
                return k
        raise KeyError(node)

    def random_paths(self, count: int, seed: int = 0) -> list[list[int]]:
        """Root-to-deepest-level paths choosing uniformly among offspring."""
        rng = np.random.default_rng(seed)
        paths = []
        for _ in range(count):
            path = [self.root]
            while len(path) < self.depth:
                kids = self.offspring.get(path[-1], [])
                if not kids:
                    break
                path.append(kids[int(rng.integers(len(kids)))])
            paths.append(path)
        return paths


def separation_at(d: float, c: float, k: int) -> float:
    """Packing separation of level k: d/c for k = 2, d/(2^(k-1) c) for k >= 3."""
    return d / c if k == 2 else d / (2 ** (k - 1) * c)


def ball_radius_at(d: float, k: int) -> float:
    """Radius of the parent ball packed to form level k."""
    return d if k == 2 else d / 2 ** (k - 2)


class _Builder:
    def __init__(self, cset: ConstraintSet, root, c: float, budget, seed, node_cap: int):
        if c <= 2:
            raise ValueError("c must exceed 2")
        self.cset = cset
        self.c = float(c)
        self.d = float(cset.diameter)
        root = cset.star_center if root is None else np.asarray(root, dtype=float)
        if not cset.contains(root):
            raise ValueError("root is not a member of the set")
        cloud = cset.candidate_cloud(budget, seed)
        hit = np.flatnonzero(np.all(cloud == root, axis=1))
        if hit.size == 0:
            cloud = canonical_cloud(np.vstack([cloud, root[None, :]]))
            hit = np.flatnonzero(np.all(cloud == root, axis=1))
        self.cloud = cloud
        self.metric = CloudMetric(cloud)
        self.node_cap = node_cap
        self.node_point: list[int] = [int(hit[0])]
        self.levels: list[list[int]] = [[0]]
        self.offspring: dict[int, list[int]] = {0: []}
        self.parents: dict[int, list[int]] = {0: []}
        self.log: list[PruneRecord] = []
        self.prelim_sizes: list[int] = [1]

    def pts(self, nodes) -> np.ndarray:
        return np.asarray([self.node_point[u] for u in nodes], dtype=int)

    def pack(self, inside: np.ndarray, seeds: list[int], separation: float) -> list[int]:
        """Farthest-point greedy over cloud rows ``inside``, seeded with cloud rows ``seeds``."""
        if inside.size and self.metric.nearest[inside].min() > separation:
            # already pairwise separated: the greedy would take every point
            return sorted(set(seeds) | set(inside.tolist()))
        mind = np.full(inside.size, np.inf)
        for p in seeds:
            np.minimum(mind, self.metric.row(p)[inside], out=mind)
        chosen = list(seeds)
        while inside.size:
            j = int(np.argmax(mind))
            if not mind[j] > separation:
                break
            p = int(inside[j])
            chosen.append(p)
            np.minimum(mind, self.metric.row(p)[inside], out=mind)
        return chosen

    def new_nodes(self, points, parent: int) -> list[int]:
        start = len(self.node_point)
        self.node_point.extend(int(p) for p in points)
        return list(range(start, start + len(points)))

    def level2(self) -> list[int]:
        root = self.levels[0][0]
        rp = self.node_point[root]
        row = self.metric.row(rp)
        inside = np.flatnonzero(row <= self.d)
        start = inside[int(np.argmin(row[inside]))]
        picked = self.pack(inside, [int(start)], separation_at(self.d, self.c, 2))
        picked.sort()
        nodes = self.new_nodes(picked, root)
        self.offspring[root] = list(nodes)
        for u in nodes:
            self.parents[u] = [root]
            self.offspring[u] = []
        self.prelim_sizes.append(len(nodes))
        return nodes

    def preliminary(self, k: int):
        """Per-parent packings of level k; returns parallel arrays (ids, points, parent ids)."""
        r = ball_radius_at(self.d, k)
        s = separation_at(self.d, self.c, k)
        prev = self.levels[-1]
        prev_pts = self.pts(prev)
        prev_sorted = np.sort(prev_pts)
        ids, points, parents = [], [], []
        total = 0
        for u in prev:
            up = self.node_point[u]
            row = self.metric.row(up)
            inside = np.flatnonzero(row <= r)
            seeds = [int(p) for p in prev_sorted if row[p] <= r]
            picked = self.pack(inside, seeds, s)
            total += len(picked)
            if total > self.node_cap:
                raise NodeCapExceeded(
                    f"level {k} exceeds the node cap ({self.node_cap}) before pruning"
                )
            start = len(self.node_point)
            self.node_point.extend(picked)
            ids.append(np.arange(start, start + len(picked)))
            points.append(np.asarray(picked, dtype=int))
            parents.append(np.full(len(picked), u, dtype=int))
        return np.concatenate(ids), np.concatenate(points), np.concatenate(parents)

    def prune(self, k: int, ids, points, parents) -> list[int]:
        distinct, survivors, absorber_of = prune_points(
            points, ids, separation_at(self.d, self.c, k), self.metric)
        survivor_of_node = absorber_of[np.searchsorted(distinct, points)]
        level = []
        for rep_point, rep_id in survivors:
            level.append(rep_id)
            self.offspring[rep_id] = []
            self.parents[rep_id] = []
        # rewired edges: every preliminary edge parent -> node becomes parent -> survivor
        pairs = np.unique(np.column_stack([parents, survivor_of_node]), axis=0)
        for par, child in pairs:
            self.offspring[int(par)].append(int(child))
            self.parents[int(child)].append(int(par))
        absorbed = survivor_of_node != ids
        if np.any(absorbed):
            order = np.lexsort((ids[absorbed], survivor_of_node[absorbed]))
            a_ids = ids[absorbed][order]
            a_rep = survivor_of_node[absorbed][order]
            a_par = parents[absorbed][order]
            cuts = np.flatnonzero(np.diff(a_rep)) + 1
            for grp_ids, grp_rep, grp_par in zip(np.split(a_ids, cuts), np.split(a_rep, cuts),
                                                 np.split(a_par, cuts)):
                self.log.append(PruneRecord(k, int(grp_rep[0]), grp_ids.tolist(), grp_par.tolist()))
        self.prelim_sizes.append(int(ids.size))
        return level


def prune_points(points: np.ndarray, ids: np.ndarray, threshold: float, metric: CloudMetric):
    """Front-to-back pruning over lexicographically ordered nodes.

    Nodes are ordered by (cloud row, id); cloud rows are already in
    lexicographic order. The first unprocessed node absorbs every unprocessed
    node within ``threshold`` (inclusive), coincident ones included.

    Returns ``(distinct, survivors, absorber)``: the sorted distinct cloud rows,
    the surviving ``(cloud row, node id)`` pairs in processing order, and the
    surviving node id that absorbed each distinct row.
    """
    order = np.lexsort((ids, points))
    distinct, first = np.unique(points[order], return_index=True)
    first_id = ids[order][first]
    alive = np.ones(distinct.size, dtype=bool)
    absorber = np.empty(distinct.size, dtype=int)
    survivors = []
    for a in range(distinct.size):
        if not alive[a]:
            continue
        p = int(distinct[a])
        rep = int(first_id[a])
        near = alive & (metric.row(p)[distinct] <= threshold)
        absorber[near] = rep
        alive[near] = False
        absorber[a] = rep
        alive[a] = False
        survivors.append((p, rep))
    return distinct, survivors, absorber


def prune_level(preliminary, k: int, c: float, d: float, parents: dict[int, list[int]],
                offspring: dict[int, list[int]]):
    """Prune a preliminary level given as ``[(node_id, point), ...]``.

    Stand-alone form of the pruning pass for small, explicit inputs: points are
    coordinate vectors, nodes are processed in lexicographic (point, id)
    order, and ``parents``/``offspring`` are rewired in place. Returns the
    surviving node ids and the absorption log ``[(absorber, absorbed_ids, parent_ids)]``.
    """
    threshold = separation_at(d, c, k)
    order = sorted(preliminary, key=lambda item: (tuple(np.asarray(item[1], dtype=float)), item[0]))
    unprocessed = list(order)
    survivors, log = [], []
    while unprocessed:
        head_id, head_pt = unprocessed.pop(0)
        head_pt = np.asarray(head_pt, dtype=float)
        close = [(i, p) for i, p in unprocessed
                 if np.linalg.norm(np.asarray(p, dtype=float) - head_pt) <= threshold]
        close_ids = {i for i, _ in close}
        unprocessed = [(i, p) for i, p in unprocessed if i not in close_ids]
        absorbed_parents = []
        for j, _ in close:
            for par in parents.get(j, []):
                kids = offspring.setdefault(par, [])
                if j in kids:
                    kids.remove(j)
                if head_id not in kids:
                    kids.append(head_id)
                head_parents = parents.setdefault(head_id, [])
                if par not in head_parents:
                    head_parents.append(par)
                absorbed_parents.append(par)
            parents.pop(j, None)
        if close:
            log.append((head_id, [i for i, _ in close], absorbed_parents))
        survivors.append(head_id)
    return survivors, log


def build_level2(cset: ConstraintSet, root=None, c: float = 16.0, budget=None, seed=None):
    """Level 2: a maximal d/c-packing of K = B(root, d) ∩ K, as coordinate rows."""
    b = _Builder(cset, root, c, budget, seed, DEFAULT_NODE_CAP)
    nodes = b.level2()
    return b.cloud[b.pts(nodes)]


def build_tree(cset: ConstraintSet, root=None, c: float = 16.0, Jmax: int = DEFAULT_JMAX,
               budget=None, seed=None, entropy_oracle: EntropyOracle | None = None,
               node_cap: int = DEFAULT_NODE_CAP, verify: bool = True, strict: bool = True,
               verify_parents: int | None = None, n_paths: int = 100) -> PrunedTree:
    """Build and (optionally) verify the pruned tree down to level ``Jmax``.

    ``entropy_oracle(eps, c) -> log N^loc`` enables the offspring-cardinality
    check. With ``strict`` a failed check raises :class:`InvariantViolation`;
    otherwise the failure is only recorded in ``tree.report``.
    ``verify_parents`` caps how many parents per level the offspring checks visit.
    """
    if Jmax < 2:
        raise ValueError("Jmax must be at least 2")
    b = _Builder(cset, root, c, budget, seed, node_cap)
    b.levels.append(b.level2())
    for k in range(3, Jmax + 1):
        ids, points, parents = b.preliminary(k)
        b.levels.append(b.prune(k, ids, points, parents))
    live = sorted({u for lvl in b.levels for u in lvl})
    tree = PrunedTree(
        levels=[sorted(lvl, key=lambda u: (b.node_point[u], u)) for lvl in b.levels],
        ids=np.asarray(live, dtype=int),
        coords=b.cloud[b.pts(live)],
        offspring={u: sorted(b.offspring.get(u, []), key=lambda v: (b.node_point[v], v))
                   for u in live},
        parents={u: sorted(b.parents.get(u, [])) for u in live},
        d=b.d,
        c=b.c,
        Jmax=Jmax,
        pruning_log=b.log,
        node_point={u: b.node_point[u] for u in live},
    )
    if verify:
        tree.report = verify_tree(tree, b.cloud, entropy_oracle, metric=b.metric,
                                  prelim_sizes=b.prelim_sizes, max_parents=verify_parents,
                                  n_paths=n_paths, seed=0 if seed is None else seed)
        if strict and not tree.report.ok:
            failed = [k for k, v in tree.report.checks.items() if not v]
            raise InvariantViolation(
                f"tree invariants failed: {', '.join(failed)}",
                clause=failed[0],
                witnesses=tree.report.witnesses.get(failed[0], []),
            )
    return tree


def verify_tree(tree: PrunedTree, cloud: np.ndarray, entropy_oracle: EntropyOracle | None = None,
                metric: CloudMetric | None = None, prelim_sizes=None,
                max_parents: int | None = None, n_paths: int = 100, seed: int = 0) -> TreeReport:
    """Check the structural guarantees of the pruned tree against the candidate cloud."""
    d, c = tree.d, tree.c
    checks: dict[str, bool] = {}
    wit: dict[str, list] = {}

    def record(name, bad):
        checks[name] = checks.get(name, True) and not bad
        if bad:
            wit.setdefault(name, []).extend(bad[:5])

    def dist_to(points_a, points_b):
        return cdist(points_a, points_b)

    record("root", [] if len(tree.levels[0]) == 1 else [tuple(tree.levels[0])])
    orphans = []
    for k in range(1, tree.depth):
        upper = set(tree.levels[k - 1])
        for u in tree.levels[k]:
            if not any(p in upper for p in tree.parents.get(u, [])):
                orphans.append(u)
    record("parent_edges", orphans)

    rng = np.random.default_rng(seed)
    for J in range(2, tree.depth + 1):
        nodes = tree.levels[J - 1]
        pts = tree.points(nodes)
        sep = separation_at(d, c, J)
        if J >= 3:
            if len(nodes) > 1:
                dd = dist_to(pts, pts)
                np.fill_diagonal(dd, np.inf)
                i, j = np.unravel_index(np.argmin(dd), dd.shape)
                record("level_separation",
                       [] if dd[i, j] > sep else [(J, nodes[i], nodes[j], float(dd[i, j]))])
            else:
                record("level_separation", [])
            cover = d / (2 ** (J - 2) * c)
            gap = np.full(len(cloud), np.inf)
            for chunk in np.array_split(np.arange(len(nodes)), max(1, len(nodes) // 512)):
                np.minimum(gap, dist_to(cloud, pts[chunk]).min(axis=1), out=gap)
            bad = np.flatnonzero(gap > cover)
            record("level_covering", [(J, int(i), float(gap[i])) for i in bad[:5]])
        parents_above = tree.levels[J - 2]
        if max_parents is not None and len(parents_above) > max_parents:
            pick = np.sort(rng.choice(len(parents_above), size=max_parents, replace=False))
            parents_above = [parents_above[i] for i in pick]
        r = ball_radius_at(d, J)
        cover = d / c if J == 2 else d / (2 ** (J - 2) * c)
        bound = None
        if entropy_oracle is not None:
            bound = math.exp(entropy_oracle(d / 2 ** (J - 2), 2 * c))
        bad_cover, bad_card = [], []
        for u in parents_above:
            kids = tree.offspring.get(u, [])
            if bound is not None and len(kids) > bound * (1 + 1e-9):
                bad_card.append((J, u, len(kids), bound))
            if J >= 3:
                up = tree.point(u)
                in_ball = cloud[dist_to(up[None, :], cloud)[0] <= r]
                if len(in_ball) and kids:
                    gap = dist_to(in_ball, tree.points(kids)).min(axis=1)
                    if np.any(gap > cover):
                        bad_cover.append((J, u, float(gap.max())))
                elif len(in_ball):
                    bad_cover.append((J, u, math.inf))
        if J >= 3:
            record("offspring_covering", bad_cover)
        if entropy_oracle is not None:
            record("offspring_cardinality", bad_card)

    bad_path = []
    for path in tree.random_paths(n_paths, seed):
        pts = tree.points(path)
        dd = dist_to(pts, pts)
        for a in range(len(path)):
            Jp = a + 1
            lim = d * (2 + 4 * c) / (c * 2**Jp)
            over = np.flatnonzero(dd[a, a:] > lim)
            if over.size:
                bad_path.append((Jp, path[a], path[a + over[0]], float(dd[a, a + over[0]]), lim))
    record("path_contraction", bad_path)

    sizes = [len(lvl) for lvl in tree.levels]
    if prelim_sizes is not None:
        record("pruning_monotone",
               [(k + 1, p, s) for k, (p, s) in enumerate(zip(prelim_sizes, sizes)) if s > p])
    return TreeReport(ok=all(checks.values()), checks=checks, witnesses=wit,
                      level_sizes=sizes, preliminary_sizes=list(prelim_sizes or []))


# --------------------------------------------------------------------------
# text serialization


def dump_tree(tree: PrunedTree, path) -> None:
    """One node per line: ``id level parent_ids coords...`` after a ``# params`` header."""
    level_of = {u: k for k, lvl in enumerate(tree.levels, start=1) for u in lvl}
    with open(path, "w") as fh:
        fh.write(f"# params d={tree.d!r} c={tree.c!r} Jmax={tree.Jmax}\n")
        for k, lvl in enumerate(tree.levels, start=1):
            for u in lvl:
                pars = ",".join(str(p) for p in tree.parents.get(u, [])) or "-"
                coords = " ".join(repr(float(x)) for x in tree.point(u))
                fh.write(f"{u} {level_of[u]} {pars} {coords}\n")


def load_tree(path) -> PrunedTree:
    params = {}
    levels: dict[int, list[int]] = {}
    parents: dict[int, list[int]] = {}
    ids, coords = [], []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                for item in line.lstrip("#").split()[1:]:
                    key, val = item.split("=", 1)
                    params[key] = val
                continue
            parts = line.split()
            if not parts:
                continue
            u, lvl = int(parts[0]), int(parts[1])
            parents[u] = [] if parts[2] == "-" else [int(p) for p in parts[2].split(",")]
            levels.setdefault(lvl, []).append(u)
            ids.append(u)
            coords.append([float(x) for x in parts[3:]])
    order = np.argsort(ids)
    offspring: dict[int, list[int]] = {u: [] for u in ids}
    for k in sorted(levels):
        for u in levels[k]:
            for p in parents[u]:
                offspring[p].append(u)
    ids_arr = np.asarray(ids, dtype=int)[order]
    coords_arr = np.asarray(coords, dtype=float)[order]
    return PrunedTree(
        levels=[levels[k] for k in sorted(levels)],
        ids=ids_arr,
        coords=coords_arr,
        offspring=offspring,
        parents=parents,
        d=float(params["d"]),
        c=float(params["c"]),
        Jmax=int(params.get("Jmax", len(levels))),
    )
