"""Monte Carlo risk experiments and log-log rate fitting.

Replicate ``r`` at dimension ``n`` draws from ``default_rng([seed + r, n])``,
so results do not depend on how replicates are scheduled. The tree is built
once per n and shared by all replicates; worker processes inherit it by
fork. Per-replicate results are stored by index and reduced in index order.
"""

from __future__ import annotations

import hashlib
import json
import math
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..bounds import monotone_entropy, monotone_rate, segment_entropy
from ..errors import ConfigError, ExperimentFailed, InsufficientRows, MinimaxError
from ..estimator import EstimatorPlan, prepare
from ..expfam import make_family
from ..geometry import (
    ConstraintSet,
    MonotoneLatticeSet,
    load_cloud,
    segment_set,
    singleton_set,
)
from .config import ExperimentSpec

RISK_COLUMNS = ("n", "replicates", "mean_sq_err", "std_err", "mean_runtime_s")
Z95 = 1.959963984540054

AVERAGE_CASE_NOTE = (
    "risk is averaged over the configured truth distribution; the minimax "
    "statements concern the worst case, so these curves are an average-case surrogate"
)


@dataclass(frozen=True)
class RiskRow:
    n: int
    replicates: int
    mean_sq_err: float
    std_err: float
    mean_runtime_s: float
    excluded: int = 0


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    std_err: float
    ci_low: float
    ci_high: float
    n_points: int


@dataclass
class RiskCurve:
    rows: list[RiskRow]
    fit: RateFit | None
    predicted_slope: float | None
    predicted_upper_bound_only: bool = False
    flags: list[str] = field(default_factory=list)
    sq_errors: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def fitted_slope(self) -> float | None:
        return None if self.fit is None else self.fit.slope

    def to_csv(self) -> str:
        lines = [",".join(RISK_COLUMNS)]
        for r in self.rows:
            lines.append(f"{r.n},{r.replicates},{r.mean_sq_err!r},{r.std_err!r},{r.mean_runtime_s!r}")
        return "\n".join(lines) + "\n"


def fit_rate(rows) -> RateFit:
    """OLS of log risk on log n with a normal-approximation 95% interval.

    ``rows`` holds ``(n, risk)`` pairs or :class:`RiskRow` objects.
    """
    pairs = [(r.n, r.mean_sq_err) if isinstance(r, RiskRow) else (r[0], r[1]) for r in rows]
    if len(pairs) < 4:
        raise InsufficientRows(f"need at least 4 rows to fit a slope, got {len(pairs)}")
    n = np.array([p[0] for p in pairs], dtype=float)
    risk = np.array([p[1] for p in pairs], dtype=float)
    if np.any(n <= 0) or np.any(risk <= 0):
        raise ValueError("n and risk must be positive")
    x, y = np.log(n), np.log(risk)
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = len(x) - 2
    sigma2 = float(resid @ resid) / dof if dof > 0 else 0.0
    se = math.sqrt(sigma2 / float(np.sum((x - x.mean()) ** 2)))
    slope = float(coef[1])
    return RateFit(slope, float(coef[0]), se, slope - Z95 * se, slope + Z95 * se, len(x))


# --------------------------------------------------------------------------
# experiment pieces


def build_set(spec: ExperimentSpec, n: int) -> ConstraintSet:
    if spec.set == "monotone":
        return MonotoneLatticeSet(spec.q, n, spec.M, cloud_budget=spec.budget, seed=spec.cloud_seed)
    if spec.set == "segment":
        return segment_set(np.full(n, spec.segment_start), np.full(n, spec.segment_end))
    return singleton_set(np.full(n, spec.point))


def entropy_oracle(spec: ExperimentSpec, cset: ConstraintSet):
    """Analytic oracle for the configured set, or None to use estimated local entropy."""
    if spec.entropy != "analytic":
        return None
    if spec.set == "monotone":
        f = monotone_entropy(spec.q, cset.n, spec.M)
        return lambda eps, c: f(eps)
    if spec.set == "segment":
        return segment_entropy(cset.diameter)
    return lambda eps, c: 0.0


def _truth_rows(spec: ExperimentSpec) -> dict[int, np.ndarray]:
    if spec.truth != "csv":
        return {}
    try:
        rows = load_cloud(spec.truth_file)
    except OSError as exc:
        raise ConfigError(f"cannot read truth file {spec.truth_file}: {exc}") from None
    by_n = {len(r): r for r in rows}
    missing = [n for n in spec.ns if n not in by_n]
    if missing:
        raise ConfigError(f"truth file has no row of length {missing}")
    return by_n


def draw_truth(spec: ExperimentSpec, cset: ConstraintSet, rng, fixed=None) -> np.ndarray:
    if spec.truth == "constant":
        return np.full(cset.n, spec.truth_value)
    if spec.truth == "csv":
        return np.asarray(fixed, dtype=float)
    if spec.set == "monotone" and spec.q == 1:
        return np.sort(rng.uniform(-spec.M, spec.M, cset.n))
    return cset.sample(rng)


def replicate_seed(spec: ExperimentSpec, rep: int, n: int) -> list[int]:
    return [spec.seed + rep, n]


@dataclass
class _Job:
    spec: ExperimentSpec
    plan: EstimatorPlan
    n: int
    fixed_truth: np.ndarray | None


_JOB: _Job | None = None


def _run_replicate(rep: int):
    job = _JOB
    rng = np.random.default_rng(replicate_seed(job.spec, rep, job.n))
    try:
        truth = draw_truth(job.spec, job.plan.cset, rng, job.fixed_truth)
        y = job.plan.family.sample(truth, rng)
        t0 = time.perf_counter()
        est = job.plan.run(y).estimate
        elapsed = time.perf_counter() - t0
        diff = est - truth
        return rep, float(np.sum(diff * diff)), elapsed, None
    except MinimaxError as exc:
        return rep, math.nan, 0.0, f"{exc.code} {exc}"


def _run_chunk(reps):
    return [_run_replicate(r) for r in reps]


def _map_replicates(replicates: int, workers: int):
    reps = list(range(replicates))
    if workers == 1 or replicates == 1:
        return _run_chunk(reps)
    chunks = [reps[i::workers] for i in range(workers)]
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        out = []
        for part in pool.map(_run_chunk, chunks):
            out.extend(part)
    return out


def run_experiment(spec: ExperimentSpec, out_dir=None, workers: int | None = None,
                   log=None) -> RiskCurve:
    """Run every (n, replicate), aggregate, fit, and optionally write artifacts.

    Raises :class:`ExperimentFailed` when more than ``max_fail_fraction`` of
    the replicates at any n fail.
    """
    global _JOB
    workers = spec.workers if workers is None else workers
    family = make_family(spec.family, spec.M)
    truths = _truth_rows(spec)
    cfg = spec.estimator_config()
    rows, errors, failures, plans = [], {}, {}, {}
    for n in spec.ns:
        cset = build_set(spec, n)
        t0 = time.perf_counter()
        plan = prepare(cset, family, cfg, entropy_oracle(spec, cset))
        build_s = time.perf_counter() - t0
        plans[n] = {"J_star": plan.J_star, "steps": plan.steps, "kappaM": plan.kappaM,
                    "d": cset.diameter, "level_sizes": plan.tree.report.level_sizes,
                    "entropy_source": plan.entropy_source, "tree_build_s": build_s}
        if log:
            log(f"n={n} J*={plan.J_star} levels={plan.tree.report.level_sizes} build={build_s:.2f}s")
        _JOB = _Job(spec, plan, n, truths.get(n))
        try:
            results = sorted(_map_replicates(spec.replicates, workers))
        finally:
            _JOB = None
        sq = np.array([r[1] for r in results])
        times = np.array([r[2] for r in results])
        bad = [(r[0], r[3]) for r in results if r[3] is not None]
        failures[n] = bad
        if len(bad) > spec.max_fail_fraction * spec.replicates:
            raise ExperimentFailed(f"n={n}: {len(bad)} of {spec.replicates} replicates failed; first: {bad[0][1]}")
        ok = ~np.isnan(sq)
        kept = sq[ok]
        errors[n] = sq
        std = float(kept.std(ddof=1) / math.sqrt(kept.size)) if kept.size > 1 else 0.0
        rows.append(RiskRow(n, int(kept.size), float(kept.mean()), std,
                            float(times[ok].mean()), len(bad)))
    curve = _finish(spec, rows, errors)
    if out_dir is not None:
        write_artifacts(spec, curve, out_dir, plans, failures, workers)
    return curve


def _finish(spec: ExperimentSpec, rows: list[RiskRow], errors) -> RiskCurve:
    flags = []
    fit = None
    positive = [r for r in rows if r.mean_sq_err > 0]
    if len(rows) < 4:
        flags.append("insufficient-rows")
    elif len(positive) < len(rows):
        flags.append("nonpositive-risk")
    else:
        fit = fit_rate(rows)
    predicted, upper = None, False
    if spec.set == "monotone":
        p = monotone_rate(spec.q, float(spec.ns[0]))
        predicted, upper = p.exponent, p.upper_bound_only
    return RiskCurve(rows, fit, predicted, upper, flags, errors)


# --------------------------------------------------------------------------
# persistence


def git_blob_hash(data: bytes) -> str:
    """Content hash in the format git uses for blobs."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def input_hash(spec: ExperimentSpec) -> str:
    data = spec.to_text().encode()
    if spec.truth == "csv":
        data += Path(spec.truth_file).read_bytes()
    return git_blob_hash(data)


def replicates_csv(spec: ExperimentSpec, curve: RiskCurve) -> str:
    lines = ["n,replicate,seed,sq_err"]
    for n in spec.ns:
        for rep, v in enumerate(curve.sq_errors[n]):
            seed = ":".join(str(s) for s in replicate_seed(spec, rep, n))
            lines.append(f"{n},{rep},{seed},{float(v)!r}")
    return "\n".join(lines) + "\n"


def write_artifacts(spec: ExperimentSpec, curve: RiskCurve, out_dir, plans, failures,
                    workers: int) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "risk.csv").write_text(curve.to_csv())
    (out / "replicates.csv").write_text(replicates_csv(spec, curve))
    (out / "config.cfg").write_text(spec.to_text())
    fit = curve.fit
    meta = {
        "package_version": __version__,
        "config": spec.as_dict(),
        "config_text": spec.to_text(),
        "input_hash": input_hash(spec),
        "seeds": {
            "base_seed": spec.seed,
            "cloud_seed": spec.cloud_seed,
            "replicate_rule": "default_rng([seed + replicate, n])",
            "replicate_seeds": {str(n): [spec.seed + r for r in range(spec.replicates)] for n in spec.ns},
        },
        "workers": workers,
        "plans": {str(n): p for n, p in plans.items()},
        "excluded": {str(n): len(v) for n, v in failures.items()},
        "failures": {str(n): [f"{rep}: {msg}" for rep, msg in v] for n, v in failures.items()},
        "fit": None if fit is None else fit.__dict__,
        "predicted_slope": curve.predicted_slope,
        "predicted_upper_bound_only": curve.predicted_upper_bound_only,
        "flags": curve.flags,
        "loss": "total squared error; divide by n for the per-coordinate version",
        "note": AVERAGE_CASE_NOTE,
    }
    text = json.dumps(meta, indent=2, sort_keys=True, default=float)
    (out / "risk.csv.meta.json").write_text(text + "\n")
    return meta
