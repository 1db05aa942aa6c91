"""Flat ``key = value`` experiment configuration.

One assignment per line; ``#`` starts a comment; blank lines are ignored.
Lists are comma separated. Unknown keys are rejected. The accepted keys and
their defaults are listed in ``docs/config.md``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConfigError
from ..estimator import EstimatorConfig
from ..expfam import FAMILIES

SET_KINDS = ("monotone", "segment", "singleton")
TRUTH_KINDS = ("random", "constant", "csv")
ENTROPY_KINDS = ("analytic", "estimated")


@dataclass
class ExperimentSpec:
    """Resolved experiment description.

    Attributes
    ----------
    family, M : str, float
        Observation family and natural-parameter bound.
    set : str
        ``monotone`` (lattice L_{q,n}), ``segment`` (from ``segment_start``
        times the all-ones vector to ``segment_end`` times it) or
        ``singleton`` (the constant vector ``point``).
    ns : list of int
        Strictly increasing ambient dimensions.
    truth : str
        ``random`` draws a fresh truth per replicate, ``constant`` uses
        ``truth_value`` in every coordinate, ``csv`` reads one row per n
        from ``truth_file``.
    """

    family: str = "bernoulli"
    M: float = 1.0
    set: str = "monotone"
    q: int = 1
    ns: list[int] = field(default_factory=lambda: [16, 32, 64, 128, 256])
    segment_start: float = -1.0
    segment_end: float = 1.0
    point: float = 0.0
    truth: str = "random"
    truth_value: float = 0.0
    truth_file: str | None = None
    replicates: int = 200
    seed: int = 0
    workers: int = 1
    budget: int = 2000
    cloud_seed: int = 0
    entropy: str = "analytic"
    C: float = 3.0
    c: float | None = None
    kappaM: float | None = None
    jstar_rule: str = "2c"
    steps: int | None = None
    extra_levels: int = 1
    node_cap: int = 1_000_000
    verify_tree: bool = True
    max_fail_fraction: float = 0.05
    out: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {sorted(FAMILIES)}, got {self.family!r}")
        if not self.M > 0:
            raise ConfigError("M must be positive")
        if self.set not in SET_KINDS:
            raise ConfigError(f"set must be one of {SET_KINDS}, got {self.set!r}")
        if self.truth not in TRUTH_KINDS:
            raise ConfigError(f"truth must be one of {TRUTH_KINDS}, got {self.truth!r}")
        if self.truth == "csv" and not self.truth_file:
            raise ConfigError("truth = csv requires truth_file")
        if self.entropy not in ENTROPY_KINDS:
            raise ConfigError(f"entropy must be one of {ENTROPY_KINDS}, got {self.entropy!r}")
        if not self.ns:
            raise ConfigError("ns must be non-empty")
        if any(n < 1 for n in self.ns):
            raise ConfigError("every n must be >= 1")
        if any(b <= a for a, b in zip(self.ns, self.ns[1:])):
            raise ConfigError(f"ns must be strictly increasing, got {self.ns}")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.q < 1:
            raise ConfigError("q must be >= 1")
        if not 0 <= self.max_fail_fraction < 1:
            raise ConfigError("max_fail_fraction must lie in [0, 1)")
        try:
            self.estimator_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def estimator_config(self) -> EstimatorConfig:
        return EstimatorConfig(
            C=self.C, c=self.c, kappaM=self.kappaM, steps=self.steps, seed=self.cloud_seed,
            jstar_rule=self.jstar_rule, budget=self.budget, node_cap=self.node_cap,
            extra_levels=self.extra_levels, verify_tree=self.verify_tree,
        )

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_text(self) -> str:
        """Canonical config text; parsing it gives back an equal spec."""
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            lines.append(f"{f.name} = {_render(v)}")
        return "\n".join(lines) + "\n"


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentSpec)}
_ALIASES = {"n": "ns", "threads": "workers"}


def _convert(key: str, raw: str):
    f = _FIELDS[key]
    kind = str(f.type)
    raw = raw.strip()
    if raw.lower() in ("none", "") and "None" in kind:
        return None
    try:
        if key == "ns":
            return [int(x) for x in raw.split(",") if x.strip()]
        if kind.startswith("bool"):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config_text(text: str, overrides: dict | None = None) -> ExperimentSpec:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw)
    for key, v in (overrides or {}).items():
        if v is not None:
            values[_ALIASES.get(key, key)] = v
    return ExperimentSpec(**values)


def load_config(path, overrides: dict | None = None) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    return parse_config_text(text, overrides)
