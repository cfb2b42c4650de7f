"""Experiment configuration: a single JSON document per run."""
from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Optional

EXPERIMENTS = (
    "variance-check",
    "wick-orthogonality",
    "local-solve",
    "global-imethod-run",
    "commutator-scaling",
    "gibbs-invariance",
    "rn-convergence",
)
FORMATS = ("csv", "json")


class ConfigError(ValueError):
    """Validation failure; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class LatticeConfig:
    K: int = 32
    gridSize: Optional[int] = None


@dataclass(frozen=True)
class ScheduleConfig:
    N0: Optional[float] = None
    sigma: float = 1.2
    alpha: float = 0.65
    beta: float = 0.25
    cTau: float = 1.0
    stages: int = 5


@dataclass(frozen=True)
class PhysicsConfig:
    k: int = 3
    damped: bool = False
    s: float = 0.9
    eps: float = 0.1
    N: Optional[float] = None
    schedule: Optional[ScheduleConfig] = None


@dataclass(frozen=True)
class RunConfig:
    T: float = 1.0
    dt: float = 0.01
    M: int = 10000
    seed: int = 0


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "out"
    format: str = "csv"


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    lattice: LatticeConfig = field(default_factory=LatticeConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    run: RunConfig = field(default_factory=RunConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        validate(self)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if "experiment" not in doc:
            raise ConfigError("experiment", "missing")
        base = default_config(doc["experiment"]).to_dict()
        merged = _merge(base, doc)
        return cls(
            experiment=merged["experiment"],
            lattice=_build(LatticeConfig, merged.get("lattice"), "lattice"),
            physics=_build_physics(merged.get("physics")),
            run=_build(RunConfig, merged.get("run"), "run"),
            output=_build(OutputConfig, merged.get("output"), "output"),
            params=dict(merged.get("params") or {}),
        )

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def with_overrides(self, seed: Optional[int] = None, out: Optional[str] = None,
                       fmt: Optional[str] = None) -> "ExperimentConfig":
        d = self.to_dict()
        if seed is not None:
            d["run"]["seed"] = seed
        if out is not None:
            d["output"]["dir"] = out
        if fmt is not None:
            d["output"]["format"] = fmt
        return ExperimentConfig.from_dict(d)


def _merge(base: Any, over: Any) -> Any:
    if isinstance(base, dict) and isinstance(over, dict):
        out = dict(base)
        for key, val in over.items():
            out[key] = _merge(base.get(key), val) if key in base and key != "params" else val
        if "params" in base and "params" in over:
            out["params"] = {**(base["params"] or {}), **(over["params"] or {})}
        return out
    return copy.deepcopy(over)


def _build(cls, doc, name):
    doc = doc or {}
    known = {f.name for f in fields(cls)}
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"{name}.{sorted(extra)[0]}", "unknown field")
    return cls(**doc)


def _build_physics(doc) -> PhysicsConfig:
    doc = dict(doc or {})
    sched = doc.pop("schedule", None)
    phys = _build(PhysicsConfig, doc, "physics")
    if sched is not None:
        phys = PhysicsConfig(**{**asdict(phys), "schedule": _build(ScheduleConfig, sched, "physics.schedule")})
    return phys


def validate(cfg: ExperimentConfig) -> None:
    if cfg.experiment not in EXPERIMENTS:
        raise ConfigError("experiment", f"unknown experiment {cfg.experiment!r}; choose from {EXPERIMENTS}")
    if cfg.lattice.K < 1:
        raise ConfigError("lattice.K", "must be a positive integer")
    G = cfg.lattice.gridSize
    if G is not None and (G % 2 or G < 2 * cfg.lattice.K + 2):
        raise ConfigError("lattice.gridSize", "must be even and at least 2K+2")
    ph = cfg.physics
    if ph.k < 1:
        raise ConfigError("physics.k", "must be positive")
    if ph.k >= 2:
        bound = 1.0 / (2 * (ph.k - 1))
        if not 0 <= ph.eps < bound:
            raise ConfigError("physics.eps", f"requires 0 <= eps < 1/(2(k-1)) = {bound:.4g}")
    if not 0 < ph.s < 1:
        raise ConfigError("physics.s", "must lie in (0, 1)")
    if cfg.experiment == "global-imethod-run" and not ph.s > 0.8:
        raise ConfigError("physics.s", f"s = {ph.s} violates the global theory constraint s > 4/5")
    if ph.N is not None and ph.N < 0:
        raise ConfigError("physics.N", "must be non-negative")
    if ph.schedule is not None:
        sc = ph.schedule
        if not sc.sigma > 1:
            raise ConfigError("physics.schedule.sigma", "must exceed 1")
        lo, hi = 2 * (1 - ph.s), 1 - 3 * (1 - ph.s)
        if not lo < sc.beta < sc.alpha <= hi + 1e-15:
            raise ConfigError("physics.schedule", f"need {lo:.4g} < beta < alpha <= {hi:.4g}")
        if sc.stages < 1:
            raise ConfigError("physics.schedule.stages", "must be positive")
    r = cfg.run
    if r.M <= 0:
        raise ConfigError("run.M", "M must be positive")
    if not r.T > 0:
        raise ConfigError("run.T", "must be positive")
    if not r.dt > 0:
        raise ConfigError("run.dt", "must be positive")
    if not 0 <= r.seed < 2 ** 64:
        raise ConfigError("run.seed", "must be an unsigned 64-bit integer")
    if cfg.output.format not in FORMATS:
        raise ConfigError("output.format", f"choose from {FORMATS}")


_DEFAULTS = {
    "variance-check": dict(
        lattice=dict(K=64), run=dict(M=10000, T=2.0),
        params=dict(Ns=[4, 16, 64], psiTimes=[0.5, 1.0, 2.0], phiTimes=[0.0, 1.0, 5.0],
                    rateNs=[16, 32, 64, 128, 256, 512], rateT=1.0)),
    "wick-orthogonality": dict(lattice=dict(K=8), physics=dict(N=8.0), run=dict(M=100000)),
    "local-solve": dict(
        lattice=dict(K=32), physics=dict(damped=True), run=dict(T=0.2, dt=0.0025, M=1),
        params=dict(windows=[0.05, 0.1, 0.2], tol=1e-10, maxIters=60, mmsTol=1e-6)),
    "global-imethod-run": dict(
        lattice=dict(K=32), physics=dict(s=0.9, schedule=dict(sigma=1.2, alpha=0.65, beta=0.25, stages=5)),
        run=dict(T=5.0, dt=0.01, M=1),
        params=dict(identityT=1.0, identityDts=[0.02, 0.01, 0.005], identityN=4.0, dataDecay=2.5, dataScale=0.3)),
    "commutator-scaling": dict(
        physics=dict(s=0.85), run=dict(M=50),
        params=dict(Ns=[16, 32, 64, 128], ks=[2, 3], latticeFactor=2, decay=1.85)),
    "gibbs-invariance": dict(
        lattice=dict(K=1), physics=dict(N=1.0, damped=True), run=dict(M=10000, T=5.0, dt=0.05),
        params=dict(level=0.01, agreementSE=4.0)),
    "rn-convergence": dict(lattice=dict(K=16), run=dict(M=20000), params=dict(Nlist=[2, 4, 8, 16])),
}


def default_config(experiment: str) -> ExperimentConfig:
    if experiment not in _DEFAULTS:
        raise ConfigError("experiment", f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
    d = copy.deepcopy(_DEFAULTS[experiment])
    sched = (d.get("physics") or {}).pop("schedule", None)
    phys = PhysicsConfig(**(d.get("physics") or {}))
    if sched is not None:
        phys = PhysicsConfig(**{**asdict(phys), "schedule": ScheduleConfig(**sched)})
    return ExperimentConfig(
        experiment=experiment,
        lattice=LatticeConfig(**(d.get("lattice") or {})),
        physics=phys,
        run=RunConfig(**(d.get("run") or {})),
        params=d.get("params") or {},
    )


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig.from_json(fh.read())
