"""
TOML experiment configuration for the command-line tools.

A file has top-level ``seed``, ``output_dir`` and ``repetitions``, an
``[mdp]`` table choosing the environment, a ``[run]`` table with the
:class:`~dapo.engine.DapoConfig` fields (``[run.schedule]`` and
``[run.critic]`` nested), and optional ``[sweep]`` and ``[compare]`` tables.
See ``configs/experiment.toml`` for every key.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from .engine import ALGORITHMS, DapoConfig
from .errors import ConfigError, DomainError
from .mdp import TabularMdp, grid_features, gridworld, load_mdp, random_mdp

SWEEP_KEYS = ("algorithm", "eta", "actor_lr", "actor_steps")
MDP_SOURCES = ("random", "gridworld", "file")


@dataclass(frozen=True)
class MdpSource:
    source: str = "random"
    n_states: int = 5
    n_actions: int = 3
    gamma: float = 0.9
    seed: int | None = None
    size: int = 4
    slip: float = 0.1
    path: str | None = None

    def __post_init__(self):
        if self.source not in MDP_SOURCES:
            raise ConfigError(f"mdp.source: expected one of {', '.join(MDP_SOURCES)}, got {self.source!r}")
        if self.source == "file" and not self.path:
            raise ConfigError("mdp.path: required when mdp.source = 'file'")
        if self.n_states < 1 or self.n_actions < 1:
            raise ConfigError("mdp.n_states / mdp.n_actions: must be positive")
        if not 0 < self.gamma < 1:
            raise ConfigError("mdp.gamma: must lie in (0, 1)")

    def build(self, seed: int, base_dir: Path | None = None) -> tuple[TabularMdp, np.ndarray | None]:
        """The MDP and, for gridworlds, coordinate state features.

        ``seed`` is used when the table sets none: it draws the random MDP or
        places the gridworld goal.
        """
        s = self.seed if self.seed is not None else seed
        try:
            if self.source == "random":
                return random_mdp(self.n_states, self.n_actions, self.gamma, s), None
            if self.source == "gridworld":
                return gridworld(self.size, self.slip, self.gamma, s), grid_features(self.size)
            path = Path(self.path)
            if not path.is_absolute() and base_dir is not None:
                path = base_dir / path
            return load_mdp(path), None
        except (DomainError, OSError, ValueError) as exc:
            raise ConfigError(f"mdp: {exc}") from exc

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass(frozen=True)
class ExperimentConfig:
    run: DapoConfig = field(default_factory=DapoConfig)
    mdp: MdpSource = field(default_factory=MdpSource)
    seed: int = 0
    output_dir: str = "out"
    repetitions: int = 1
    sweep: dict = field(default_factory=dict)
    compare: dict = field(default_factory=dict)
    base_dir: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigError("repetitions: must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed: must be nonnegative")

    @property
    def algorithm(self) -> str:
        return self.run.algorithm

    def rep_seed(self, rep: int) -> int:
        """Seed of repetition ``rep``: stream ``rep`` split off the master seed."""
        return int(np.random.SeedSequence(self.seed, spawn_key=(rep,)).generate_state(1)[0])

    def with_overrides(self, seed: int | None = None, output_dir: str | None = None) -> "ExperimentConfig":
        d = self.to_dict()
        if seed is not None:
            d["seed"] = seed
        if output_dir is not None:
            d["output_dir"] = str(output_dir)
        return from_dict(d, self.base_dir)

    def to_dict(self) -> dict:
        run = _drop_none(self.run.to_dict())
        d = {"seed": self.seed, "output_dir": self.output_dir, "repetitions": self.repetitions,
             "mdp": self.mdp.to_dict(), "run": run}
        if self.sweep:
            d["sweep"] = dict(self.sweep)
        if self.compare:
            d["compare"] = dict(self.compare)
        return d

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())


def _drop_none(d):
    if isinstance(d, dict):
        return {k: _drop_none(v) for k, v in d.items() if v is not None}
    return d


def _build(cls, table: dict, where: str):
    if not isinstance(table, dict):
        raise ConfigError(f"{where}: expected a table")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(table) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    try:
        return cls(**table)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _check_sweep(sweep: dict) -> dict:
    unknown = sorted(set(sweep) - set(SWEEP_KEYS))
    if unknown:
        raise ConfigError(f"sweep: unknown key(s) {', '.join(unknown)}; allowed {', '.join(SWEEP_KEYS)}")
    for k, v in sweep.items():
        if not isinstance(v, list):
            raise ConfigError(f"sweep.{k}: expected a list")
    return sweep


COMPARE_OVERRIDES = ("actor_lr", "eta")


def _check_compare(compare: dict) -> dict:
    unknown = sorted(set(compare) - {"algorithms", "actor_steps", "seeds", "overrides"})
    if unknown:
        raise ConfigError(f"compare: unknown key(s) {', '.join(unknown)}")
    algs = compare.get("algorithms", [])
    bad = [a for a in algs if a not in ALGORITHMS]
    if bad:
        raise ConfigError(f"compare.algorithms: unknown algorithm(s) {', '.join(bad)}")
    for alg, table in compare.get("overrides", {}).items():
        if alg not in algs:
            raise ConfigError(f"compare.overrides.{alg}: not among compare.algorithms")
        extra = sorted(set(table) - set(COMPARE_OVERRIDES))
        if extra:
            raise ConfigError(f"compare.overrides.{alg}: unknown key(s) {', '.join(extra)}; "
                              f"allowed {', '.join(COMPARE_OVERRIDES)}")
    if any(not isinstance(m, int) or m < 1 for m in compare.get("actor_steps", [1])):
        raise ConfigError("compare.actor_steps: entries must be positive integers")
    return compare


def from_dict(d: dict, base_dir: Path | None = None) -> ExperimentConfig:
    d = dict(d)
    top = {"seed", "output_dir", "repetitions", "mdp", "run", "sweep", "compare"}
    unknown = sorted(set(d) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(unknown)}")
    try:
        run = DapoConfig.from_dict(d.get("run", {}))
    except ConfigError as exc:
        raise ConfigError(f"run: {exc}") from exc
    mdp = _build(MdpSource, d.get("mdp", {}), "mdp")
    rest = {k: d[k] for k in ("seed", "output_dir", "repetitions") if k in d}
    return ExperimentConfig(run=run, mdp=mdp, sweep=_check_sweep(d.get("sweep", {})),
                            compare=_check_compare(d.get("compare", {})), base_dir=base_dir, **rest)


def loads(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax: {exc}") from exc
    return from_dict(doc, base_dir)


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    return loads(text, path.parent)
