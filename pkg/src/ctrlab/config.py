"""Experiment configuration: strict parsing, validation, and RunConfig assembly.

Configs are YAML documents (JSON is a YAML subset and is accepted as the
canonical interchange form).  Unknown keys are rejected at every level so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

import yaml

from .environments import EnvCatalogEntry, make_env
from .function_classes import compute_radii
from .measurement import SAMPLER_KINDS, MeasurementOracleConfig, SamplerSpec
from .planner import exact_optimal
from .pure import ALGORITHMS, RunConfig, ScheduleSpec

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config"]


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the offending key."""


def _require_keys(d: dict, allowed: set, required: set, path: str) -> None:
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected a mapping")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    missing = required - set(d)
    if missing:
        raise ConfigError(f"{path}: missing keys {sorted(missing)}")


def _positive_int(value, path: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < 1:
        raise ConfigError(f"{path}: expected a positive integer, got {value!r}")
    return value


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description, convertible to per-seed RunConfigs."""

    name: str
    env_name: str
    env_params: dict
    algorithm: str
    run: dict
    seeds: tuple
    out: str | None
    raw: dict

    def canonical(self) -> dict:
        doc = {
            "name": self.name,
            "env": {"name": self.env_name, "params": self.env_params},
            "algorithm": self.algorithm,
            "run": dict(self.run),
            "seeds": {"list": [int(s) for s in self.seeds]},
        }
        if self.out is not None:
            doc["out"] = self.out
        return doc

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def build_entry(self) -> EnvCatalogEntry:
        return make_env(self.env_name, self.env_params)

    def build_run_config(self, entry: EnvCatalogEntry | None = None,
                         with_oracle: bool = True) -> RunConfig:
        """Assemble the seed-0 RunConfig; sweeps fan out via dataclasses.replace."""
        entry = entry or self.build_entry()
        run = self.run
        n_budget = run["N"]
        m = run.get("m", 1)
        horizon = entry.env.horizon
        if "dt" in run:
            dt = float(run["dt"])
        else:
            dt = horizon / run.get("steps", 512)
        sampler_cfg = run.get("sampler", {})
        default_kind = "uniform_single" if m == 1 else "iid_uniform"
        sampler = SamplerSpec(
            kind=sampler_cfg.get("kind", default_kind),
            m=m,
            lam=sampler_cfg.get("lam", 1.0),
        )
        meas_cfg = run.get("measurement", {})
        measurement = MeasurementOracleConfig(
            delta=meas_cfg.get("delta", entry.measurement_delta),
            mode=meas_cfg.get("mode", "exact"),
            g_bound=entry.g_bound,
            fd_substeps=meas_cfg.get("fd_substeps", 16),
            reward_noise=meas_cfg.get("reward_noise", True),
        )
        radii = compute_radii(
            n_budget, run.get("delta_conf", 0.1), entry.g_bound,
            entry.drift_class, entry.reward_class,
            c_scale=run.get("c_scale", 1.0),
        )
        schedule = None
        if "schedule" in run:
            sc = run["schedule"]
            schedule = ScheduleSpec(
                b1=sc.get("b1"), eta_base=sc.get("eta_base"),
                batches=tuple(sc["batches"]) if "batches" in sc else None,
            )
        update_rule = {
            "base": "every_episode",
            "low_rollout": "every_episode",
            "low_switch": "trigger_5beta",
            "schedule": "schedule",
        }[self.algorithm]
        config = RunConfig(
            env=entry.env,
            grid=entry.grid,
            drift_class=entry.drift_class,
            reward_class=entry.reward_class,
            radii=radii,
            n_budget=n_budget,
            m=m,
            sampler=sampler,
            update_rule=update_rule,
            schedule=schedule,
            dt=dt,
            n_rollouts_plan=run.get("n_rollouts_plan", 32),
            measurement=measurement,
            oracle=None,
            oracle_rollouts=run.get("oracle_rollouts", 10_000),
            oracle_seed=run.get("oracle_seed", 0),
            seed=self.seeds[0],
        )
        if with_oracle:
            oracle = exact_optimal(entry.env, entry.grid, dt,
                                   n_rollouts=config.oracle_rollouts,
                                   seed=config.oracle_seed)
            config = replace(config, oracle=oracle)
        return config


_TOP_KEYS = {"name", "env", "algorithm", "run", "seeds", "out"}
_RUN_KEYS = {"N", "m", "dt", "steps", "delta_conf", "c_scale", "sampler",
             "schedule", "measurement", "n_rollouts_plan", "oracle_rollouts",
             "oracle_seed"}
_SAMPLER_KEYS = {"kind", "lam"}
_SCHEDULE_KEYS = {"b1", "eta_base", "batches"}
_MEAS_KEYS = {"delta", "mode", "fd_substeps", "reward_noise"}
_SEED_KEYS = {"base", "count", "list"}
_ENV_KEYS = {"name", "params"}


def parse_config(doc: dict, origin: str = "<config>") -> ExperimentConfig:
    _require_keys(doc, _TOP_KEYS, {"name", "env", "algorithm", "run", "seeds"}, origin)
    env = doc["env"]
    _require_keys(env, _ENV_KEYS, {"name"}, f"{origin}:env")
    algorithm = doc["algorithm"]
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"{origin}:algorithm: unknown algorithm {algorithm!r}")
    run = doc["run"]
    _require_keys(run, _RUN_KEYS, {"N"}, f"{origin}:run")
    n_budget = _positive_int(run["N"], f"{origin}:run.N")
    m = run.get("m", 1)
    _positive_int(m, f"{origin}:run.m")
    if algorithm in ("base", "low_switch") and m != 1:
        raise ConfigError(f"{origin}:run.m: {algorithm} requires m = 1")
    if n_budget % m != 0:
        raise ConfigError(f"{origin}:run.m: m must divide N")
    if "dt" in run and "steps" in run:
        raise ConfigError(f"{origin}:run: give dt or steps, not both")
    if "steps" in run:
        _positive_int(run["steps"], f"{origin}:run.steps")
    if "dt" in run and not (isinstance(run["dt"], (int, float)) and run["dt"] > 0):
        raise ConfigError(f"{origin}:run.dt: must be positive")
    dconf = run.get("delta_conf", 0.1)
    if not (0 < dconf < 1):
        raise ConfigError(f"{origin}:run.delta_conf: must lie in (0, 1)")
    if "sampler" in run:
        _require_keys(run["sampler"], _SAMPLER_KEYS, set(), f"{origin}:run.sampler")
        kind = run["sampler"].get("kind", "uniform_single")
        if kind not in SAMPLER_KINDS:
            raise ConfigError(f"{origin}:run.sampler.kind: unknown kind {kind!r}")
        if kind == "uniform_single" and m != 1:
            raise ConfigError(f"{origin}:run.sampler.kind: uniform_single needs m = 1")
    if "schedule" in run:
        _require_keys(run["schedule"], _SCHEDULE_KEYS, set(), f"{origin}:run.schedule")
    if algorithm == "schedule" and "schedule" not in run:
        raise ConfigError(f"{origin}:run.schedule: required for the schedule variant")
    if "measurement" in run:
        _require_keys(run["measurement"], _MEAS_KEYS, set(), f"{origin}:run.measurement")
        mode = run["measurement"].get("mode", "exact")
        if mode not in ("exact", "finite_difference"):
            raise ConfigError(f"{origin}:run.measurement.mode: unknown mode {mode!r}")
        if mode == "finite_difference" and m != 1:
            raise ConfigError(
                f"{origin}:run.measurement.mode: finite_difference needs m = 1")
    seeds_doc = doc["seeds"]
    _require_keys(seeds_doc, _SEED_KEYS, set(), f"{origin}:seeds")
    if "list" in seeds_doc:
        if "base" in seeds_doc or "count" in seeds_doc:
            raise ConfigError(f"{origin}:seeds: give list or (base, count), not both")
        seeds = tuple(int(s) for s in seeds_doc["list"])
        if not seeds:
            raise ConfigError(f"{origin}:seeds.list: must be non-empty")
    else:
        base = seeds_doc.get("base", 0)
        count = _positive_int(seeds_doc.get("count", 1), f"{origin}:seeds.count")
        seeds = tuple(int(base) + i for i in range(count))
    name = doc["name"]
    if not isinstance(name, str) or not name:
        raise ConfigError(f"{origin}:name: must be a non-empty string")
    cfg = ExperimentConfig(
        name=name,
        env_name=env["name"],
        env_params=dict(env.get("params", {})),
        algorithm=algorithm,
        run=dict(run),
        seeds=seeds,
        out=doc.get("out"),
        raw=doc,
    )
    # surface bad factory parameters now, with the config path in the message
    try:
        cfg.build_entry()
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"{origin}:env: {e}") from e
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config: {e}") from e
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark is not None else str(path)
        raise ConfigError(f"{where}: invalid document: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return parse_config(doc, origin=str(path))
