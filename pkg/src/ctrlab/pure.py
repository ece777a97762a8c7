"""Drivers for the optimistic confidence-set learners.

Four update disciplines over one shared episode loop:

* ``run_pure_base``        -- one uniformly-timed measurement per episode,
                              confidence sets rebuilt every episode.
* ``run_pure_low_switch``  -- sets carried over and rebuilt only when the
                              retained candidate's empirical loss exceeds the
                              running minimum by five radii.
* ``run_pure_low_rollout`` -- m measurements per episode drawn from a
                              configurable sampler, all observed on a single
                              trajectory; N/m episodes in total.
* ``run_schedule_variant`` -- sets rebuilt only at geometric batch
                              boundaries.

All drivers emit the same :class:`RunLog`, log per-episode suboptimality
against a precomputed exact-optimum oracle, and are bit-reproducible from
(config, seed).  With m = 1 and the single-uniform-time sampler the
low-rollout loop consumes randomness identically to the base loop, so the
two produce the same log for the same seed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .function_classes import (
    ConfidenceRadii,
    Dataset,
    FiniteClass,
    confidence_set,
    empirical_loss_drift,
    empirical_loss_reward,
    finite_losses,
)
from .measurement import (
    MeasurementOracleConfig,
    SamplerSpec,
    draw_measurement_times,
    observe_on_path,
)
from .planner import (
    CandidateGrid,
    OptimalityOracle,
    PlannerStarvationError,
    exact_optimal,
    optimistic_plan,
)
from .sde import (
    DynamicsSpec,
    TAG_OBS,
    TAG_PICK,
    TAG_PLAN,
    TAG_TIME,
    substream,
)

__all__ = [
    "RunConfig",
    "ScheduleSpec",
    "EpisodeRecord",
    "RunLog",
    "run_pure_base",
    "run_pure_low_switch",
    "run_pure_low_rollout",
    "run_schedule_variant",
    "run_algorithm",
    "ALGORITHMS",
    "schedule_batches",
]

UPDATE_RULES = ("every_episode", "trigger_5beta", "schedule")


@dataclass(frozen=True)
class ScheduleSpec:
    """Batch-boundary schedule in episodes.

    Either geometric from (b1, eta_base), with the final batch truncated so
    the cumulative sizes land exactly on the episode budget, or an explicit
    ``batches`` tuple that must sum to the budget exactly.
    """

    b1: int | None = None
    eta_base: float | None = None
    batches: tuple | None = None

    def resolve(self, episodes: int) -> tuple[int, ...]:
        if self.batches is not None:
            batches = tuple(int(b) for b in self.batches)
            if any(b < 1 for b in batches):
                raise ValueError("schedule batches must be positive")
            if sum(batches) != episodes:
                raise ValueError(
                    f"schedule batches sum to {sum(batches)}, needs {episodes}")
            return batches
        if self.b1 is None or self.eta_base is None:
            raise ValueError("schedule needs (b1, eta_base) or explicit batches")
        return schedule_batches(self.b1, self.eta_base, episodes)


def schedule_batches(b1: int, eta_base: float, episodes: int) -> tuple[int, ...]:
    """Geometric batches b1, b1*eta, ... truncated to land on the budget."""
    if b1 < 1 or eta_base < 1:
        raise ValueError("need b1 >= 1 and eta_base >= 1")
    out: list[int] = []
    size = float(b1)
    total = 0
    while total < episodes:
        step = max(1, int(round(size)))
        if total + step > episodes:
            step = episodes - total
        out.append(step)
        total += step
        new_size = size * eta_base
        if new_size == size and total < episodes:
            raise ValueError("schedule cannot reach the episode budget")
        size = new_size
    return tuple(out)


@dataclass(frozen=True)
class RunConfig:
    """Everything one run needs; immutable so sweeps fan out with `replace`."""

    env: DynamicsSpec
    grid: CandidateGrid
    drift_class: FiniteClass
    reward_class: FiniteClass
    radii: ConfidenceRadii
    n_budget: int
    m: int = 1
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    update_rule: str = "every_episode"
    schedule: ScheduleSpec | None = None
    dt: float | None = None
    n_rollouts_plan: int = 32
    measurement: MeasurementOracleConfig | None = None
    oracle: OptimalityOracle | None = None
    oracle_rollouts: int = 10_000
    oracle_seed: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.n_budget < 1:
            raise ValueError("n_budget must be >= 1")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.update_rule not in UPDATE_RULES:
            raise ValueError(f"unknown update rule {self.update_rule!r}")
        if self.sampler.m != self.m:
            raise ValueError("sampler.m must equal m")

    @property
    def effective_dt(self) -> float:
        return self.env.horizon / 512 if self.dt is None else self.dt

    def effective_measurement(self) -> MeasurementOracleConfig:
        return self.measurement if self.measurement is not None \
            else MeasurementOracleConfig(delta=0.1)


@dataclass(frozen=True)
class EpisodeRecord:
    episode: int
    policy_id: int
    q_id: int
    f_index: int
    b_index: int
    value: float
    switched_f: bool
    switched_r: bool
    measurements: int
    suboptimality: float
    truth_in_f: bool | None
    truth_in_r: bool | None


@dataclass
class RunLog:
    """Uniform per-run record emitted by every algorithm variant."""

    algorithm: str
    seed: int
    episodes: list[EpisodeRecord]
    switch_count: int
    rollout_count: int
    measurement_count: int
    final_episode: int
    final_policy_id: int
    final_q_id: int
    final_suboptimality: float
    noiseless: bool = False

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "seed": self.seed,
            "noiseless": self.noiseless,
            "totals": {
                "switch_count": self.switch_count,
                "rollout_count": self.rollout_count,
                "measurement_count": self.measurement_count,
            },
            "final_choice": {
                "episode": self.final_episode,
                "policy_id": self.final_policy_id,
                "q_id": self.final_q_id,
                "suboptimality": self.final_suboptimality,
            },
            "episodes": [
                {
                    "episode": e.episode,
                    "policy_id": e.policy_id,
                    "q_id": e.q_id,
                    "f_index": e.f_index,
                    "b_index": e.b_index,
                    "value": e.value,
                    "switched_f": e.switched_f,
                    "switched_r": e.switched_r,
                    "measurements": e.measurements,
                    "suboptimality": e.suboptimality,
                    "truth_in_f": e.truth_in_f,
                    "truth_in_r": e.truth_in_r,
                }
                for e in self.episodes
            ],
        }

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    def to_csv(self, path_or_buf) -> None:
        """Per-episode rows: episode,subopt,switchF,switchR,meas,rollouts."""

        def _write(fh):
            w = csv.writer(fh)
            w.writerow(["episode", "subopt", "switchF", "switchR", "meas", "rollouts"])
            for e in self.episodes:
                w.writerow([e.episode, repr(e.suboptimality),
                            int(e.switched_f), int(e.switched_r),
                            e.measurements, 1])

        if isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__"):
            with open(path_or_buf, "w", newline="") as fh:
                _write(fh)
        else:
            _write(path_or_buf)

    @property
    def coverage_ok(self) -> bool | None:
        """True when the designated truths stayed in both sets every episode."""
        flags = [(e.truth_in_f, e.truth_in_r) for e in self.episodes]
        if any(f is None or r is None for f, r in flags):
            return None
        return all(f and r for f, r in flags)

    def mean_suboptimality(self) -> float:
        return float(np.mean([e.suboptimality for e in self.episodes]))


def _derived_seed(seed: int, tag: int, episode: int) -> int:
    return int(substream(seed, tag, episode).integers(0, 2**63 - 1))


def _run_engine(config: RunConfig, algorithm: str) -> RunLog:
    env = config.env
    dt = config.effective_dt
    mconfig = config.effective_measurement()
    m = config.m
    if config.n_budget % m != 0:
        raise ValueError("m must divide N")
    episodes = config.n_budget // m
    seed = config.seed

    oracle = config.oracle
    if oracle is None:
        oracle = exact_optimal(env, config.grid, dt,
                               n_rollouts=config.oracle_rollouts,
                               seed=config.oracle_seed)

    boundaries: set[int] = set()
    if config.update_rule == "schedule":
        if config.schedule is None:
            raise ValueError("schedule update rule needs a ScheduleSpec")
        acc = 0
        for b in config.schedule.resolve(episodes):
            acc += b
            boundaries.add(acc)

    data = Dataset()
    f_set = confidence_set(config.drift_class, data, config.radii.beta_f)
    r_set = confidence_set(config.reward_class, data, config.radii.beta_r)
    truth_f = config.drift_class.truth_index
    truth_r = config.reward_class.truth_index

    choice = None
    need_plan = True
    records: list[EpisodeRecord] = []
    for n in range(1, episodes + 1):
        truth_in_f = (truth_f in f_set.indices) if truth_f is not None else None
        truth_in_r = (truth_r in r_set.indices) if truth_r is not None else None
        if need_plan:
            try:
                choice = optimistic_plan(
                    env, config.grid,
                    f_members=f_set.members, b_members=r_set.members,
                    dt=dt, n_rollouts=config.n_rollouts_plan,
                    seed=_derived_seed(seed, TAG_PLAN, n),
                    f_indices=f_set.indices, b_indices=r_set.indices,
                )
            except PlannerStarvationError as e:
                raise PlannerStarvationError(f"episode {n}: {e}") from e
            need_plan = config.update_rule == "every_episode"

        policy = next(p for p in config.grid.policies if p.id == choice.policy_id)
        q = next(d for d in config.grid.initial_dists if d.id == choice.q_id)
        times = np.sort(draw_measurement_times(
            config.sampler, env.horizon, substream(seed, TAG_TIME, n)))
        ms = observe_on_path(env, policy, q, times, mconfig,
                             substream(seed, TAG_OBS, n), dt=dt, episode=n)
        data.extend(ms)

        switched_f = switched_r = False
        if config.update_rule == "every_episode":
            f_set = confidence_set(config.drift_class, data, config.radii.beta_f)
            r_set = confidence_set(config.reward_class, data, config.radii.beta_r)
            switched_f = switched_r = True
        elif config.update_rule == "trigger_5beta":
            f_min = float(finite_losses(config.drift_class, data).min())
            if empirical_loss_drift(choice.f, data) >= f_min + 5.0 * config.radii.beta_f:
                f_set = confidence_set(config.drift_class, data, config.radii.beta_f)
                switched_f = True
            r_min = float(finite_losses(config.reward_class, data).min())
            if empirical_loss_reward(choice.b, data) >= r_min + 5.0 * config.radii.beta_r:
                r_set = confidence_set(config.reward_class, data, config.radii.beta_r)
                switched_r = True
            need_plan = switched_f or switched_r
        else:  # schedule
            if n in boundaries:
                f_set = confidence_set(config.drift_class, data, config.radii.beta_f)
                r_set = confidence_set(config.reward_class, data, config.radii.beta_r)
                switched_f = switched_r = True
                need_plan = True

        records.append(EpisodeRecord(
            episode=n,
            policy_id=choice.policy_id,
            q_id=choice.q_id,
            f_index=choice.f_index,
            b_index=choice.b_index,
            value=choice.value,
            switched_f=switched_f,
            switched_r=switched_r,
            measurements=m,
            suboptimality=oracle.suboptimality(choice.policy_id, choice.q_id),
            truth_in_f=truth_in_f,
            truth_in_r=truth_in_r,
        ))

    pick = int(substream(seed, TAG_PICK).integers(0, episodes))
    final = records[pick]
    return RunLog(
        algorithm=algorithm,
        seed=seed,
        episodes=records,
        switch_count=sum(1 for e in records if e.switched_f or e.switched_r),
        rollout_count=episodes,
        measurement_count=episodes * m,
        final_episode=final.episode,
        final_policy_id=final.policy_id,
        final_q_id=final.q_id,
        final_suboptimality=final.suboptimality,
        noiseless=not mconfig.reward_noise,
    )


def run_pure_base(config: RunConfig) -> RunLog:
    """One uniform measurement per episode, sets rebuilt every episode."""
    if config.m != 1:
        raise ValueError("base variant requires m = 1")
    if config.update_rule != "every_episode":
        raise ValueError("base variant requires the every-episode update rule")
    if config.sampler.kind != "uniform_single":
        raise ValueError("base variant samples one uniform time per episode")
    return _run_engine(config, "base")


def run_pure_low_switch(config: RunConfig) -> RunLog:
    """Lazy updates: rebuild a set only when its retained candidate misfits.

    The plan (policy, q, drift, reward) is retained between rebuilds, so the
    logged switch count equals the number of episodes whose trailing check
    rebuilt at least one set.
    """
    if config.m != 1:
        raise ValueError("low-switch variant requires m = 1")
    if config.update_rule != "trigger_5beta":
        raise ValueError("low-switch variant requires the trigger update rule")
    if config.sampler.kind != "uniform_single":
        raise ValueError("low-switch variant samples one uniform time per episode")
    return _run_engine(config, "low_switch")


def run_pure_low_rollout(config: RunConfig) -> RunLog:
    """m measurements per rollout from the configured sampler; N/m episodes."""
    if config.n_budget % config.m != 0:
        raise ValueError("m must divide N")
    if config.update_rule != "every_episode":
        raise ValueError("low-rollout variant rebuilds sets every episode")
    return _run_engine(config, "low_rollout")


def run_schedule_variant(config: RunConfig) -> RunLog:
    """Sets rebuilt only at batch boundaries of a geometric schedule."""
    if config.update_rule != "schedule":
        raise ValueError("schedule variant requires the schedule update rule")
    return _run_engine(config, "schedule")


ALGORITHMS = {
    "base": run_pure_base,
    "low_switch": run_pure_low_switch,
    "low_rollout": run_pure_low_rollout,
    "schedule": run_schedule_variant,
}


def run_algorithm(name: str, config: RunConfig) -> RunLog:
    if name not in ALGORITHMS:
        raise KeyError(f"unknown algorithm {name!r}; known: {sorted(ALGORITHMS)}")
    return ALGORITHMS[name](config)
