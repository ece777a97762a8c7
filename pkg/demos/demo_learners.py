"""Running the three learners on the linear-Gaussian benchmark.

Compares the every-episode learner with the lazy-update and multi-measurement
variants on one seed each, printing the per-episode suboptimality curve, the
switch bookkeeping, and the rollout accounting.

Run:  python demos/demo_learners.py
"""

import numpy as np

from ctrlab import SamplerSpec, compute_radii
from ctrlab.environments import make_linear_gaussian
from ctrlab.measurement import MeasurementOracleConfig
from ctrlab.planner import exact_optimal
from ctrlab.pure import (
    RunConfig,
    run_pure_base,
    run_pure_low_rollout,
    run_pure_low_switch,
)


def sparkline(values, width=64):
    marks = " .:-=+*#%@"
    step = max(1, len(values) // width)
    vals = [float(np.mean(values[i:i + step])) for i in range(0, len(values), step)]
    top = max(max(vals), 1e-9)
    return "".join(marks[min(int(v / top * (len(marks) - 1)), len(marks) - 1)]
                   for v in vals)


def main():
    entry = make_linear_gaussian()
    n_budget = 256
    dt = entry.env.horizon / 32
    oracle = exact_optimal(entry.env, entry.grid, dt, n_rollouts=4096, seed=0)
    radii = compute_radii(n_budget, 0.1, entry.g_bound,
                          entry.drift_class, entry.reward_class)
    shared = dict(env=entry.env, grid=entry.grid, drift_class=entry.drift_class,
                  reward_class=entry.reward_class, radii=radii, n_budget=n_budget,
                  dt=dt, n_rollouts_plan=8, oracle=oracle, seed=5,
                  measurement=MeasurementOracleConfig(delta=entry.measurement_delta,
                                                      g_bound=entry.g_bound))

    runs = {
        "base": run_pure_base(RunConfig(**shared)),
        "low_switch": run_pure_low_switch(
            RunConfig(**dict(shared, update_rule="trigger_5beta"))),
        "low_rollout(m=4)": run_pure_low_rollout(
            RunConfig(**dict(shared, m=4, sampler=SamplerSpec("equidistant", m=4)))),
    }
    print(f"optimal value {oracle.optimal_value:.3f}; radii "
          f"beta_f={radii.beta_f:.2f} beta_r={radii.beta_r:.2f}\n")
    for name, log in runs.items():
        subs = [ep.suboptimality for ep in log.episodes]
        print(f"{name:>16}: episodes={len(log.episodes):4d} switches={log.switch_count:3d} "
              f"rollouts={log.rollout_count:4d} final={log.final_suboptimality:.3f}")
        print(f"{'':>16}  subopt |{sparkline(subs)}|")


if __name__ == "__main__":
    main()
