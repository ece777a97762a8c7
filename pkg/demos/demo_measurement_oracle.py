"""The measurement oracle and in-episode time samplers.

Shows the two observation modes (exact-noise and finite-difference), checks
the advertised noise variances empirically, and draws measurement schedules
from each sampler family, including the geometrically weighted grid.

Run:  python demos/demo_measurement_oracle.py
"""

import numpy as np

from ctrlab import MeasurementOracleConfig, SamplerSpec, draw_measurement_times, observe
from ctrlab.environments import make_linear_gaussian
from ctrlab.measurement import observe_batch


def main():
    entry = make_linear_gaussian()
    env = entry.env
    policy = entry.grid.policies[-1]
    q = entry.grid.initial_dists[0]
    cfg = MeasurementOracleConfig(delta=entry.measurement_delta, g_bound=entry.g_bound)

    ms = observe(env, policy, q, t=0.4, config=cfg, seed=1, dt=1 / 64)
    print("one exact-noise measurement:")
    print(f"  t = {ms.t:.2f}  x = {np.round(ms.x, 3)}  y = {np.round(ms.y, 3)}"
          f"  r = {ms.r:+.3f}")

    rng = np.random.default_rng(0)
    ts = rng.uniform(0, env.horizon, size=30_000)
    x, u, y, r = observe_batch(env, policy, q, ts, cfg, seed=2, dt=1 / 64)
    resid = y - np.asarray(env.drift(x, u))
    g_val = float(env.diffusion(x[:1], u[:1]))
    print(f"\nempirical drift-noise variance {resid.var(axis=0).round(4)}"
          f"  (model: {g_val ** 2 / cfg.delta:.4f} per component)")
    b = np.asarray(env.reward(x, u))
    print(f"empirical reward-noise variance {np.var(r - b):.3f}  (model: 1.0)")

    fd = MeasurementOracleConfig(delta=1 / 64, mode="finite_difference",
                                 fd_substeps=32)
    ms_fd = observe(env, policy, q, t=0.4, config=fd, seed=3, dt=1 / 64)
    print(f"\nfinite-difference drift estimate: {np.round(ms_fd.y, 3)}")

    print("\nsampler draws over [0, 1]:")
    for spec in (SamplerSpec("uniform_single"),
                 SamplerSpec("iid_uniform", m=4),
                 SamplerSpec("equidistant", m=4),
                 SamplerSpec("geometric", m=4, lam=6.0)):
        times = draw_measurement_times(spec, 1.0, 5)
        print(f"  {spec.kind:>14}: {np.round(np.sort(times), 3)}")


if __name__ == "__main__":
    main()
