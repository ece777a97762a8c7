import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctrlab.environments import constant_policy, make_ou, point_mass
from ctrlab.function_classes import FiniteClass
from ctrlab.measurement import (
    DegenerateConditionalError,
    MeasurementOracleConfig,
    OutOfHorizonError,
    SamplerSpec,
    draw_measurement_times,
    estimate_independency_coefficient,
    measurements_to_csv,
    observe,
    observe_batch,
    observe_on_path,
    ou_conditional_second_moment,
    ou_second_moment,
    ou_second_moment_averaged,
)
from ctrlab.sde import DynamicsSpec, substream


def env_of(drift, diffusion, reward, d=1, horizon=1.0):
    return DynamicsSpec(drift=drift, diffusion=diffusion, reward=reward,
                        horizon=horizon, state_dim=d, control_dim=1)


class TestObserve:
    def test_zero_diffusion_gives_exact_drift_and_unit_reward_noise(self):
        env = env_of(lambda x, u: -x, lambda x, u: 0.0,
                     lambda x, u: 0.3 + 0.0 * np.asarray(x)[..., 0])
        cfg = MeasurementOracleConfig(delta=0.1)
        pol = constant_policy(0.0, 0)
        q = point_mass([1.0], 0)
        rs = []
        for s in range(40):
            ms = observe(env, pol, q, 0.5, cfg, seed=s, dt=1 / 64)
            np.testing.assert_allclose(ms.y, env.drift(ms.x[None], ms.u[None])[0],
                                       atol=1e-12)
            rs.append(ms.r - 0.3)
        # variance-1 reward noise, coarse check at n = 40
        assert 0.3 < np.var(rs) < 3.0

    def test_reward_noise_variance_batch(self):
        env = env_of(lambda x, u: 0.0 * x, lambda x, u: 0.0, lambda x, u: 0.5)
        cfg = MeasurementOracleConfig(delta=0.1)
        ts = np.full(100_000, 0.5)
        _, _, _, r = observe_batch(env, constant_policy(0.0, 0), point_mass([0.0], 0),
                                   ts, cfg, seed=3, dt=1 / 16)
        assert abs(np.var(r - 0.5) - 1.0) < 0.02

    def test_drift_noise_variance_matches_model(self):
        c = 0.7
        env = env_of(lambda x, u: 0.0 * x, lambda x, u: c, lambda x, u: 0.0, d=2)
        cfg = MeasurementOracleConfig(delta=0.2)
        ts = np.full(100_000, 0.25)
        x, u, y, _ = observe_batch(env, constant_policy(0.0, 0),
                                   point_mass([0.0, 0.0], 0), ts, cfg, seed=4, dt=1 / 16)
        resid = y - np.asarray(env.drift(x, u))
        target = c**2 / cfg.delta
        assert np.all(np.abs(resid.var(axis=0) / target - 1.0) < 0.02)

    def test_finite_difference_bias_first_order(self):
        # drift varies along the flow: x' = -x, so (x(t+D) - x(t))/D has bias ~ D/2
        env = env_of(lambda x, u: -x, lambda x, u: 0.0, lambda x, u: 0.0)
        pol = constant_policy(0.0, 0)
        q = point_mass([1.0], 0)
        biases = []
        for delta in (0.02, 0.01):
            cfg = MeasurementOracleConfig(delta=delta, mode="finite_difference",
                                          fd_substeps=64)
            ms = observe(env, pol, q, 0.5, cfg, seed=0, dt=0.02)
            truth = env.drift(ms.x[None], ms.u[None])[0]
            biases.append(float(np.linalg.norm(ms.y - truth)))
        ratio = biases[0] / biases[1]
        assert 1.8 < ratio < 2.2

    def test_finite_difference_out_of_horizon(self):
        env = env_of(lambda x, u: -x, lambda x, u: 0.0, lambda x, u: 0.0)
        cfg = MeasurementOracleConfig(delta=0.01, mode="finite_difference")
        with pytest.raises(OutOfHorizonError):
            observe(env, constant_policy(0.0, 0), point_mass([1.0], 0),
                    0.995, cfg, seed=0, dt=0.01)

    def test_finite_difference_requires_delta_below_grid(self):
        env = env_of(lambda x, u: -x, lambda x, u: 0.0, lambda x, u: 0.0)
        cfg = MeasurementOracleConfig(delta=0.5, mode="finite_difference")
        with pytest.raises(ValueError, match="delta"):
            observe(env, constant_policy(0.0, 0), point_mass([1.0], 0),
                    0.2, cfg, seed=0, dt=0.1)

    def test_times_must_be_sorted_on_shared_path(self):
        env = env_of(lambda x, u: -x, lambda x, u: 0.0, lambda x, u: 0.0)
        cfg = MeasurementOracleConfig(delta=0.1)
        with pytest.raises(ValueError, match="sorted"):
            observe_on_path(env, constant_policy(0.0, 0), point_mass([1.0], 0),
                            np.array([0.5, 0.2]), cfg, substream(0, 1), dt=1 / 32)

    def test_measurement_csv(self):
        env = env_of(lambda x, u: -x, lambda x, u: 0.0, lambda x, u: 0.0)
        cfg = MeasurementOracleConfig(delta=0.1)
        ms = observe_on_path(env, constant_policy(0.0, 0), point_mass([1.0], 0),
                             np.array([0.25, 0.75]), cfg, substream(0, 1),
                             dt=1 / 32, episode=3)
        buf = io.StringIO()
        measurements_to_csv(ms, buf)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0] == "episode,t,x_0,u_0,y_0,r"
        assert len(lines) == 3
        assert lines[1].startswith("3,")


class TestSamplers:
    def test_equidistant_grid(self):
        ts = draw_measurement_times(SamplerSpec("equidistant", m=4), 1.0, 0)
        np.testing.assert_allclose(ts, [0.25, 0.5, 0.75, 1.0])

    def test_geometric_terminal_frequency(self):
        # weights 6, 36, 216, 1296 over the 4-point grid: P(T) = 1296/1554
        spec = SamplerSpec("geometric", m=4, lam=6.0)
        rng = substream(12, 1)
        draws = np.concatenate([draw_measurement_times(spec, 1.0, rng)
                                for _ in range(25_000)])
        freq = np.mean(draws == 1.0)
        assert abs(freq - 1296 / 1554) < 0.01

    def test_geometric_lam_one_is_uniform_grid(self):
        spec = SamplerSpec("geometric", m=5, lam=1.0)
        rng = substream(13, 1)
        draws = np.concatenate([draw_measurement_times(spec, 1.0, rng)
                                for _ in range(20_000)])
        for i in range(1, 6):
            assert abs(np.mean(np.isclose(draws, i / 5)) - 0.2) < 0.012

    def test_uniform_single_requires_m1(self):
        with pytest.raises(ValueError):
            SamplerSpec("uniform_single", m=2)

    @given(kind=st.sampled_from(["uniform_single", "iid_uniform", "equidistant",
                                 "geometric"]),
           m=st.integers(1, 8), seed=st.integers(0, 1000))
    @settings(max_examples=40, deadline=None, derandomize=True)
    def test_times_in_range_and_deterministic(self, kind, m, seed):
        if kind == "uniform_single":
            m = 1
        spec = SamplerSpec(kind, m=m, lam=2.0)
        t1 = draw_measurement_times(spec, 1.5, seed)
        t2 = draw_measurement_times(spec, 1.5, seed)
        np.testing.assert_array_equal(t1, t2)
        assert len(t1) == m
        assert np.all(t1 >= 0.0) and np.all(t1 <= 1.5)


class TestClosedFormMoments:
    def test_pointwise(self):
        assert ou_second_moment(1.0, 1.0) == pytest.approx(1 - math.exp(-2))

    def test_stationary_limit_is_inverse_rate(self):
        assert ou_second_moment(2.0, 1e6) == pytest.approx(0.5)

    def test_time_average_hand_value(self):
        assert ou_second_moment_averaged(1.0, 1.0) == pytest.approx(
            1 - 0.5 * (1 - math.exp(-2)))

    def test_conditional_from_origin(self):
        m = 4
        got = ou_conditional_second_moment(1.0, 1.0 / m, 0.0)
        assert got == pytest.approx((1 - math.exp(-2 / m)) / 1.0)

    def test_conditional_general_start(self):
        u, gap, z = 1.5, 0.25, -0.8
        want = (z * math.exp(-u * gap)) ** 2 + (1 - math.exp(-2 * u * gap)) / u
        assert ou_conditional_second_moment(u, gap, z) == pytest.approx(want)

    def test_rejects_nonpositive_rate(self):
        for fn in (lambda: ou_second_moment(0.0, 1.0),
                   lambda: ou_second_moment_averaged(-1.0, 1.0),
                   lambda: ou_conditional_second_moment(0.0, 0.1, 0.0)):
            with pytest.raises(ValueError):
                fn()

    def test_simulated_marginal_matches_closed_form(self):
        entry = make_ou(q_points=(0.0,))
        pol = constant_policy(1.0, 0)
        q = point_mass([0.0], 0)
        cfg = MeasurementOracleConfig(delta=0.1)
        ts = np.full(20_000, 0.6)
        x, _, _, _ = observe_batch(entry.env, pol, q, ts, cfg, seed=8, dt=1 / 128)
        truth = ou_second_moment(1.0, 0.6)
        stderr = (x[:, 0] ** 2).std(ddof=1) / math.sqrt(len(x))
        assert abs((x[:, 0] ** 2).mean() - truth) < 3 * stderr + 0.01

    def test_simulated_conditional_matches_transition_formula(self):
        entry = make_ou(q_points=(0.0,))
        pol = constant_policy(1.0, 0)
        cfg = MeasurementOracleConfig(delta=0.1)
        z_prev, gap = -0.7, 0.25
        rng = substream(21, 5)
        from ctrlab.measurement import states_at_times
        x, _ = states_at_times(entry.env, pol, point_mass([z_prev], 0),
                               np.full(20_000, gap), rng, 1 / 128)
        truth = ou_conditional_second_moment(1.0, gap, z_prev)
        stderr = (x[:, 0] ** 2).std(ddof=1) / math.sqrt(len(x))
        assert abs((x[:, 0] ** 2).mean() - truth) < 3 * stderr + 0.01


class TestIndependencyCoefficient:
    def test_singleton_drift_class_ratio_one(self):
        entry = make_ou(q_points=(0.0,))
        qs = (point_mass([0.0], 0),)
        est = estimate_independency_coefficient(
            entry.env, entry.grid.policies[:1], qs,
            entry.drift_class, entry.drift_class,  # both singleton-equivalent h = 0
            SamplerSpec("equidistant", m=2), m=2, mc_samples=64, seed=0,
            n_prefixes=4, dt=1 / 64)
        assert est.per_kind["drift"] == 1.0

    def test_ou_equidistant_respects_bound(self):
        u_min = 1.0
        entry = make_ou(u_min=u_min, u_max=2.0, n_controls=2, q_points=(0.0,))
        qs = (point_mass([0.0], 0),)
        m = 2
        est = estimate_independency_coefficient(
            entry.env, entry.grid.policies, qs,
            entry.drift_class, entry.reward_class,
            SamplerSpec("equidistant", m=m), m=m, mc_samples=1024, seed=5,
            n_prefixes=12, dt=1 / 128)
        bound = 1 + m / (2 * entry.env.horizon * u_min)
        assert est.value <= bound + 3 * est.stderr
        assert est.value >= 1.0
        assert len(est.per_index) == m

    def test_degenerate_conditional_raises(self):
        # strongly contracting deterministic flow: the state at the first
        # equidistant time is numerically zero while the time-uniform marginal
        # is not, so the conditional expectation vanishes under a live numerator
        env = env_of(lambda x, u: -50.0 * x, lambda x, u: 0.0, lambda x, u: 0.0)
        members = (lambda x, u: 0.0 * np.asarray(x)[..., 0],
                   lambda x, u: np.asarray(x)[..., 0])
        cls = FiniteClass(members, "reward", truth_index=0)
        drift_cls = FiniteClass((env.drift,), "drift", truth_index=0)
        with pytest.raises(DegenerateConditionalError):
            estimate_independency_coefficient(
                env, (constant_policy(0.0, 0),), (point_mass([1.0], 0),),
                drift_cls, cls, SamplerSpec("equidistant", m=2), m=2,
                mc_samples=32, seed=0, n_prefixes=2, dt=1 / 64)
