import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctrlab.environments import constant_policy, point_mass
from ctrlab.sde import (
    DynamicsSpec,
    IntegrationBlowupError,
    LipschitzConstants,
    coupled_deviation,
    estimate_return,
    euler_maruyama_step,
    simulate_trajectory,
    trajectory_to_csv,
)


def make_env(drift, diffusion, reward, d=1, horizon=1.0):
    return DynamicsSpec(drift=drift, diffusion=diffusion, reward=reward,
                        horizon=horizon, state_dim=d, control_dim=1)


ZERO_ENV = make_env(lambda x, u: 0.0 * x, lambda x, u: 0.0, lambda x, u: 0.0)


class TestEulerMaruyamaStep:
    def test_zero_drift_zero_diffusion_identity(self):
        x = np.array([0.7, -1.2])
        out = euler_maruyama_step(x, np.array([0.0]),
                                  lambda x, u: 0.0 * x, lambda x, u: 0.0,
                                  0.1, np.array([0.3, -0.4]))
        np.testing.assert_array_equal(out, x)

    def test_mean_reverting_hand_value(self):
        # x + f dt + g dw = 1 - 0.1 + sqrt(2) * 0.2
        out = euler_maruyama_step(np.array([1.0]), np.array([0.0]),
                                  lambda x, u: -x, lambda x, u: math.sqrt(2.0),
                                  0.1, np.array([0.2]))
        assert out[0] == pytest.approx(1.0 - 0.1 + math.sqrt(2.0) * 0.2, abs=1e-12)

    def test_constant_drift_recovers_linear_flow(self):
        c = 0.37
        x = np.array([0.0])
        for _ in range(10):
            x = euler_maruyama_step(x, np.array([0.0]),
                                    lambda x, u: c + 0.0 * x, lambda x, u: 0.0,
                                    0.05, np.zeros(1))
        assert x[0] == pytest.approx(c * 10 * 0.05, abs=1e-12)

    def test_nonfinite_raises_with_index(self):
        with pytest.raises(IntegrationBlowupError) as err:
            euler_maruyama_step(np.array([1e308]), np.array([0.0]),
                                lambda x, u: x * 1e10, lambda x, u: 0.0,
                                1.0, np.zeros(1), step_index=17)
        assert err.value.step_index == 17

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ValueError):
            euler_maruyama_step(np.zeros(1), np.zeros(1),
                                lambda x, u: x, lambda x, u: 0.0, 0.0, np.zeros(1))


class TestSimulateTrajectory:
    def test_deterministic_env_ignores_seed(self):
        env = make_env(lambda x, u: -x, lambda x, u: 0.0, lambda x, u: 0.0)
        pol = constant_policy(0.0, 0)
        q = point_mass([1.0], 0)
        t1 = simulate_trajectory(env, pol, q, 1 / 64, seed=1)
        t2 = simulate_trajectory(env, pol, q, 1 / 64, seed=2)
        np.testing.assert_array_equal(t1.states, t2.states)

    def test_seeded_determinism_bit_exact(self):
        env = make_env(lambda x, u: -x, lambda x, u: 0.5, lambda x, u: 0.0)
        pol = constant_policy(0.0, 0)
        q = point_mass([1.0], 0)
        t1 = simulate_trajectory(env, pol, q, 1 / 64, seed=5)
        t2 = simulate_trajectory(env, pol, q, 1 / 64, seed=5)
        np.testing.assert_array_equal(t1.states, t2.states)
        np.testing.assert_array_equal(t1.wiener_path, t2.wiener_path)

    def test_grid_must_divide_horizon(self):
        env = make_env(lambda x, u: 0 * x, lambda x, u: 0.0, lambda x, u: 0.0)
        with pytest.raises(ValueError, match="divide"):
            simulate_trajectory(env, constant_policy(0.0, 0), point_mass([0.0], 0),
                                0.3, seed=0)

    def test_wiener_increment_statistics(self):
        env = make_env(lambda x, u: 0 * x, lambda x, u: 1.0, lambda x, u: 0.0)
        pol = constant_policy(0.0, 0)
        q = point_mass([0.0], 0)
        dt = 1 / 128
        incs = np.concatenate([
            simulate_trajectory(env, pol, q, dt, seed=s).wiener_path.ravel()
            for s in range(800)
        ])
        n = len(incs)
        assert n >= 100_000
        sigma = math.sqrt(dt)
        assert abs(incs.mean()) < 4 * sigma / math.sqrt(n)
        assert abs(incs.var() / dt - 1.0) < 0.10

    def test_ou_terminal_second_moment_matches_closed_form(self):
        # E[x(T)^2] for dx = -u x dt + sqrt(2) dw from 0 is (1/u)(1 - e^{-2uT})
        u = 1.0
        env = make_env(lambda x, u_: -np.asarray(u_) * x,
                       lambda x, u_: math.sqrt(2.0), lambda x, u_: 0.0)
        pol = constant_policy(u, 0)
        q = point_mass([0.0], 0)
        dt = 1 / 128
        vals = np.array([
            simulate_trajectory(env, pol, q, dt, seed=s).states[-1, 0] ** 2
            for s in range(4000)
        ])
        truth = (1 - math.exp(-2 * u)) / u
        stderr = vals.std(ddof=1) / math.sqrt(len(vals))
        assert abs(vals.mean() - truth) < 3 * stderr + 0.02  # dt bias allowance

    def test_weak_error_halves_with_dt_on_deterministic_env(self):
        # closed-form exponential flow of dx = -x dt as the oracle
        env = make_env(lambda x, u: -x, lambda x, u: 0.0, lambda x, u: 0.0)
        pol = constant_policy(0.0, 0)
        q = point_mass([1.0], 0)
        errs = []
        for dt in (1 / 64, 1 / 128):
            end = simulate_trajectory(env, pol, q, dt, seed=0).states[-1, 0]
            errs.append(abs(end - math.exp(-1.0)))
        ratio = errs[0] / errs[1]
        assert 1.8 < ratio < 2.2


class TestEstimateReturn:
    def test_constant_reward_returns_horizon_exactly(self):
        env = make_env(lambda x, u: -x, lambda x, u: 0.7, lambda x, u: 1.0)
        val = estimate_return(env, constant_policy(0.0, 0), point_mass([0.3], 0),
                              1 / 32, 16, seed=3)
        assert val == pytest.approx(env.horizon, abs=1e-12)

    def test_zero_reward_returns_zero(self):
        env = make_env(lambda x, u: -x, lambda x, u: 0.7, lambda x, u: 0.0)
        val = estimate_return(env, constant_policy(0.0, 0), point_mass([0.3], 0),
                              1 / 32, 16, seed=3)
        assert val == 0.0

    @pytest.mark.parametrize("dt", [1 / 8, 1 / 32, 1 / 128])
    def test_unit_drift_state_reward_riemann_sum(self, dt):
        # deterministic x(t) = t, b = x: left sum of t dt is 0.5 - dt/2
        env = make_env(lambda x, u: np.ones_like(x), lambda x, u: 0.0,
                       lambda x, u: np.asarray(x)[..., 0])
        val = estimate_return(env, constant_policy(0.0, 0), point_mass([0.0], 0),
                              dt, 1, seed=0)
        assert abs(val - 0.5) <= dt / 2 + 1e-12
        assert val == pytest.approx(0.5 - dt / 2, abs=1e-12)

    @given(alpha=st.floats(-4.0, 4.0, allow_nan=False))
    @settings(max_examples=20, deadline=None, derandomize=True)
    def test_return_linear_in_reward(self, alpha):
        base = make_env(lambda x, u: -x, lambda x, u: 0.5,
                        lambda x, u: np.asarray(x)[..., 0])
        scaled = make_env(lambda x, u: -x, lambda x, u: 0.5,
                          lambda x, u: alpha * np.asarray(x)[..., 0])
        v1 = estimate_return(base, constant_policy(0.0, 0), point_mass([1.0], 0),
                             1 / 32, 8, seed=11)
        v2 = estimate_return(scaled, constant_policy(0.0, 0), point_mass([1.0], 0),
                             1 / 32, 8, seed=11)
        assert v2 == pytest.approx(alpha * v1, abs=1e-12)

    def test_blowup_propagates(self):
        env = make_env(lambda x, u: x * 50.0, lambda x, u: 0.0, lambda x, u: 0.0)
        with pytest.raises(IntegrationBlowupError):
            estimate_return(env, constant_policy(0.0, 0), point_mass([1e300], 0),
                            1 / 16, 2, seed=0)


class TestCoupledDeviation:
    def test_exponential_envelope_holds(self):
        rate = 1.0
        env = DynamicsSpec(
            drift=lambda x, u: -rate * x,
            diffusion=lambda x, u: math.sqrt(2.0),
            reward=lambda x, u: 0.0,
            horizon=1.0, state_dim=1, control_dim=1,
            lipschitz=LipschitzConstants(l_f=rate, l_b=1.0, l_g=0.0, l_pi=0.0),
        )
        res = coupled_deviation(env, constant_policy(rate, 0), point_mass([0.0], 0),
                                lambda x, u: -rate * x + 0.2,
                                1 / 128, 2000, seed=9, t_checks=(0.25, 0.5, 1.0))
        k_const = env.lipschitz.growth_rate_dim(1)
        for t, lhs, gap in zip(res["t"], res["lhs"], res["gap_integral"]):
            assert lhs <= 3.0 * 2.0 * math.exp(k_const * t) * gap

    def test_constant_shift_gap_integral(self):
        # ||f_hat - f||^2 = 0.04 along any path, so the integral is 0.04 t
        env = make_env(lambda x, u: -x, lambda x, u: 1.0, lambda x, u: 0.0)
        res = coupled_deviation(env, constant_policy(0.0, 0), point_mass([0.0], 0),
                                lambda x, u: -x + 0.2, 1 / 64, 100, seed=1,
                                t_checks=(0.5, 1.0))
        assert res["gap_integral"][0] == pytest.approx(0.04 * 0.5, rel=1e-9)
        assert res["gap_integral"][1] == pytest.approx(0.04 * 1.0, rel=1e-9)


class TestLipschitzConstants:
    def test_growth_rate_formula(self):
        lc = LipschitzConstants(l_f=2.0, l_b=1.0, l_g=0.5, l_pi=1.0)
        assert lc.growth_rate == pytest.approx(1 + 4 * 0.25 + 2 * 4 * 4)
        assert lc.growth_rate_dim(3) == pytest.approx(1 + 3 * 4 * 0.25 + 2 * 4 * 4)
        assert lc.reward_rate == pytest.approx(2.0)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            LipschitzConstants(l_f=-1.0)


def test_trajectory_csv_round_trip(tmp_path):
    env = make_env(lambda x, u: -x, lambda x, u: 0.5, lambda x, u: 0.0, d=1)
    traj = simulate_trajectory(env, constant_policy(0.3, 0), point_mass([1.0], 0),
                               1 / 16, seed=4)
    path = tmp_path / "traj.csv"
    trajectory_to_csv(traj, path)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "t,x_0,u_0"
    assert len(rows) == len(traj.times) + 1
    got = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    np.testing.assert_array_equal(got[:, 0], traj.times)
    np.testing.assert_array_equal(got[:, 1], traj.states[:, 0])
