"""Controlled Ito SDE representation, fixed-step Euler-Maruyama integration,
and Monte-Carlo estimation of the accumulated-reward functional.

The dynamics are

    dx(t) = f(x(t), u(t)) dt + g(x(t), u(t)) dw(t),      u(t) = pi(x(t)),

with a vector drift f, a scalar diffusion g multiplying an isotropic
d-dimensional Wiener increment, and a reward rate b(x, u) integrated over
a finite horizon [0, T].  All integration is fixed-step Euler-Maruyama on
a grid dt that divides T; there is no adaptive stepping.

Conventions
-----------
Drift, diffusion, reward and policy callables must accept batched inputs:
``x`` with shape ``(..., d)`` and ``u`` with shape ``(..., control_dim)``,
returning an array shaped like ``x`` (drift), or like ``x[..., 0]``
(diffusion/reward; returning a python scalar for constant functions is
also accepted).  Plain numpy broadcasting code satisfies this.

Non-finite states abort a simulation with :class:`IntegrationBlowupError`
naming the first bad grid index; states are never clamped, since silent
clamping would corrupt downstream run statistics.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "LipschitzConstants",
    "DynamicsSpec",
    "Policy",
    "InitialDistribution",
    "Trajectory",
    "IntegrationBlowupError",
    "euler_maruyama_step",
    "simulate_trajectory",
    "simulate_paths",
    "estimate_return",
    "wiener_increments",
    "initial_states",
    "trajectory_to_csv",
    "substream",
    "default_step_count",
]

# Fixed tags for deriving named child RNG streams from one root seed.  Two
# call sites that must share noise (common random numbers) use the same
# (seed, tag, ...) tuple; everything else gets a disjoint stream.
TAG_WIENER = 11
TAG_INIT = 12
TAG_PLAN = 21
TAG_TIME = 22
TAG_OBS = 23
TAG_PICK = 24
TAG_ORACLE = 25


def substream(seed: int, *tags: int) -> np.random.Generator:
    """Deterministically derive an independent generator from (seed, tags)."""
    return np.random.default_rng([int(seed)] + [int(t) for t in tags])


class IntegrationBlowupError(RuntimeError):
    """A simulated state became non-finite; carries the offending grid index."""

    def __init__(self, step_index: int, message: str | None = None):
        self.step_index = step_index
        super().__init__(message or f"non-finite state at grid index {step_index}")


@dataclass(frozen=True)
class LipschitzConstants:
    """Lipschitz/bound constants of a dynamics tuple.

    ``growth_rate`` is the exponent used by mean-square coupling bounds:
    K = 1 + (1+L_pi)^2 L_g^2 + 2 (1+L_pi)^2 L_f^2.  The coupled-deviation
    check uses ``growth_rate_dim(d)``, the variant whose diffusion term
    scales with the state dimension.
    """

    l_f: float = 1.0
    l_b: float = 1.0
    l_g: float = 0.0
    l_pi: float = 0.0

    def __post_init__(self):
        for name in ("l_f", "l_b", "l_g", "l_pi"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def growth_rate(self) -> float:
        c = (1.0 + self.l_pi) ** 2
        return 1.0 + c * self.l_g**2 + 2.0 * c * self.l_f**2

    def growth_rate_dim(self, d: int) -> float:
        c = (1.0 + self.l_pi) ** 2
        return 1.0 + d * c * self.l_g**2 + 2.0 * c * self.l_f**2

    @property
    def reward_rate(self) -> float:
        """L = L_b (1 + L_pi), the reward-sensitivity constant."""
        return self.l_b * (1.0 + self.l_pi)


@dataclass(frozen=True)
class DynamicsSpec:
    """The tuple (drift, diffusion, reward, horizon, dims) defining an environment.

    ``diffusion`` is scalar-valued; the same value multiplies every component
    of the Wiener increment.  Candidate models share this class: a model with
    a hypothesised drift/reward but the true diffusion is just
    ``dataclasses.replace(spec, drift=f, reward=b)``.
    """

    drift: Callable[[np.ndarray, np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray, np.ndarray], np.ndarray]
    reward: Callable[[np.ndarray, np.ndarray], np.ndarray]
    horizon: float
    state_dim: int
    control_dim: int
    lipschitz: LipschitzConstants = field(default_factory=LipschitzConstants)

    def __post_init__(self):
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.state_dim < 1 or self.control_dim < 1:
            raise ValueError("state_dim and control_dim must be >= 1")

    def grid_steps(self, dt: float) -> int:
        """Number of steps on the grid; dt must divide the horizon (tol 1e-12)."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        k = round(self.horizon / dt)
        if k < 1 or abs(k * dt - self.horizon) > 1e-12 * max(1.0, self.horizon):
            raise ValueError(f"dt={dt} does not divide horizon={self.horizon}")
        return k


def default_step_count() -> int:
    """Default grid resolution: horizon / 512 (power of two, refinement friendly)."""
    return 512


@dataclass(frozen=True)
class Policy:
    """Deterministic time-homogeneous feedback map x -> u with a grid index."""

    fn: Callable[[np.ndarray], np.ndarray]
    id: int = 0

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.fn(x)


@dataclass(frozen=True)
class InitialDistribution:
    """Seeded sampler of initial states with a grid index.

    ``sampler(rng, n)`` must return an ``(n, d)`` batch; ``sampler(rng, None)``
    a single ``(d,)`` draw.
    """

    sampler: Callable[[np.random.Generator, int | None], np.ndarray]
    id: int = 0

    def sample(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        return self.sampler(rng, n)


@dataclass(frozen=True)
class Trajectory:
    """One realised path on the regular grid, including the noise that drove it."""

    times: np.ndarray      # (K+1,), 0 = t_0 < ... < t_K = T
    states: np.ndarray     # (K+1, d)
    controls: np.ndarray   # (K+1, control_dim)
    wiener_path: np.ndarray  # (K, d) increments, each ~ N(0, dt I)
    seed: int | None = None

    def __post_init__(self):
        if len(self.states) != len(self.times):
            raise ValueError("states and times must have equal length")


def _as_batch(a: np.ndarray, like: np.ndarray) -> np.ndarray:
    """Promote a scalar-valued function result to the batch shape of `like`."""
    out = np.asarray(a, dtype=float)
    if out.ndim == 0:
        return np.full(like.shape[:-1], float(out))
    return out


def euler_maruyama_step(
    x: np.ndarray,
    u: np.ndarray,
    f: Callable,
    g: Callable,
    dt: float,
    dw: np.ndarray,
    step_index: int | None = None,
) -> np.ndarray:
    """One explicit step x + f(x,u) dt + g(x,u) dw.

    The caller draws dw ~ N(0, dt I).  The scalar diffusion multiplies the
    whole increment vector.  Raises IntegrationBlowupError on a non-finite
    result, reporting ``step_index`` when given.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        drift = np.asarray(f(x, u), dtype=float)
        diff = _as_batch(g(x, u), x)
        out = x + drift * dt + diff[..., None] * np.asarray(dw, dtype=float)
    if not np.all(np.isfinite(out)):
        raise IntegrationBlowupError(-1 if step_index is None else step_index)
    return out


def wiener_increments(
    rng: np.random.Generator, n_paths: int, n_steps: int, dim: int, dt: float
) -> np.ndarray:
    """Draw an (n_paths, n_steps, dim) bundle of N(0, dt I) increments."""
    return rng.normal(0.0, np.sqrt(dt), size=(n_paths, n_steps, dim))


def initial_states(q: InitialDistribution, rng: np.random.Generator, n: int) -> np.ndarray:
    x0 = np.asarray(q.sample(rng, n), dtype=float)
    if x0.ndim != 2 or x0.shape[0] != n:
        raise ValueError("initial sampler must return an (n, d) batch")
    return x0


def simulate_paths(
    spec: DynamicsSpec,
    policy: Policy,
    x0: np.ndarray,
    dw: np.ndarray,
    dt: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Integrate a batch of paths from x0 under one noise bundle.

    Returns (states, controls) of shapes (B, K+1, d) and (B, K+1, control_dim),
    where K = dw.shape[1].  Every path uses the same policy; the controls are
    recorded at every grid point including the terminal one.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n_paths, d = x0.shape
    n_steps = dw.shape[1]
    states = np.empty((n_paths, n_steps + 1, d))
    u0 = np.asarray(policy(x0), dtype=float)
    controls = np.empty((n_paths, n_steps + 1, u0.shape[-1]))
    x = x0
    u = u0
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n_steps):
            states[:, k] = x
            controls[:, k] = u
            drift = np.asarray(spec.drift(x, u), dtype=float)
            diff = _as_batch(spec.diffusion(x, u), x)
            x = x + drift * dt + diff[:, None] * dw[:, k]
            u = np.asarray(policy(x), dtype=float)
        states[:, n_steps] = x
        controls[:, n_steps] = u
    if not np.all(np.isfinite(states)):
        bad = np.where(~np.isfinite(states).all(axis=(0, 2)))[0]
        raise IntegrationBlowupError(int(bad[0]) if len(bad) else n_steps)
    return states, controls


def simulate_trajectory(
    spec: DynamicsSpec,
    policy: Policy,
    q: InitialDistribution,
    dt: float,
    seed: int,
) -> Trajectory:
    """Simulate one seeded path over the full horizon on the regular grid."""
    k = spec.grid_steps(dt)
    rng = substream(seed, TAG_INIT, q.id)
    x0 = np.asarray(q.sample(rng, None), dtype=float).reshape(1, -1)
    rng_w = substream(seed, TAG_WIENER)
    dw = wiener_increments(rng_w, 1, k, spec.state_dim, dt)
    states, controls = simulate_paths(spec, policy, x0, dw, dt)
    times = np.arange(k + 1) * dt
    return Trajectory(times, states[0], controls[0], dw[0], seed=seed)


def riemann_returns(
    spec: DynamicsSpec, states: np.ndarray, controls: np.ndarray, dt: float
) -> np.ndarray:
    """Left Riemann sum of the reward rate along each path: dt * sum_k b(x_k, u_k)."""
    xs = states[:, :-1, :]
    us = controls[:, :-1, :]
    flat_b = _as_batch(spec.reward(xs.reshape(-1, xs.shape[-1]), us.reshape(-1, us.shape[-1])),
                       xs.reshape(-1, xs.shape[-1]))
    return flat_b.reshape(xs.shape[0], xs.shape[1]).sum(axis=1) * dt


def estimate_return(
    spec: DynamicsSpec,
    policy: Policy,
    q: InitialDistribution,
    dt: float,
    n_rollouts: int,
    seed: int,
) -> float:
    """Monte-Carlo estimate of the accumulated reward of (policy, q) under `spec`.

    ``spec`` may hold a candidate drift/reward in place of the true ones (the
    diffusion is always taken from ``spec``).  Two calls with the same seed
    share the initial draws and the Wiener bundle, so return comparisons
    across candidate (drift, reward) pairs use common random numbers: for a
    fixed (policy, q) the sampled paths differ only through the drift.
    """
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    k = spec.grid_steps(dt)
    x0 = initial_states(q, substream(seed, TAG_INIT, q.id), n_rollouts)
    dw = wiener_increments(substream(seed, TAG_WIENER), n_rollouts, k, spec.state_dim, dt)
    states, controls = simulate_paths(spec, policy, x0, dw, dt)
    return float(riemann_returns(spec, states, controls, dt).mean())


def trajectory_to_csv(traj: Trajectory, path_or_buf) -> None:
    """Write a trajectory as CSV with columns t, x_0..x_{d-1}, u_0..u_{m-1}."""
    d = traj.states.shape[1]
    m = traj.controls.shape[1]
    header = ["t"] + [f"x_{i}" for i in range(d)] + [f"u_{j}" for j in range(m)]

    def _write(fh):
        w = csv.writer(fh)
        w.writerow(header)
        for i, t in enumerate(traj.times):
            w.writerow([repr(float(t))]
                       + [repr(float(v)) for v in traj.states[i]]
                       + [repr(float(v)) for v in traj.controls[i]])

    if isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__"):
        with open(path_or_buf, "w", newline="") as fh:
            _write(fh)
    else:
        _write(path_or_buf)


def coupled_deviation(
    spec: DynamicsSpec,
    policy: Policy,
    q: InitialDistribution,
    drift_hat: Callable,
    dt: float,
    n_paths: int,
    seed: int,
    t_checks: Sequence[float],
) -> dict:
    """Mean-square gap between the true flow and the flow of a perturbed drift.

    Both flows share the initial states and the Wiener path.  Returns, per
    requested time t, the Monte-Carlo estimates of

        lhs(t) = E || x_hat(t) - x(t) ||^2
        gap(t) = integral_0^t E || drift_hat - drift ||^2 (x(s), u(s)) ds

    with the integral accumulated as a left Riemann sum along the true flow.
    The exponential bound  lhs(t) <= 2 exp(K t) gap(t)  with
    K = lipschitz.growth_rate_dim(d) is evaluated by callers.
    """
    k = spec.grid_steps(dt)
    x0 = initial_states(q, substream(seed, TAG_INIT, q.id), n_paths)
    dw = wiener_increments(substream(seed, TAG_WIENER), n_paths, k, spec.state_dim, dt)
    for t in t_checks:
        if abs(round(t / dt) * dt - t) > 1e-9:
            raise ValueError(f"check time {t} is not on the dt grid")
    check_idx = sorted(set(int(round(t / dt)) for t in t_checks))
    x = x0.copy()
    xh = x0.copy()
    gap_running = 0.0
    out_lhs, out_gap, out_t = [], [], []
    pending = list(check_idx)
    for step in range(k + 1):
        if pending and step == pending[0]:
            out_t.append(step * dt)
            out_lhs.append(float(np.sum((xh - x) ** 2, axis=1).mean()))
            out_gap.append(gap_running)
            pending.pop(0)
        if step == k:
            break
        u = np.asarray(policy(x), dtype=float)
        f_true = np.asarray(spec.drift(x, u), dtype=float)
        f_hat_on_true = np.asarray(drift_hat(x, u), dtype=float)
        gap_running += float(np.sum((f_hat_on_true - f_true) ** 2, axis=1).mean()) * dt
        g_true = _as_batch(spec.diffusion(x, u), x)
        uh = np.asarray(policy(xh), dtype=float)
        fh = np.asarray(drift_hat(xh, uh), dtype=float)
        gh = _as_batch(spec.diffusion(xh, uh), xh)
        x = x + f_true * dt + g_true[:, None] * dw[:, step]
        xh = xh + fh * dt + gh[:, None] * dw[:, step]
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(xh))):
        raise IntegrationBlowupError(k)
    return {"t": out_t, "lhs": out_lhs, "gap_integral": out_gap}
