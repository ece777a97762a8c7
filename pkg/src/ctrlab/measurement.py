"""Noisy measurement oracle, per-episode time samplers, and the Monte-Carlo
estimator of the sampler independency coefficient.

A measurement at a chosen time t on a running trajectory is the tuple
(t, x, u, y, r) where, with measurement step Delta,

    y ~ N( f(x, u),  g(x, u)^2 / Delta * I ),     r ~ N( b(x, u), 1 ).

The exact-noise mode draws y and r from those laws directly; the
finite-difference mode instead forms y = (x(t + Delta) - x(t)) / Delta from
the simulated path, which reproduces the same law up to a first-order bias
in Delta on drifts that vary along the flow.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .sde import (
    DynamicsSpec,
    InitialDistribution,
    IntegrationBlowupError,
    Policy,
    _as_batch,
    initial_states,
    substream,
)

__all__ = [
    "Measurement",
    "MeasurementOracleConfig",
    "SamplerSpec",
    "IndependencyEstimate",
    "OutOfHorizonError",
    "DegenerateConditionalError",
    "observe",
    "observe_on_path",
    "observe_batch",
    "draw_measurement_times",
    "states_at_times",
    "estimate_independency_coefficient",
    "ou_second_moment",
    "ou_second_moment_averaged",
    "ou_conditional_second_moment",
    "measurements_to_csv",
]

SAMPLER_KINDS = ("uniform_single", "iid_uniform", "equidistant", "geometric")

TAG_OBS_PATH = 31


class OutOfHorizonError(ValueError):
    """A finite-difference observation would require x(t + Delta) with t + Delta > T."""


class DegenerateConditionalError(RuntimeError):
    """A conditional denominator vanished while its marginal numerator did not."""


@dataclass(frozen=True)
class Measurement:
    t: float
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    r: float
    episode: int = 0


@dataclass(frozen=True)
class MeasurementOracleConfig:
    """Measurement-oracle parameters.

    ``delta`` is the measurement time step Delta. ``mode`` selects exact-noise
    sampling (the default used by all learners) or the finite-difference
    approximation (kept to validate that approximation). ``g_bound`` is the
    diffusion budget G entering confidence radii; it never changes the noise,
    which always uses the environment's own diffusion value.
    ``reward_noise=False`` disables the unit-variance reward noise; that mode
    exists only for hand-traceable tests and is flagged in run logs.
    """

    delta: float
    mode: str = "exact"
    g_bound: float = 1.0
    fd_substeps: int = 16
    reward_noise: bool = True

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.mode not in ("exact", "finite_difference"):
            raise ValueError(f"unknown measurement mode {self.mode!r}")
        if self.fd_substeps < 1:
            raise ValueError("fd_substeps must be >= 1")


@dataclass(frozen=True)
class SamplerSpec:
    """Distribution of the m in-episode measurement times over [0, T].

    kinds:
      uniform_single   one Unif[0, T] draw (m must be 1)
      iid_uniform      m independent Unif[0, T] draws
      equidistant      the fixed grid {T/m, 2T/m, ..., T}
      geometric        m independent draws from {iT/m}, P(iT/m) proportional
                       to lam**i  (lam = 1 recovers the uniform grid law)
    """

    kind: str = "uniform_single"
    m: int = 1
    lam: float = 1.0

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.kind == "uniform_single" and self.m != 1:
            raise ValueError("uniform_single draws exactly one time")
        if self.lam <= 0:
            raise ValueError("lam must be positive")


def draw_measurement_times(
    sampler: SamplerSpec, horizon: float, rng_or_seed
) -> np.ndarray:
    """Draw the sampler's m measurement times; all outputs lie in [0, T]."""
    rng = rng_or_seed if isinstance(rng_or_seed, np.random.Generator) \
        else np.random.default_rng(rng_or_seed)
    m = sampler.m
    if sampler.kind == "uniform_single":
        return rng.uniform(0.0, horizon, size=1)
    if sampler.kind == "iid_uniform":
        return rng.uniform(0.0, horizon, size=m)
    grid = np.arange(1, m + 1) * (horizon / m)
    if sampler.kind == "equidistant":
        return grid
    # geometric: weights lam**i over slots i = 1..m, computed in log space
    logs = np.arange(1, m + 1) * math.log(sampler.lam)
    w = np.exp(logs - logs.max())
    return rng.choice(grid, size=m, p=w / w.sum())


def _advance(
    spec: DynamicsSpec,
    policy: Policy,
    x: np.ndarray,
    span: float,
    dt: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """March a batch forward by `span` using full dt steps plus one remainder step."""
    n_full = int(span / dt)
    rem = span - n_full * dt
    if rem > 1e-12 * max(1.0, dt):
        steps = [dt] * n_full + [rem]
    else:
        steps = [dt] * n_full
    for i, h in enumerate(steps):
        u = np.asarray(policy(x), dtype=float)
        drift = np.asarray(spec.drift(x, u), dtype=float)
        diff = _as_batch(spec.diffusion(x, u), x)
        dw = rng.normal(0.0, math.sqrt(h), size=x.shape)
        x = x + drift * h + diff[..., None] * dw
    if not np.all(np.isfinite(x)):
        raise IntegrationBlowupError(n_full)
    return x


def observe(
    spec: DynamicsSpec,
    policy: Policy,
    q: InitialDistribution,
    t: float,
    config: MeasurementOracleConfig,
    seed: int,
    dt: float | None = None,
    episode: int = 0,
) -> Measurement:
    """Run one episode of (policy, q) and measure it at time t."""
    ms = observe_on_path(
        spec, policy, q, np.asarray([t], dtype=float), config,
        substream(seed, TAG_OBS_PATH), dt=dt, episode=episode,
    )
    return ms[0]


def observe_on_path(
    spec: DynamicsSpec,
    policy: Policy,
    q: InitialDistribution,
    times: np.ndarray,
    config: MeasurementOracleConfig,
    rng: np.random.Generator,
    dt: float | None = None,
    episode: int = 0,
) -> list[Measurement]:
    """Measure one simulated trajectory at several (sorted) times.

    All measurements come from a single execution of (policy, q); the path is
    integrated exactly to each requested time.  Finite-difference mode is
    limited to a single measurement per path, since its look-ahead segment
    would otherwise overlap the remaining schedule.
    """
    T = spec.horizon
    dt = T / 512 if dt is None else dt
    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(times > T + 1e-12):
        raise ValueError("measurement times must lie in [0, T]")
    if np.any(np.diff(times) < 0):
        raise ValueError("measurement times must be sorted")
    if config.mode == "finite_difference":
        if len(times) != 1:
            raise ValueError("finite-difference mode supports one measurement per path")
        if config.delta > dt + 1e-12:
            raise ValueError("finite-difference mode requires delta <= dt")
        if times[0] + config.delta > T + 1e-12:
            raise OutOfHorizonError(
                f"t + delta = {times[0] + config.delta} exceeds horizon {T}")
    x = np.asarray(q.sample(rng, None), dtype=float).reshape(1, -1)
    out: list[Measurement] = []
    now = 0.0
    for t in times:
        x = _advance(spec, policy, x, float(t) - now, dt, rng)
        now = float(t)
        u = np.asarray(policy(x), dtype=float)
        b_val = float(_as_batch(spec.reward(x, u), x)[0])
        if config.mode == "exact":
            g_val = float(_as_batch(spec.diffusion(x, u), x)[0])
            y = np.asarray(spec.drift(x, u), dtype=float)[0] \
                + rng.normal(0.0, abs(g_val) / math.sqrt(config.delta), size=spec.state_dim)
        else:
            sub = config.delta / config.fd_substeps
            x_ahead = x
            for _ in range(config.fd_substeps):
                uu = np.asarray(policy(x_ahead), dtype=float)
                drift = np.asarray(spec.drift(x_ahead, uu), dtype=float)
                diff = _as_batch(spec.diffusion(x_ahead, uu), x_ahead)
                dw = rng.normal(0.0, math.sqrt(sub), size=x_ahead.shape)
                x_ahead = x_ahead + drift * sub + diff[..., None] * dw
            y = (x_ahead[0] - x[0]) / config.delta
        r = b_val + (float(rng.standard_normal()) if config.reward_noise else 0.0)
        if not (np.all(np.isfinite(y)) and np.isfinite(r)):
            raise IntegrationBlowupError(int(round(t / dt)))
        out.append(Measurement(t=float(t), x=x[0].copy(), u=u[0].copy(),
                               y=np.asarray(y, dtype=float), r=float(r), episode=episode))
    return out


def states_at_times(
    spec: DynamicsSpec,
    policy: Policy,
    q: InitialDistribution,
    times: np.ndarray,
    rng: np.random.Generator,
    dt: float,
    x0: np.ndarray | None = None,
    t_start: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """State/control marginals: one independent path per entry of `times`.

    Path j starts at ``x0[j]`` at time ``t_start`` (drawn from q at 0 when x0
    is None) and is integrated to ``times[j]`` with full dt steps plus one
    remainder step.  Vectorised over paths: the grid is marched jointly and
    each path is frozen once it reaches its own target.
    """
    times = np.asarray(times, dtype=float)
    n = len(times)
    if x0 is None:
        x = initial_states(q, rng, n)
    else:
        x = np.array(x0, dtype=float, copy=True)
        if x.ndim == 1:
            x = np.broadcast_to(x, (n, len(x))).copy()
    spans = times - t_start
    if np.any(spans < -1e-12):
        raise ValueError("times must be >= t_start")
    n_full = np.floor(spans / dt + 1e-12).astype(int)
    rem = spans - n_full * dt
    for k in range(int(n_full.max()) if n else 0):
        active = n_full > k
        if not np.any(active):
            break
        xa = x[active]
        u = np.asarray(policy(xa), dtype=float)
        drift = np.asarray(spec.drift(xa, u), dtype=float)
        diff = _as_batch(spec.diffusion(xa, u), xa)
        dw = rng.normal(0.0, math.sqrt(dt), size=xa.shape)
        x[active] = xa + drift * dt + diff[:, None] * dw
    u = np.asarray(policy(x), dtype=float)
    drift = np.asarray(spec.drift(x, u), dtype=float)
    diff = _as_batch(spec.diffusion(x, u), x)
    z = rng.standard_normal(size=x.shape)
    x = x + drift * rem[:, None] + diff[:, None] * np.sqrt(np.maximum(rem, 0.0))[:, None] * z
    if not np.all(np.isfinite(x)):
        raise IntegrationBlowupError(int(n_full.max()))
    u = np.asarray(policy(x), dtype=float)
    return x, u


def observe_batch(
    spec: DynamicsSpec,
    policy: Policy,
    q: InitialDistribution,
    times: np.ndarray,
    config: MeasurementOracleConfig,
    seed: int,
    dt: float | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Exact-noise measurements on independent paths, one per time entry.

    Returns arrays (X, U, Y, R).  Exists for statistical checks that need
    10^5-scale observation counts; equivalent in law to repeated `observe`.
    """
    if config.mode != "exact":
        raise ValueError("observe_batch supports exact-noise mode only")
    dt = spec.horizon / 512 if dt is None else dt
    rng = substream(seed, TAG_OBS_PATH)
    x, u = states_at_times(spec, policy, q, times, rng, dt)
    g = _as_batch(spec.diffusion(x, u), x)
    y = np.asarray(spec.drift(x, u), dtype=float) \
        + (np.abs(g) / math.sqrt(config.delta))[:, None] * rng.standard_normal(x.shape)
    b = _as_batch(spec.reward(x, u), x)
    r = b + (rng.standard_normal(len(x)) if config.reward_noise else 0.0)
    return x, u, y, r


# ---------------------------------------------------------------------------
# Closed-form moments of the benchmark mean-reverting process
#   dx = -u x dt + sqrt(2) dw,  x(0) = 0
# ---------------------------------------------------------------------------

def _check_rate(u: float) -> float:
    u = float(u)
    if u <= 0:
        raise ValueError("rate u must be positive")
    return u


def ou_second_moment(u: float, t) -> np.ndarray | float:
    """Pointwise E[x(t)^2] = (1/u)(1 - exp(-2 u t)) for the sqrt(2)-noise process."""
    u = _check_rate(u)
    t = np.asarray(t, dtype=float)
    out = (1.0 - np.exp(-2.0 * u * t)) / u
    return float(out) if out.ndim == 0 else out


def ou_second_moment_averaged(u: float, horizon: float) -> float:
    """Time average (1/T) int_0^T E[x(t)^2] dt = 1/u - (1 - exp(-2 u T)) / (2 u^2 T)."""
    u = _check_rate(u)
    T = float(horizon)
    if T <= 0:
        raise ValueError("horizon must be positive")
    return 1.0 / u - (1.0 - math.exp(-2.0 * u * T)) / (2.0 * u**2 * T)


def ou_conditional_second_moment(u: float, gap: float, z_prev: float) -> float:
    """E[x(t+gap)^2 | x(t) = z_prev] = (z_prev e^{-u gap})^2 + (1/u)(1 - e^{-2 u gap})."""
    u = _check_rate(u)
    if gap < 0:
        raise ValueError("gap must be nonnegative")
    decay = math.exp(-u * gap)
    return (z_prev * decay) ** 2 + (1.0 - decay**2) / u


# ---------------------------------------------------------------------------
# Independency coefficient of a sampler
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IndependencyEstimate:
    """Monte-Carlo lower-bound estimate of the sampler independency coefficient.

    ``value`` is the max over slot indices, hypothesis kinds, policies,
    initial distributions and sampled conditioning prefixes of the ratio

        E_marginal[h]  /  E_conditional[h]

    where h ranges over squared candidate-truth gaps, the marginal draws
    (t, x) with t ~ Unif[0, T] and x the time-t state, and the conditional
    law continues a sampled prefix of the same path.  Ratios with both sides
    below 1e-12 count as 1 (a candidate equal to the truth carries no
    estimation error).  The supremum over conditioning histories is only
    sampled, so the estimate is a lower bound up to Monte-Carlo error.
    """

    value: float
    per_index: np.ndarray           # (m,) max ratio per slot index
    per_kind: dict                  # {"drift": float, "reward": float}
    stderr: float                   # delta-method stderr at the arg-max ratio
    mc_config: dict = field(default_factory=dict)


def _difference_fns(cls) -> list[Callable]:
    members = list(cls.members)
    if cls.truth_index is None:
        raise ValueError("independency estimation needs classes with a known truth")
    truth = members[cls.truth_index]
    if cls.kind == "drift":
        return [
            (lambda x, u, f=f: np.sum(
                (np.asarray(f(x, u), dtype=float) - np.asarray(truth(x, u), dtype=float))
                .reshape(len(np.atleast_2d(x)), -1) ** 2, axis=1))
            for f in members
        ]
    return [
        (lambda x, u, b=b: (
            _as_batch(b(x, u), np.atleast_2d(x)) - _as_batch(truth(x, u), np.atleast_2d(x))) ** 2)
        for b in members
    ]


def _mean_se(vals: np.ndarray) -> tuple[float, float]:
    vals = np.asarray(vals, dtype=float)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0


ZERO_TOL = 1e-12


def estimate_independency_coefficient(
    spec: DynamicsSpec,
    policies: Sequence[Policy],
    qs: Sequence[InitialDistribution],
    drift_class,
    reward_class,
    sampler: SamplerSpec,
    m: int,
    mc_samples: int,
    seed: int,
    n_prefixes: int = 64,
    dt: float | None = None,
) -> IndependencyEstimate:
    """Estimate the worst-case marginal/conditional estimation-error ratio.

    For every policy, initial distribution, hypothesis h (squared gap between
    a class member and the truth) and slot index i in [m]:

    * the numerator E[h] under the time-uniform marginal is sampled with
      ``mc_samples`` independent paths;
    * conditioning prefixes are sampled by drawing the sampler's time vector,
      sorting it, and running one path through the first i-1 times; a
      deterministic all-zero-state prefix is added, since mean-reverting
      benchmarks attain their worst conditional there;
    * the denominator E[h | prefix] is sampled by branching ``mc_samples``
      continuations from the prefix state over the gap to the i-th time.

    The reported value is the max ratio; 0/0 counts as 1, and a vanishing
    denominator under a non-vanishing numerator raises
    :class:`DegenerateConditionalError`.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if sampler.m != m:
        raise ValueError("sampler.m must equal m")
    T = spec.horizon
    dt = T / 512 if dt is None else dt
    h_by_kind = {
        "drift": _difference_fns(drift_class),
        "reward": _difference_fns(reward_class),
    }
    rng = substream(seed, 41)
    best = 1.0
    best_se = 0.0
    per_index = np.ones(m)
    per_kind = {"drift": 1.0, "reward": 1.0}

    for policy in policies:
        for q in qs:
            ts = rng.uniform(0.0, T, size=mc_samples)
            xm, um = states_at_times(spec, policy, q, ts, rng, dt)
            num: dict[str, list[tuple[float, float]]] = {}
            for kind, hs in h_by_kind.items():
                num[kind] = [_mean_se(h(xm, um)) for h in hs]
            # prefix time vectors, one path per prefix, plus the zero-state prefix
            tvecs = np.stack([np.sort(draw_measurement_times(sampler, T, rng))
                              for _ in range(n_prefixes)])
            for i in range(1, m + 1):
                if i == 1:
                    # no history yet: the conditional law is the plain slot-1
                    # law, mixing over the sampler's own first sorted time
                    targets = np.array([
                        float(np.sort(draw_measurement_times(sampler, T, rng))[0])
                        for _ in range(mc_samples)])
                    batches = [(None, 0.0, targets)]
                else:
                    t_prev = tvecs[:, i - 2]
                    t_cur = tvecs[:, i - 1]
                    x_prev, _ = states_at_times(spec, policy, q, t_prev, rng, dt)
                    batches = [(x_prev[p], float(t_prev[p]), np.full(mc_samples, t_cur[p]))
                               for p in range(n_prefixes)]
                    # worst-case prefix for mean-reverting flows: state pinned
                    # at zero (only meaningful over a positive gap)
                    z0 = np.where(t_cur > t_prev + ZERO_TOL)[0]
                    if len(z0):
                        p = int(z0[0])
                        batches.append((np.zeros(spec.state_dim), float(t_prev[p]),
                                        np.full(mc_samples, t_cur[p])))
                for x_p, t_p, targets in batches:
                    xc, uc = states_at_times(
                        spec, policy, q, targets, rng, dt, x0=x_p, t_start=t_p,
                    )
                    for kind, hs in h_by_kind.items():
                        for j, h in enumerate(hs):
                            n_mean, n_se = num[kind][j]
                            d_mean, d_se = _mean_se(h(xc, uc))
                            if n_mean < ZERO_TOL and d_mean < ZERO_TOL:
                                ratio, se = 1.0, 0.0
                            elif d_mean < ZERO_TOL:
                                raise DegenerateConditionalError(
                                    f"conditional expectation vanished (kind={kind}, i={i})")
                            else:
                                ratio = n_mean / d_mean
                                se = ratio * math.sqrt(
                                    (n_se / n_mean) ** 2 + (d_se / d_mean) ** 2
                                ) if n_mean > 0 else 0.0
                            per_index[i - 1] = max(per_index[i - 1], ratio)
                            per_kind[kind] = max(per_kind[kind], ratio)
                            if ratio > best:
                                best, best_se = ratio, se
    return IndependencyEstimate(
        value=float(best),
        per_index=per_index,
        per_kind=per_kind,
        stderr=float(best_se),
        mc_config={"mc_samples": mc_samples, "n_prefixes": n_prefixes,
                   "m": m, "sampler": sampler.kind, "seed": seed},
    )


def measurements_to_csv(measurements: Sequence[Measurement], path_or_buf) -> None:
    """Serialize measurements with columns episode, t, x..., u..., y..., r."""
    if not measurements:
        raise ValueError("nothing to serialize")
    d = len(measurements[0].x)
    mu = len(measurements[0].u)
    header = (["episode", "t"] + [f"x_{i}" for i in range(d)]
              + [f"u_{j}" for j in range(mu)] + [f"y_{i}" for i in range(d)] + ["r"])

    def _write(fh):
        w = csv.writer(fh)
        w.writerow(header)
        for ms in measurements:
            w.writerow([ms.episode, repr(float(ms.t))]
                       + [repr(float(v)) for v in ms.x]
                       + [repr(float(v)) for v in ms.u]
                       + [repr(float(v)) for v in ms.y]
                       + [repr(float(ms.r))])

    if isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__"):
        with open(path_or_buf, "w", newline="") as fh:
            _write(fh)
    else:
        _write(path_or_buf)
