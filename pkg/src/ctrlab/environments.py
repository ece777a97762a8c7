"""Benchmark environments with analytically known structure.

Three families:

* ``linear_gaussian`` -- linear drift and clipped-linear reward over a
  state-control feature map, constant diffusion, finite perturbation-grid
  hypothesis classes containing the truth at a known index.  The statistical
  workhorse for coverage/learning-curve/switching studies.
* ``ou`` -- the one-dimensional mean-reverting construction
  dx = -u x dt + sqrt(2) dw with constant-rate control policies, a singleton
  drift class and the scaled-identity reward family b(x) = alpha x.  Its
  Gaussian marginals have closed-form moments, which back the sampler
  independency checks.
* ``deterministic_1d`` -- zero diffusion, a sign-flipping drift pair and a
  dominating reward candidate; every run is exactly reproducible, which makes
  it the golden-trace environment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .function_classes import FiniteClass
from .planner import CandidateGrid
from .sde import DynamicsSpec, InitialDistribution, LipschitzConstants, Policy

__all__ = [
    "EnvCatalogEntry",
    "make_linear_gaussian",
    "make_ou",
    "make_deterministic_1d",
    "CATALOG",
    "make_env",
    "constant_policy",
    "point_mass",
    "audit_entry",
]


def constant_policy(u, pid: int, dim: int = 1) -> Policy:
    u_vec = np.asarray(u, dtype=float).reshape(dim)

    def fn(x, _u=u_vec):
        x = np.asarray(x)
        if x.ndim == 1:
            return _u.copy()
        return np.broadcast_to(_u, (len(x), len(_u))).copy()

    return Policy(fn=fn, id=pid)


def point_mass(x0, qid: int) -> InitialDistribution:
    x0_vec = np.atleast_1d(np.asarray(x0, dtype=float))

    def sampler(rng, n, _x=x0_vec):
        if n is None:
            return _x.copy()
        return np.broadcast_to(_x, (n, len(_x))).copy()

    return InitialDistribution(sampler=sampler, id=qid)


@dataclass(frozen=True)
class EnvCatalogEntry:
    """A named environment plus matching hypothesis classes and search grids.

    ``oracles`` lists the closed-form quantities available for cross-checks.
    ``audit_bounds`` marks whether the |f| <= 1, b in [0, 1] range audit
    applies; the mean-reverting entry opts out because its defining reward
    b(x) = x and drift -u x are deliberately unclipped so that the Gaussian
    moment formulas stay exact.
    """

    name: str
    env: DynamicsSpec
    grid: CandidateGrid
    drift_class: FiniteClass
    reward_class: FiniteClass
    oracles: tuple = ()
    measurement_delta: float = 0.1
    g_bound: float = 1.0
    audit_bounds: bool = True
    audit_box: tuple = ((-1.0, 1.0),)  # per-dim state bounds for numeric audits
    control_box: tuple = ((-1.0, 1.0),)
    params: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# linear-Gaussian family
# ---------------------------------------------------------------------------

def _phi_concat(x, u):
    return np.concatenate([np.atleast_2d(np.asarray(x, dtype=float)),
                           np.atleast_2d(np.asarray(u, dtype=float))], axis=-1)


def _linear_drift(theta: np.ndarray) -> Callable:
    def f(x, u, _t=theta):
        return _phi_concat(x, u) @ _t.T if np.asarray(x).ndim > 1 \
            else (_phi_concat(x, u) @ _t.T)[0]
    return f


def _clipped_affine_reward(theta: np.ndarray) -> Callable:
    """clip(theta . [x; u; 1], 0, 1): linear in features with an intercept slot."""

    def b(x, u, _t=theta):
        z = _phi_concat(x, u)
        vals = z @ _t[:-1] + _t[-1]
        out = np.clip(vals, 0.0, 1.0)
        return out if np.asarray(x).ndim > 1 else float(out[0])
    return b


def make_linear_gaussian(
    d: int = 2,
    p: int | None = None,
    seed: int = 0,
    n_drift: int = 9,
    n_reward: int = 9,
    g_const: float = 0.08,
    delta: float = 0.25,
    drift_big: float = 0.45,
    drift_spread: float = 0.2,
    reward_spread: float = 0.2,
    saturating_offset: float = 1.5,
    policy_controls: Sequence[float] = (-0.8, 0.0, 0.8),
    x0: float = 0.3,
    horizon: float = 1.0,
) -> EnvCatalogEntry:
    """Linear dynamics f(z) = Theta [x; u] with clipped affine-linear reward.

    The hypothesis grids are deterministic perturbations of the truth, whose
    structure shapes how optimism errs and learns:

    * two drift members tilt the control column by ``drift_big`` and sit at
      indices 0/1 ahead of the truth (index 2): lexicographic tie-breaking
      retains a wrong drift until a few observations expel it, while the
      remaining members perturb state columns by the milder ``drift_spread``;
    * reward index 1 is a pure-intercept member that saturates the clip
      everywhere, so every (policy, q) pair ties at the maximal return under
      it and the planner holds the lexicographically first pair until loss
      data expel it -- ordering ``policy_controls`` from worst to best makes
      that phase costly, ordering it best-first makes it benign;
    * remaining reward members shift single feature columns by
      ``reward_spread``, a persistent mild-optimism noise floor.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    p = d + 1 if p is None else p
    if p != d + 1:
        raise ValueError("feature dimension must equal state_dim + 1 control")
    if n_drift < 1 or n_reward < 1:
        raise ValueError("class sizes must be >= 1")
    rng = np.random.default_rng([seed, 7])

    a_mat = -0.22 * np.eye(d) + 0.04 * rng.standard_normal((d, d)) / math.sqrt(d)
    b_vec = np.full((d, 1), 0.12) + 0.03 * rng.standard_normal((d, 1))
    theta_true = np.concatenate([a_mat, b_vec], axis=1)  # (d, d+1)

    theta_r_true = np.zeros(d + 2)  # [x coeffs, u coeff, intercept]
    theta_r_true[0] = 0.5
    theta_r_true[-2] = 0.45
    theta_r_true[-1] = 0.25
    if d > 1:
        theta_r_true[1] = -0.3

    pert_up = np.zeros_like(theta_true)
    pert_up[0, d] = drift_big
    if n_drift == 1:
        drift_members = [_linear_drift(theta_true)]
        drift_labels = ["truth"]
        drift_truth_idx = 0
    else:
        drift_members = [_linear_drift(theta_true + pert_up),
                         _linear_drift(theta_true - pert_up),
                         _linear_drift(theta_true)][3 - min(n_drift, 3):]
        drift_labels = ["u-col+", "u-col-", "truth"][3 - min(n_drift, 3):]
        drift_truth_idx = len(drift_members) - 1
        for j in range(n_drift - 3):
            pert = np.zeros_like(theta_true)
            row = j % d
            col = (j // d) % d
            sign = 1.0 if (j // (d * d)) % 2 == 0 else -1.0
            pert[row, col] = sign * drift_spread
            drift_members.append(_linear_drift(theta_true + pert))
            drift_labels.append(f"x[{row},{col}]{'+' if sign > 0 else '-'}")

    sat = np.zeros(d + 2)
    sat[-1] = saturating_offset
    reward_members = [_clipped_affine_reward(theta_r_true)]
    reward_labels = ["truth"]
    if n_reward >= 2:
        reward_members.append(_clipped_affine_reward(sat))
        reward_labels.append("saturating")
    for j in range(n_reward - 2):
        pert = np.zeros(d + 2)
        col = j % (d + 1)  # cycle x columns then the control column
        sign = 1.0 if (j // (d + 1)) % 2 == 0 else -1.0
        pert[col] = sign * reward_spread
        reward_members.append(_clipped_affine_reward(theta_r_true + pert))
        reward_labels.append(f"col{col}{'+' if sign > 0 else '-'}")

    u_abs = max(abs(float(u)) for u in policy_controls)
    env = DynamicsSpec(
        drift=_linear_drift(theta_true),
        diffusion=lambda x, u: g_const,
        reward=_clipped_affine_reward(theta_r_true),
        horizon=horizon,
        state_dim=d,
        control_dim=1,
        lipschitz=LipschitzConstants(
            l_f=float(np.linalg.norm(theta_true, 2) + max(drift_big, drift_spread)),
            l_b=float(np.linalg.norm(theta_r_true[:-1]) + reward_spread),
            l_g=0.0,
            l_pi=0.0,
        ),
    )
    policies = tuple(constant_policy(float(u), i) for i, u in enumerate(policy_controls))
    qs = (point_mass(np.full(d, float(x0)), 0),)
    return EnvCatalogEntry(
        name="linear_gaussian",
        env=env,
        grid=CandidateGrid(policies=policies, initial_dists=qs),
        drift_class=FiniteClass(tuple(drift_members), "drift", truth_index=drift_truth_idx,
                                labels=tuple(drift_labels)),
        reward_class=FiniteClass(tuple(reward_members), "reward", truth_index=0,
                                 labels=tuple(reward_labels)),
        oracles=("linear_flow",),
        measurement_delta=delta,
        # noise-magnitude budget: per-component observation std is g/sqrt(delta)
        # and must not exceed g_bound/sqrt(d)
        g_bound=g_const * math.sqrt(d / delta),
        audit_bounds=True,
        audit_box=tuple((-1.2, 1.2) for _ in range(d)),
        control_box=((-u_abs, u_abs),),
        params={"d": d, "p": p, "seed": seed, "n_drift": n_drift, "n_reward": n_reward,
                "g_const": g_const, "delta": delta, "drift_big": drift_big,
                "drift_spread": drift_spread, "reward_spread": reward_spread,
                "saturating_offset": saturating_offset,
                "policy_controls": [float(u) for u in policy_controls],
                "x0": x0, "horizon": horizon},
    )


# ---------------------------------------------------------------------------
# mean-reverting (OU) family
# ---------------------------------------------------------------------------

def make_ou(
    u_min: float = 0.5,
    u_max: float = 2.0,
    horizon: float = 1.0,
    seed: int = 0,
    n_controls: int = 3,
    alpha_grid: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0),
    q_points: Sequence[float] = (-1.0, -0.5),
    delta: float = 0.1,
) -> EnvCatalogEntry:
    """One-dimensional mean reversion dx = -u x dt + sqrt(2) dw.

    The control is the reversion rate, constant along each policy.  The drift
    class is the singleton truth; the reward family scales the state,
    b_alpha(x) = alpha x with the truth at alpha = 1.  Planning-grid initial
    states sit below zero: every return is then nonpositive, the all-zero
    reward candidate ties every pair at value zero, and the learner holds the
    lexicographic-first (worst) pair until data expel the small-alpha
    candidates.  Sampler-independency checks instead pin the initial state at
    the origin, where the marginal and transition moments have the closed
    forms exposed in :mod:`ctrlab.measurement`.
    """
    if not 0 < u_min <= u_max:
        raise ValueError("need 0 < u_min <= u_max")
    alphas = tuple(float(a) for a in alpha_grid)
    if not any(abs(a - 1.0) < 1e-12 for a in alphas):
        raise ValueError("alpha grid must include the truth alpha = 1")

    def drift(x, u):
        return -np.asarray(u, dtype=float) * np.asarray(x, dtype=float)

    def diffusion(x, u):
        return math.sqrt(2.0)

    def reward_of(alpha: float) -> Callable:
        def b(x, u, _a=alpha):
            x = np.asarray(x, dtype=float)
            return _a * (x[..., 0] if x.ndim > 1 else float(x[0]))
        return b

    truth_idx = next(i for i, a in enumerate(alphas) if abs(a - 1.0) < 1e-12)
    x_span = max(3.0, max(abs(float(z)) for z in q_points) + 3.0)
    env = DynamicsSpec(
        drift=drift,
        diffusion=diffusion,
        reward=reward_of(1.0),
        horizon=horizon,
        state_dim=1,
        control_dim=1,
        lipschitz=LipschitzConstants(l_f=max(u_max, x_span), l_b=1.0, l_g=0.0, l_pi=0.0),
    )
    controls = np.linspace(u_min, u_max, n_controls)
    policies = tuple(constant_policy(u, i) for i, u in enumerate(controls))
    qs = tuple(point_mass([z], i) for i, z in enumerate(q_points))
    return EnvCatalogEntry(
        name="ou",
        env=env,
        grid=CandidateGrid(policies=policies, initial_dists=qs),
        drift_class=FiniteClass((drift,), "drift", truth_index=0, labels=("truth",)),
        reward_class=FiniteClass(tuple(reward_of(a) for a in alphas), "reward",
                                 truth_index=truth_idx,
                                 labels=tuple(f"alpha={a}" for a in alphas)),
        oracles=("ou_second_moment", "ou_second_moment_averaged",
                 "ou_conditional_second_moment"),
        measurement_delta=delta,
        g_bound=math.sqrt(2.0 / delta),  # g sqrt(d/delta) with g = sqrt(2), d = 1
        audit_bounds=False,
        audit_box=((-x_span, x_span),),
        control_box=((u_min, u_max),),
        params={"u_min": u_min, "u_max": u_max, "horizon": horizon, "seed": seed,
                "n_controls": n_controls, "alpha_grid": list(alphas),
                "q_points": list(float(z) for z in q_points), "delta": delta},
    )


# ---------------------------------------------------------------------------
# deterministic golden-trace environment
# ---------------------------------------------------------------------------

def make_deterministic_1d(seed: int = 0, horizon: float = 1.0) -> EnvCatalogEntry:
    """Noise-free single-dimension environment for exactly replayable runs.

    True drift follows the control, f(x, u) = u; the alternative candidate
    reverses and amplifies it, f(x, u) = -1.4 u, so whichever policy the
    planner pairs it with is predicted to move opposite to reality, and one
    measurement of the instantaneous drift separates the two everywhere.
    The reward ramps in the state, b(x) = clip(x + 0.5, 0, 1), with one
    pointwise-dominating alternative clip(x + 0.8, 0, 1) that optimism must
    prefer until it is excluded.
    """

    def drift_true(x, u):
        return np.asarray(u, dtype=float) * np.ones_like(np.asarray(x, dtype=float))

    def drift_flip(x, u):
        return -1.4 * np.asarray(u, dtype=float) * np.ones_like(np.asarray(x, dtype=float))

    def reward_ramp(offset: float) -> Callable:
        def b(x, u, _o=offset):
            x = np.asarray(x, dtype=float)
            v = np.clip((x[..., 0] if x.ndim > 1 else x[0]) + _o, 0.0, 1.0)
            return v if x.ndim > 1 else float(v)
        return b

    env = DynamicsSpec(
        drift=drift_true,
        diffusion=lambda x, u: 0.0,
        reward=reward_ramp(0.5),
        horizon=horizon,
        state_dim=1,
        control_dim=1,
        lipschitz=LipschitzConstants(l_f=1.4, l_b=1.0, l_g=0.0, l_pi=0.0),
    )
    policies = (constant_policy(0.5, 0), constant_policy(-0.5, 1))
    qs = (point_mass([0.0], 0),)
    return EnvCatalogEntry(
        name="deterministic_1d",
        env=env,
        grid=CandidateGrid(policies=policies, initial_dists=qs),
        drift_class=FiniteClass((drift_flip, drift_true), "drift", truth_index=1,
                                labels=("flip", "truth")),
        reward_class=FiniteClass((reward_ramp(0.8), reward_ramp(0.5)), "reward",
                                 truth_index=1, labels=("dominating", "truth")),
        oracles=("exact_flow",),
        measurement_delta=0.1,
        g_bound=0.1,  # any positive budget; the diffusion itself is zero
        audit_bounds=True,
        audit_box=((-1.0, 1.0),),
        control_box=((-0.5, 0.5),),
        params={"seed": seed, "horizon": horizon},
    )


CATALOG: dict[str, Callable[..., EnvCatalogEntry]] = {
    "linear_gaussian": make_linear_gaussian,
    "ou": make_ou,
    "deterministic_1d": make_deterministic_1d,
}


def make_env(name: str, params: dict | None = None) -> EnvCatalogEntry:
    if name not in CATALOG:
        raise KeyError(f"unknown environment {name!r}; known: {sorted(CATALOG)}")
    return CATALOG[name](**(params or {}))


# ---------------------------------------------------------------------------
# Construction audits
# ---------------------------------------------------------------------------

def _sample_box(rng: np.random.Generator, box: tuple, n: int) -> np.ndarray:
    lo = np.asarray([b[0] for b in box])
    hi = np.asarray([b[1] for b in box])
    return rng.uniform(lo, hi, size=(n, len(box)))


def audit_entry(entry: EnvCatalogEntry, n_samples: int = 10_000, seed: int = 0) -> dict:
    """Numeric construction audit on a sampled state/control box.

    Checks truth membership of the designated class indices, the range
    bounds |f| <= 1 (L2) and b in [0, 1] for every class member (skipped when
    the entry opts out), and that finite-difference slopes stay within 1.05x
    of the declared Lipschitz constants.  Returns a report dict with an
    overall ``passed`` flag.
    """
    rng = np.random.default_rng([seed, 97])
    xs = _sample_box(rng, entry.audit_box, n_samples)
    us = _sample_box(rng, entry.control_box, n_samples)
    report: dict = {"name": entry.name, "checks": {}}

    truth_f = entry.drift_class.truth
    truth_b = entry.reward_class.truth
    same_f = np.allclose(np.asarray(truth_f(xs, us), dtype=float),
                         np.asarray(entry.env.drift(xs, us), dtype=float))
    same_b = np.allclose(np.asarray(truth_b(xs, us), dtype=float).reshape(-1),
                         np.asarray(entry.env.reward(xs, us), dtype=float).reshape(-1))
    report["checks"]["truth_membership"] = bool(same_f and same_b)

    if entry.audit_bounds:
        f_ok = all(
            float(np.max(np.linalg.norm(
                np.asarray(f(xs, us), dtype=float).reshape(n_samples, -1), axis=1))) <= 1.0 + 1e-9
            for f in entry.drift_class.members)
        b_vals_ok = all(
            float(np.min(np.asarray(b(xs, us), dtype=float))) >= -1e-9
            and float(np.max(np.asarray(b(xs, us), dtype=float))) <= 1.0 + 1e-9
            for b in entry.reward_class.members)
        report["checks"]["bounds"] = bool(f_ok and b_vals_ok)
    else:
        report["checks"]["bounds"] = "exempt"

    # Lipschitz audit: max finite-difference slope over sampled pairs
    n_pairs = min(n_samples // 2, 4000)
    xa, xb = xs[:n_pairs], xs[n_pairs:2 * n_pairs]
    ua, ub = us[:n_pairs], us[n_pairs:2 * n_pairs]
    dz = np.linalg.norm(xa - xb, axis=1) + np.linalg.norm(ua - ub, axis=1)
    keep = dz > 1e-9
    lc = entry.env.lipschitz

    def max_slope(vals_a, vals_b):
        diff = np.linalg.norm(
            np.asarray(vals_a, dtype=float).reshape(n_pairs, -1)
            - np.asarray(vals_b, dtype=float).reshape(n_pairs, -1), axis=1)
        return float(np.max(diff[keep] / dz[keep]))

    slope_f = max(max_slope(f(xa, ua), f(xb, ub)) for f in entry.drift_class.members)
    slope_b = max(max_slope(b(xa, ua), b(xb, ub)) for b in entry.reward_class.members)
    slope_g = max_slope(
        np.broadcast_to(np.asarray(entry.env.diffusion(xa, ua), dtype=float), (n_pairs,)).reshape(-1, 1),
        np.broadcast_to(np.asarray(entry.env.diffusion(xb, ub), dtype=float), (n_pairs,)).reshape(-1, 1))
    dx_only = np.linalg.norm(xa - xb, axis=1)
    keep_x = dx_only > 1e-9

    def max_policy_slope(policy):
        diff = np.linalg.norm(
            np.asarray(policy(xa), dtype=float) - np.asarray(policy(xb), dtype=float), axis=1)
        return float(np.max(diff[keep_x] / dx_only[keep_x]))

    slope_pi = max(max_policy_slope(p) for p in entry.grid.policies)
    report["checks"]["lipschitz"] = {
        "drift": {"measured": slope_f, "declared": lc.l_f, "ok": slope_f <= lc.l_f * 1.05},
        "reward": {"measured": slope_b, "declared": lc.l_b, "ok": slope_b <= lc.l_b * 1.05},
        "diffusion": {"measured": slope_g, "declared": lc.l_g, "ok": slope_g <= lc.l_g * 1.05 + 1e-12},
        "policy": {"measured": slope_pi, "declared": lc.l_pi, "ok": slope_pi <= lc.l_pi * 1.05 + 1e-12},
    }
    lip_ok = all(v["ok"] for v in report["checks"]["lipschitz"].values())
    bounds_ok = report["checks"]["bounds"] in (True, "exempt")
    report["passed"] = bool(report["checks"]["truth_membership"] and bounds_ok and lip_ok)
    return report
