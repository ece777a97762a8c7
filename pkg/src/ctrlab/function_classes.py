"""Hypothesis classes for drift and reward, least-squares version spaces,
explicit confidence radii, and a greedy sequential-complexity estimator.

The empirical losses over a dataset of measurements (x, u, y, r) are

    loss(f) = sum ||f(x, u) - y||^2        (drift candidates)
    loss(b) = sum  (b(x, u) - r)^2         (reward candidates)

and a confidence set at radius beta keeps every candidate within beta of
the empirical minimiser.  Finite classes enumerate their sets; linear
parametric classes expose a membership predicate instead, since their
version spaces are not enumerable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .measurement import Measurement
from .sde import _as_batch

__all__ = [
    "FiniteClass",
    "LinearDriftClass",
    "LinearRewardClass",
    "Dataset",
    "ConfidenceRadii",
    "ErmFit",
    "FiniteConfidenceSet",
    "LinearConfidenceSet",
    "EmpiricalDistribution",
    "EluderEstimate",
    "empirical_loss_drift",
    "empirical_loss_reward",
    "erm_fit",
    "confidence_set",
    "compute_radii",
    "eluder_greedy_estimate",
    "eluder_exhaustive_length",
    "replay_witness",
    "difference_class",
    "FEATURE_MAPS",
    "finite_class_from_config",
]

RIDGE = 1e-8


# ---------------------------------------------------------------------------
# Classes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FiniteClass:
    """A finite list of candidate functions with a known-index truth (optional).

    ``members`` are callables over batched (x, u).  Drift members return
    arrays shaped like x; reward members return one value per row.
    ``log_cardinality`` defaults to log(len(members)) and doubles as the
    log covering number at every resolution, a finite class being its own net.
    """

    members: tuple
    kind: str  # "drift" | "reward"
    truth_index: int | None = None
    log_cardinality: float | None = None
    labels: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("drift", "reward"):
            raise ValueError("kind must be 'drift' or 'reward'")
        if len(self.members) == 0:
            raise ValueError("a finite class must be non-empty")
        if self.truth_index is not None and not (0 <= self.truth_index < len(self.members)):
            raise ValueError("truth_index out of range")
        if self.log_cardinality is None:
            object.__setattr__(self, "log_cardinality", math.log(len(self.members)))

    def __len__(self) -> int:
        return len(self.members)

    @property
    def truth(self):
        if self.truth_index is None:
            raise ValueError("class has no designated truth")
        return self.members[self.truth_index]

    def log_covering(self, eps: float) -> float:
        return float(self.log_cardinality)


def _parametric_log_covering(n_params: int, radius: float, feature_bound: float, eps: float) -> float:
    return n_params * math.log1p(2.0 * radius * feature_bound / eps)


@dataclass(frozen=True)
class LinearDriftClass:
    """Drift candidates f(z) = Theta phi(z) with ||Theta||_F <= radius.

    ``phi`` maps batched (x, u) to features (..., p); ``feature_bound`` is a
    sup bound on ||phi||.  The log covering number at resolution eps uses the
    standard parametric bound (d p) log(1 + 2 radius feature_bound / eps).
    """

    phi: Callable[[np.ndarray, np.ndarray], np.ndarray]
    state_dim: int
    n_features: int
    radius: float
    feature_bound: float
    kind: str = "drift"

    def log_covering(self, eps: float) -> float:
        return _parametric_log_covering(
            self.state_dim * self.n_features, self.radius, self.feature_bound, eps)

    def member(self, theta: np.ndarray) -> Callable:
        theta = np.asarray(theta, dtype=float).reshape(self.state_dim, self.n_features)

        def f(x, u, _th=theta):
            return np.asarray(self.phi(x, u), dtype=float) @ _th.T

        return f


@dataclass(frozen=True)
class LinearRewardClass:
    """Reward candidates b(z) = <theta, phi(z)> with ||theta|| <= radius."""

    phi: Callable[[np.ndarray, np.ndarray], np.ndarray]
    n_features: int
    radius: float
    feature_bound: float
    kind: str = "reward"

    def log_covering(self, eps: float) -> float:
        return _parametric_log_covering(self.n_features, self.radius, self.feature_bound, eps)

    def member(self, theta: np.ndarray) -> Callable:
        theta = np.asarray(theta, dtype=float).reshape(self.n_features)

        def b(x, u, _th=theta):
            return np.asarray(self.phi(x, u), dtype=float) @ _th

        return b


# ---------------------------------------------------------------------------
# Dataset
# ---------------------------------------------------------------------------

class Dataset:
    """Append-only, order-preserving collection of measurements.

    Losses are order-insensitive sums, but sequential diagnostics rely on the
    recorded order, so records are never reordered.  Column views (X, U, Y, R)
    are materialised lazily for vectorised loss evaluation.
    """

    def __init__(self, measurements: Sequence[Measurement] = ()):
        self._records: list[Measurement] = []
        self._arrays: tuple | None = None
        self.extend(measurements)

    def append(self, m: Measurement) -> None:
        self._records.append(m)
        self._arrays = None

    def extend(self, ms: Sequence[Measurement]) -> None:
        for m in ms:
            self.append(m)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def __getitem__(self, i):
        return self._records[i]

    @property
    def records(self) -> tuple:
        return tuple(self._records)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        if self._arrays is None:
            if not self._records:
                self._arrays = (np.zeros((0, 1)), np.zeros((0, 1)), np.zeros((0, 1)), np.zeros(0))
            else:
                self._arrays = (
                    np.stack([m.x for m in self._records]),
                    np.stack([m.u for m in self._records]),
                    np.stack([m.y for m in self._records]),
                    np.asarray([m.r for m in self._records], dtype=float),
                )
        return self._arrays


def empirical_loss_drift(f: Callable, data: Dataset) -> float:
    """Sum of squared drift-observation residuals ||f(x,u) - y||^2 over the data."""
    if len(data) == 0:
        return 0.0
    x, u, y, _ = data.arrays()
    pred = np.asarray(f(x, u), dtype=float).reshape(y.shape)
    return float(np.sum((pred - y) ** 2))


def empirical_loss_reward(b: Callable, data: Dataset) -> float:
    """Sum of squared reward residuals (b(x,u) - r)^2 over the data."""
    if len(data) == 0:
        return 0.0
    x, u, _, r = data.arrays()
    pred = _as_batch(b(x, u), x).reshape(r.shape)
    return float(np.sum((pred - r) ** 2))


def _loss_fn(kind: str) -> Callable:
    return empirical_loss_drift if kind == "drift" else empirical_loss_reward


def finite_losses(cls: FiniteClass, data: Dataset) -> np.ndarray:
    loss = _loss_fn(cls.kind)
    return np.asarray([loss(member, data) for member in cls.members])


# ---------------------------------------------------------------------------
# ERM and confidence sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ErmFit:
    member: Callable
    loss: float
    index: int | None = None          # finite classes
    params: np.ndarray | None = None  # linear classes


def erm_fit(cls, data: Dataset, loss_kind: str | None = None) -> ErmFit:
    """Empirical risk minimiser over the class.

    Finite classes use an exhaustive argmin with ties broken by lowest index;
    linear classes solve ridge-regularised least squares in closed form and
    project the parameters back to the norm ball.  On empty data the fit is
    the index-0 member (finite) or the zero parameter vector (linear).
    """
    kind = loss_kind or cls.kind
    if isinstance(cls, FiniteClass):
        if len(data) == 0:
            return ErmFit(cls.members[0], 0.0, index=0)
        losses = finite_losses(cls, data)
        idx = int(np.argmin(losses))  # argmin returns the first minimiser
        return ErmFit(cls.members[idx], float(losses[idx]), index=idx)

    x, u, y, r = data.arrays()
    if isinstance(cls, LinearDriftClass):
        if len(data) == 0:
            theta = np.zeros((cls.state_dim, cls.n_features))
            return ErmFit(cls.member(theta), 0.0, params=theta)
        feats = np.asarray(cls.phi(x, u), dtype=float)
        gram = feats.T @ feats + RIDGE * np.eye(cls.n_features)
        try:
            theta = np.linalg.solve(gram, feats.T @ y.reshape(len(data), -1)).T
        except np.linalg.LinAlgError as e:
            raise ArithmeticError("normal equations singular beyond ridge") from e
        norm = np.linalg.norm(theta)
        if norm > cls.radius:
            theta = theta * (cls.radius / norm)
        member = cls.member(theta)
        return ErmFit(member, empirical_loss_drift(member, data), params=theta)

    if isinstance(cls, LinearRewardClass):
        if len(data) == 0:
            theta = np.zeros(cls.n_features)
            return ErmFit(cls.member(theta), 0.0, params=theta)
        feats = np.asarray(cls.phi(x, u), dtype=float)
        gram = feats.T @ feats + RIDGE * np.eye(cls.n_features)
        try:
            theta = np.linalg.solve(gram, feats.T @ r)
        except np.linalg.LinAlgError as e:
            raise ArithmeticError("normal equations singular beyond ridge") from e
        norm = np.linalg.norm(theta)
        if norm > cls.radius:
            theta = theta * (cls.radius / norm)
        member = cls.member(theta)
        return ErmFit(member, empirical_loss_reward(member, data), params=theta)

    raise TypeError(f"unsupported class type {type(cls).__name__}")


@dataclass(frozen=True)
class FiniteConfidenceSet:
    """All members within beta of the empirical minimum, original order kept."""

    indices: tuple
    members: tuple
    losses: np.ndarray
    min_loss: float
    beta: float

    def __len__(self):
        return len(self.indices)

    def __contains__(self, index: int) -> bool:
        return index in self.indices


@dataclass(frozen=True)
class LinearConfidenceSet:
    """Membership predicate {params : loss(params) <= min_loss + beta}."""

    cls: object
    data: Dataset
    min_loss: float
    beta: float
    erm_params: np.ndarray

    def contains(self, params: np.ndarray) -> bool:
        member = self.cls.member(params)
        loss = _loss_fn(self.cls.kind)(member, self.data)
        return loss <= self.min_loss + self.beta


def confidence_set(cls, data: Dataset, beta: float, loss_kind: str | None = None):
    """Version space at radius beta; always contains the ERM."""
    if isinstance(cls, FiniteClass):
        losses = finite_losses(cls, data) if len(data) else np.zeros(len(cls))
        min_loss = float(losses.min())
        keep = np.where(losses <= min_loss + beta)[0]
        return FiniteConfidenceSet(
            indices=tuple(int(i) for i in keep),
            members=tuple(cls.members[i] for i in keep),
            losses=losses,
            min_loss=min_loss,
            beta=float(beta),
        )
    fit = erm_fit(cls, data, loss_kind)
    return LinearConfidenceSet(cls=cls, data=data, min_loss=fit.loss,
                               beta=float(beta), erm_params=fit.params)


# ---------------------------------------------------------------------------
# Confidence radii
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfidenceRadii:
    """Version-space radii for a fixed measurement budget.

    With eps = 1/N^2, logR/logF the log covering numbers at eps, and G the
    diffusion budget:

        beta_R = 8 log(|R_eps|/delta)
                 + 2 eps N (8 + sqrt(8 log(4 N^2 |R_eps|/delta)))
        beta_F = 8 G^2 log(|F_eps|/delta)
                 + 2 eps N (8 + sqrt(8 G^2 log(4 N^2 |F_eps|/delta)))

    Both are multiplied by ``c_scale`` (default 1); the closed forms are
    conservative and experiments may shrink them uniformly.
    """

    beta_f: float
    beta_r: float
    delta: float
    n_budget: int
    epsilon_net: float
    c_scale: float = 1.0


def compute_radii(
    n_budget: int,
    delta: float,
    g_bound: float,
    class_f,
    class_r,
    c_scale: float = 1.0,
) -> ConfidenceRadii:
    if n_budget < 1:
        raise ValueError("n_budget must be >= 1")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if g_bound <= 0:
        raise ValueError("g_bound must be positive")
    n = float(n_budget)
    eps = 1.0 / n**2
    log_f = class_f.log_covering(eps)
    log_r = class_r.log_covering(eps)
    log_inv_delta = math.log(1.0 / delta)
    tail = math.log(4.0) + 2.0 * math.log(n)
    g2 = g_bound**2
    beta_r = 8.0 * (log_r + log_inv_delta) \
        + 2.0 * eps * n * (8.0 + math.sqrt(8.0 * (tail + log_r + log_inv_delta)))
    beta_f = 8.0 * g2 * (log_f + log_inv_delta) \
        + 2.0 * eps * n * (8.0 + math.sqrt(8.0 * g2 * (tail + log_f + log_inv_delta)))
    return ConfidenceRadii(
        beta_f=c_scale * beta_f,
        beta_r=c_scale * beta_r,
        delta=delta,
        n_budget=n_budget,
        epsilon_net=eps,
        c_scale=c_scale,
    )


# ---------------------------------------------------------------------------
# Sequential complexity (greedy lower bound)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EmpiricalDistribution:
    """Equal-weight empirical distribution over (x, u) points."""

    xs: np.ndarray
    us: np.ndarray

    def expectation(self, h: Callable) -> float:
        return float(np.mean(_as_batch(h(self.xs, self.us), self.xs)))


@dataclass(frozen=True)
class EluderEstimate:
    """Greedy lower-bound witness for the sequential-independence length.

    The witness is a sequence of (distribution index, function index) pairs;
    each step l satisfies |E_{p_l} h_l| > epsilon while the previously chosen
    distributions keep sum_i |E_{p_i} h_l| <= epsilon_prime.  Replaying the
    stored indices against the same inputs reproduces those inequalities
    exactly.
    """

    epsilon: float
    epsilon_prime: float
    length: int
    witness: tuple  # of (dist_index, fn_index)


def difference_class(cls: FiniteClass, truth: Callable | None = None) -> list[Callable]:
    """Squared candidate-truth gaps: ||f - f*||^2 or (b - b*)^2 per member."""
    truth = truth if truth is not None else cls.truth
    if cls.kind == "drift":
        def make(f):
            def h(x, u, _f=f):
                x2 = np.atleast_2d(x)
                u2 = np.atleast_2d(u)
                diff = np.asarray(_f(x2, u2), dtype=float) - np.asarray(truth(x2, u2), dtype=float)
                return np.sum(diff.reshape(len(x2), -1) ** 2, axis=1)
            return h
    else:
        def make(b):
            def h(x, u, _b=b):
                x2 = np.atleast_2d(x)
                u2 = np.atleast_2d(u)
                return (_as_batch(_b(x2, u2), x2) - _as_batch(truth(x2, u2), x2)) ** 2
            return h
    return [make(member) for member in cls.members]


def _expectation_matrix(
    fns: Sequence[Callable], dists: Sequence[EmpiricalDistribution]
) -> np.ndarray:
    return np.asarray([[d.expectation(h) for h in fns] for d in dists])


def eluder_greedy_estimate(
    class_diff: Sequence[Callable],
    distributions: Sequence[EmpiricalDistribution],
    epsilon: float,
    epsilon_prime: float | None = None,
    max_length: int | None = None,
) -> EluderEstimate:
    """Greedily build a long sequence of distributions witnessing the length.

    A step is feasible when some pair (p, h) has |E_p h| > epsilon while the
    already-chosen distributions keep h's accumulated expectation at most
    epsilon_prime.  The appended distribution burdens every hypothesis's
    remaining budget, whichever h witnessed it, so the greedy rule picks the
    feasible distribution with the least total burden over still-live
    hypotheses, recording its lowest-index witness; ties break by index.
    The achieved length is a lower bound on the exact combinatorial optimum.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    eps_p = epsilon if epsilon_prime is None else epsilon_prime
    if eps_p < epsilon:
        raise ValueError("epsilon_prime must be >= epsilon")
    m = np.abs(_expectation_matrix(class_diff, distributions))  # (n_dists, n_fns)
    n_dists, n_fns = m.shape
    cap = max_length if max_length is not None \
        else n_fns * (int(eps_p / epsilon) + 1) * max(n_dists, 1)
    sums = np.zeros(n_fns)
    witness: list[tuple[int, int]] = []
    while len(witness) < cap:
        alive = sums <= eps_p
        valid = (m > epsilon) & alive[None, :]
        feasible = valid.any(axis=1)
        if not feasible.any():
            break
        burden = np.where(feasible, m[:, alive].sum(axis=1), np.inf)
        j = int(np.argmin(burden))
        k = int(np.argmax(valid[j]))  # lowest valid witness index
        witness.append((j, k))
        sums += m[j, :]
    return EluderEstimate(
        epsilon=float(epsilon),
        epsilon_prime=float(eps_p),
        length=len(witness),
        witness=tuple(witness),
    )


def replay_witness(
    class_diff: Sequence[Callable],
    distributions: Sequence[EmpiricalDistribution],
    estimate: EluderEstimate,
) -> bool:
    """Recompute the witness inequalities from scratch; True iff all hold."""
    m = np.abs(_expectation_matrix(class_diff, distributions))
    chosen: list[int] = []
    for dist_idx, fn_idx in estimate.witness:
        if not m[dist_idx, fn_idx] > estimate.epsilon:
            return False
        if sum(m[j, fn_idx] for j in chosen) > estimate.epsilon_prime:
            return False
        chosen.append(dist_idx)
    return True


def eluder_exhaustive_length(
    class_diff: Sequence[Callable],
    distributions: Sequence[EmpiricalDistribution],
    epsilon: float,
    epsilon_prime: float | None = None,
    cap: int = 32,
) -> int:
    """Exact optimum by depth-first search over distribution sequences.

    Exponential in the answer; intended for small cross-checking instances.
    """
    eps_p = epsilon if epsilon_prime is None else epsilon_prime
    m = np.abs(_expectation_matrix(class_diff, distributions))
    n_dists, n_fns = m.shape
    best = 0

    def extend(prefix: list[int]) -> None:
        nonlocal best
        best = max(best, len(prefix))
        if len(prefix) >= cap:
            return
        for j in range(n_dists):
            ok = False
            for k in range(n_fns):
                if m[j, k] > epsilon and sum(m[i, k] for i in prefix) <= eps_p:
                    ok = True
                    break
            if ok:
                prefix.append(j)
                extend(prefix)
                prefix.pop()

    extend([])
    return best


# ---------------------------------------------------------------------------
# Config-driven construction
# ---------------------------------------------------------------------------

def _phi_identity(x, u):
    return np.asarray(x, dtype=float)


def _phi_concat(x, u):
    return np.concatenate([np.atleast_2d(x), np.atleast_2d(u)], axis=-1)


def _phi_fourier(k: int):
    def phi(x, u):
        z = np.concatenate([np.atleast_2d(x), np.atleast_2d(u)], axis=-1)
        parts = [np.sin(j * z) for j in range(1, k + 1)] + [np.cos(j * z) for j in range(1, k + 1)]
        return np.concatenate(parts, axis=-1)
    return phi


FEATURE_MAPS: dict[str, Callable] = {
    "identity": lambda: _phi_identity,
    "state-control-concat": lambda: _phi_concat,
}


def _resolve_feature_map(name: str) -> Callable:
    if name in FEATURE_MAPS:
        return FEATURE_MAPS[name]()
    if name.startswith("fourier-"):
        k = int(name.split("-", 1)[1])
        if k < 1:
            raise ValueError("fourier order must be >= 1")
        return _phi_fourier(k)
    raise ValueError(f"unknown feature map {name!r}")


def finite_class_from_config(cfg: dict, kind: str) -> FiniteClass:
    """Build a finite linear class from parameter vectors plus a named feature map.

    Expected keys: ``feature_map`` (registry name), ``parameters`` (list of
    candidate parameter vectors/matrices), optional ``truth_index``, and for
    drift candidates ``state_dim``.
    """
    phi = _resolve_feature_map(cfg["feature_map"])
    params = [np.asarray(p, dtype=float) for p in cfg["parameters"]]
    if not params:
        raise ValueError("parameters must be non-empty")
    truth_index = cfg.get("truth_index")
    if kind == "drift":
        d = int(cfg["state_dim"])
        members = []
        for p in params:
            theta = p.reshape(d, -1)
            members.append(lambda x, u, _t=theta: np.asarray(phi(x, u), dtype=float) @ _t.T)
    else:
        members = [lambda x, u, _t=p.reshape(-1): np.asarray(phi(x, u), dtype=float) @ _t
                   for p in params]
    return FiniteClass(members=tuple(members), kind=kind, truth_index=truth_index)
