"""Per-device aging-control MDP.

State (x, l): age of the buffered reading x in 1..M and current location l.
Each slot the device earns U(x) and, if it uploads, pays p(l); uploading resets
the age to 1, deferring ages it by one (capped at M). Arrays indexed by age use
row ``x - 1``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import InvalidInstance, NoConvergence, StructureViolation
from .mobility import MobilityModel, stationary_distribution

logger = logging.getLogger(__name__)


def linear_utility(max_age: int) -> np.ndarray:
    """U(x) = max(M - x, 0) for x = 1..M."""
    x = np.arange(1, max_age + 1)
    return np.maximum(max_age - x, 0).astype(float)


@dataclass(frozen=True, eq=False)
class AgingMdpInstance:
    model: MobilityModel
    max_age: int
    utility: np.ndarray
    prices: np.ndarray

    def __post_init__(self):
        U = np.asarray(self.utility, dtype=float)
        p = np.asarray(self.prices, dtype=float)
        if self.max_age < 2:
            raise InvalidInstance("max_age must be >= 2")
        if U.shape != (self.max_age,):
            raise InvalidInstance(f"utility must have length M={self.max_age}")
        if np.any(np.diff(U) > 0):
            raise InvalidInstance("utility must be non-increasing in age")
        if p.shape != (self.model.num_locations,):
            raise InvalidInstance("one price per location required")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise InvalidInstance("prices must be finite and non-negative")
        object.__setattr__(self, "utility", U)
        object.__setattr__(self, "prices", p)

    @property
    def num_locations(self):
        return self.model.num_locations

    @property
    def price_ladder(self) -> np.ndarray:
        """Sorted distinct prices P_1 < ... < P_K (exact equality, no clustering)."""
        return np.unique(self.prices)

    def price_rank(self) -> np.ndarray:
        """0-based index into :attr:`price_ladder` for each location."""
        return np.searchsorted(self.price_ladder, self.prices)

    def with_prices(self, prices) -> "AgingMdpInstance":
        return AgingMdpInstance(self.model, self.max_age, self.utility, np.asarray(prices, float))


@dataclass(frozen=True, eq=False)
class DeterministicPolicy:
    """``action[x-1, l]`` is 1 to upload in state (x, l), 0 to defer."""

    action: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.action)
        if not np.isin(a, (0, 1)).all():
            raise ValueError("policy entries must be 0 or 1")
        object.__setattr__(self, "action", a.astype(np.int8))


@dataclass(frozen=True, eq=False)
class ThresholdPolicy:
    """Per-location AoI thresholds: upload at l iff age > per_location[l].

    ``per_price`` holds the ladder tau^(1..K) when every location sharing a
    price also shares a threshold, else None.
    """

    per_location: np.ndarray
    per_price: tuple | None = None

    def __post_init__(self):
        t = np.asarray(self.per_location, dtype=np.int64)
        if t.ndim != 1 or np.any(t < 0):
            raise ValueError("thresholds must be a vector of non-negative integers")
        object.__setattr__(self, "per_location", t)

    @classmethod
    def from_prices(cls, per_location, prices) -> "ThresholdPolicy":
        t = np.asarray(per_location, dtype=np.int64)
        ladder = []
        for P in np.unique(prices):
            vals = np.unique(t[np.asarray(prices) == P])
            if len(vals) != 1:
                return cls(t, None)
            ladder.append(int(vals[0]))
        return cls(t, tuple(ladder))

    def action_table(self, max_age: int) -> np.ndarray:
        x = np.arange(1, max_age + 1)[:, None]
        return (x > self.per_location[None, :]).astype(np.int8)

    def __len__(self):
        return len(self.per_location)


def as_thresholds(thresholds) -> np.ndarray:
    if isinstance(thresholds, ThresholdPolicy):
        return thresholds.per_location
    return np.asarray(thresholds, dtype=np.int64)


@dataclass(eq=False)
class MdpSolution:
    instance: AgingMdpInstance
    value: np.ndarray
    gain: float
    policy: DeterministicPolicy
    delta_h: np.ndarray
    residual: float
    iterations: int
    thresholds: ThresholdPolicy | None = None
    observations: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Bellman operator


def _q_values(inst: AgingMdpInstance, V: np.ndarray):
    Lam = inst.model.transitions
    U = inst.utility[:, None]
    ev_fresh = Lam @ V[0]
    shifted = np.vstack([V[1:], V[-1:]])
    ev_aged = shifted @ Lam.T
    q_up = U - inst.prices[None, :] + ev_fresh[None, :]
    q_defer = U + ev_aged
    return q_up, q_defer


def _tie_tol(inst: AgingMdpInstance, tol: float) -> float:
    scale = 1.0 + np.abs(inst.utility).max() + inst.prices.max()
    return max(100 * tol, 1e-12) * scale


def solve_average_reward(instance: AgingMdpInstance, tol: float = 1e-9,
                         max_iter: int = 1_000_000, damping: float = 0.5) -> MdpSolution:
    """Relative value iteration anchored at state (x=1, l=0).

    The damped update ``h <- h + damping * (T h - h)`` is RVI on the
    aperiodic transform of the chain; it has the same gain and greedy
    policies and converges on periodic mobility chains. Iterates until the
    span of ``T h - h`` drops below ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    M, L = instance.max_age, instance.num_locations
    h = np.zeros((M, L))
    span = np.inf
    for it in range(1, max_iter + 1):
        q_up, q_defer = _q_values(instance, h)
        diff = np.maximum(q_up, q_defer) - h
        lo, hi = diff.min(), diff.max()
        span = hi - lo
        if span < tol:
            break
        h = h + damping * diff
        h -= h[0, 0]
    else:
        raise NoConvergence(f"RVI hit {max_iter} iterations, span {span:.3e}", residual=span)
    gain = 0.5 * (lo + hi)
    q_up, q_defer = _q_values(instance, h)
    dH = q_up - q_defer
    action = (dH >= -_tie_tol(instance, tol)).astype(np.int8)
    residual = float(np.abs(np.maximum(q_up, q_defer) - h - gain).max())
    sol = MdpSolution(instance, h, float(gain), DeterministicPolicy(action), dH, residual, it)
    try:
        sol.thresholds = extract_thresholds(sol)
    except StructureViolation as exc:
        logger.warning("%s", exc)
    return sol


def extract_thresholds(solution: MdpSolution) -> ThresholdPolicy:
    """Read per-location thresholds off the greedy policy.

    tau_l is the largest age at which deferring is optimal (0 when uploading
    already at age 1, M when never uploading). Raises StructureViolation if
    some location uploads at an age and defers at a later one. Price-ordering
    checks between locations with identical transition rows are appended to
    ``solution.observations``.
    """
    a = solution.policy.action
    M, L = a.shape
    bad = [(x + 1, l) for l in range(L) for x in range(M - 1) if a[x, l] == 1 and a[x + 1, l] == 0]
    if bad:
        raise StructureViolation(f"policy not of threshold form at {bad[:5]}", bad)
    tau = M - a.sum(axis=0).astype(np.int64)
    inst = solution.instance
    Lam, p = inst.model.transitions, inst.prices
    obs = []
    for i in range(L):
        for j in range(i + 1, L):
            if np.array_equal(Lam[i], Lam[j]):
                lo, hi = (i, j) if p[i] <= p[j] else (j, i)
                if p[lo] == p[hi] and tau[lo] != tau[hi]:
                    obs.append(f"equal price and rows at {lo},{hi} but thresholds {tau[lo]}!={tau[hi]}")
                elif tau[lo] > tau[hi]:
                    obs.append(f"cheaper location {lo} has larger threshold than {hi}")
    solution.observations.extend(obs)
    return ThresholdPolicy.from_prices(tau, p)


# ---------------------------------------------------------------------------
# exact evaluation on the (age, location) product chain


def product_chain(instance: AgingMdpInstance, action: np.ndarray):
    """Transition matrix and one-step reward of the chain induced by ``action``.

    State index is ``(x - 1) * L + l``.
    """
    M, L = instance.max_age, instance.num_locations
    a = np.asarray(action).reshape(M, L)
    ages = np.arange(M)[:, None]
    nxt = np.where(a == 1, 0, np.minimum(ages + 1, M - 1))
    n = M * L
    P = np.zeros((n, n))
    src = np.repeat(np.arange(n), L)
    dst = (np.repeat(nxt.ravel(), L) * L + np.tile(np.arange(L), n))
    P[src, dst] = np.tile(instance.model.transitions, (M, 1)).ravel()
    r = (instance.utility[:, None] - instance.prices[None, :] * a).ravel()
    return P, r


def chain_gain(P: np.ndarray, r: np.ndarray, init: np.ndarray):
    """Long-run average reward from ``init`` and the limiting occupancy.

    Handles several recurrent classes by weighting each class's stationary
    reward with its absorption probability.
    """
    n = P.shape[0]
    ncomp, lab = connected_components(P > 0, directed=True, connection="strong")
    closed = []
    for c in range(ncomp):
        members = np.flatnonzero(lab == c)
        if P[np.ix_(members, lab != c)].sum() == 0:
            closed.append(members)
    in_closed = np.zeros(n, bool)
    for m in closed:
        in_closed[m] = True
    trans = np.flatnonzero(~in_closed)
    occupancy = np.zeros(n)
    if trans.size:
        A = np.eye(trans.size) - P[np.ix_(trans, trans)]
        B = np.stack([P[np.ix_(trans, m)].sum(axis=1) for m in closed], axis=1)
        absorb = np.linalg.solve(A, B)
    gain = 0.0
    for k, m in enumerate(closed):
        w = init[m].sum() + (init[trans] @ absorb[:, k] if trans.size else 0.0)
        if w <= 0:
            continue
        pi_c = stationary_distribution(P[np.ix_(m, m)])
        occupancy[m] += w * pi_c
        gain += w * float(pi_c @ r[m])
    return gain, occupancy


def _fresh_start(instance: AgingMdpInstance) -> np.ndarray:
    init = np.zeros(instance.max_age * instance.num_locations)
    init[: instance.num_locations] = instance.model.stationary
    return init


def policy_gain(instance: AgingMdpInstance, action) -> float:
    """Exact average reward of a deterministic policy, starting from a fresh
    reading at a stationary location."""
    P, r = product_chain(instance, action)
    return chain_gain(P, r, _fresh_start(instance))[0]


def average_reward(instance: AgingMdpInstance, policy) -> float:
    tau = as_thresholds(policy)
    if tau.shape != (instance.num_locations,):
        raise ValueError("threshold vector length does not match the number of locations")
    return policy_gain(instance, ThresholdPolicy(tau).action_table(instance.max_age))


def stationary_upload_prices(instance: AgingMdpInstance, action, eps: float = 1e-12) -> set:
    """Prices at which uploads happen with positive long-run probability."""
    P, r = product_chain(instance, action)
    _, occ = chain_gain(P, r, _fresh_start(instance))
    M, L = instance.max_age, instance.num_locations
    up_mass = (occ.reshape(M, L) * np.asarray(action).reshape(M, L)).sum(axis=0)
    return {float(instance.prices[l]) for l in range(L) if up_mass[l] > eps}


# ---------------------------------------------------------------------------
# closed-form upload-set predicates


@dataclass
class UploadSetPrediction:
    predicted: set
    ladder: np.ndarray
    # per price level i (rows) and location l (cols)
    K: np.ndarray
    K_bar: np.ndarray
    S: np.ndarray
    # per price level
    cond_tail: np.ndarray
    cond_fresh: np.ndarray
    never_upload: bool


def upload_set_conditions(instance: AgingMdpInstance) -> UploadSetPrediction:
    """Predict the set of prices used by the optimal policy from the
    closed-form sufficient conditions.

    For price level i and location l with K_{l,i} the one-step probability
    of moving into a location priced at most P_i:

    * ``S[i, l] = sum_{x=2..M} (U(x)-U(M)) (1-K_{l,i}) + U(1) - U(M)``;
    * ``cond_tail[i]``: S[i, l] < p(l) for every l priced above P_i, so no
      price above P_i is used;
    * ``cond_fresh[i]``: some location priced P_i satisfies
      ``U(1) - (Kbar U(2) + (1-Kbar) U(M)) > P_i``.

    With P_1 = 0 the prediction is {P_1} plus every P_i, i <= k*, whose
    ``cond_fresh`` holds, where k* is the first level with ``cond_tail``.
    With P_1 > 0 and ``sum_{x=1..M} (U(x)-U(M)) < p(l)`` everywhere, nothing
    is ever uploaded.
    """
    U, p = instance.utility, instance.prices
    ladder = instance.price_ladder
    Lam = instance.model.transitions
    Kn = len(ladder)
    members = np.stack([p <= P for P in ladder])          # (K, L)
    K = members.astype(float) @ Lam.T                     # K[i, l]
    K_bar = K - np.vstack([np.zeros(len(p)), K[:-1]])
    tail = (U[1:] - U[-1]).sum()
    S = tail * (1.0 - K) + U[0] - U[-1]
    cond_tail = np.array([np.all(S[i][~members[i]] < p[~members[i]]) for i in range(Kn)])
    cond_fresh = np.zeros(Kn, bool)
    for i, P in enumerate(ladder):
        at_level = p == P
        lhs = U[0] - (K_bar[i] * U[1] + (1 - K_bar[i]) * U[-1])
        cond_fresh[i] = bool(np.any(lhs[at_level] > P))
    never = bool(ladder[0] > 0 and np.all((U - U[-1]).sum() < p))
    if never:
        predicted = set()
    else:
        k_star = int(np.argmax(cond_tail))
        predicted = {float(ladder[i]) for i in range(k_star + 1)
                     if (i == 0 and ladder[0] == 0) or cond_fresh[i]}
    return UploadSetPrediction(predicted, ladder, K, K_bar, S, cond_tail, cond_fresh, never)
