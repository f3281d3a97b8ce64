"""Monte Carlo replay of threshold policies and brute-force search oracles."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import EmptyTrace, InfeasibleStart, SearchSpaceTooLarge
from .joac import JoacInstance, evaluate, feasibility_of, t_max as compute_t_max
from .mdp import AgingMdpInstance, ThresholdPolicy, as_thresholds, average_reward, product_chain
from .mobility import MobilityModel, stationary_distribution

logger = logging.getLogger(__name__)

SEARCH_LIMIT = 10**6
ENUM_LIMIT = 20


@dataclass
class SimResult:
    """Replay statistics.

    ``empirical_y[i, z]`` is the fraction of readings collected at i that were
    uploaded at z; ``aoi_hist[i, t-1]`` the fraction uploaded at age t.
    """

    sample_count: int
    slots: int
    empirical_y: np.ndarray
    aoi_hist: np.ndarray
    mean_reward: float
    reward_se: float
    upload_volume: np.ndarray
    origin_counts: np.ndarray

    @property
    def mean_aoi(self) -> np.ndarray:
        t = np.arange(1, self.aoi_hist.shape[1] + 1)
        return self.aoi_hist @ t

    def summary(self) -> dict:
        return {
            "cycles": self.sample_count,
            "slots": self.slots,
            "mean_reward": self.mean_reward,
            "reward_se": self.reward_se,
            "empirical_y": self.empirical_y.tolist(),
            "mean_aoi": self.mean_aoi.tolist(),
            "upload_volume": self.upload_volume.tolist(),
        }


class _Replay:
    """Slot-by-slot replay state shared by model-driven and trace-driven runs.

    A fresh reading is collected on the first slot and on the slot after
    every upload. Reward batches close every ``per_batch`` measured cycles.
    """

    def __init__(self, L, max_age, tau, utility, prices, warmup, per_batch):
        self.L, self.M = L, max_age
        self.tau = tau
        self.U = utility
        self.p = prices
        self.warmup = warmup
        self.per_batch = max(1, per_batch)
        self.counts = np.zeros((L, L), np.int64)
        self.ages = np.zeros((L, max_age), np.int64)
        self.cycles = 0
        self.kept = 0
        self.origin, self.age = -1, 0
        self.batch_reward = []
        self.batch_slots = []
        self._r = 0.0
        self._s = 0

    def drop(self):
        """Forget the reading in flight (path break)."""
        self.origin = -1

    def feed(self, path, limit=None) -> bool:
        """Replay ``path``; returns True once ``limit`` measured cycles exist."""
        M, tau, U, p = self.M, self.tau, self.U, self.p
        origin, age = self.origin, self.age
        for loc in path:
            if origin < 0:
                origin, age = loc, 1
            up = age > tau[loc]
            measured = self.cycles >= self.warmup
            if measured:
                self._r += U[age - 1] - (p[loc] if up else 0.0)
                self._s += 1
            if up:
                self.cycles += 1
                if measured:
                    self.counts[origin, loc] += 1
                    self.ages[origin, age - 1] += 1
                    self.kept += 1
                    if self.kept % self.per_batch == 0:
                        self.close_batch()
                    if limit is not None and self.kept >= limit:
                        self.origin = -1
                        return True
                origin = -1
            else:
                age = min(age + 1, M)
        self.origin, self.age = origin, age
        return False

    def close_batch(self):
        if self._s:
            self.batch_reward.append(self._r)
            self.batch_slots.append(self._s)
        self._r, self._s = 0.0, 0

    def result(self) -> SimResult:
        self.close_batch()
        R = np.array(self.batch_reward)
        S = np.array(self.batch_slots, dtype=float)
        total_s = S.sum()
        mean = R.sum() / total_s if total_s else float("nan")
        if len(R) > 1:
            # ratio estimator with batch-means variance
            resid = R - mean * S
            se = float(np.sqrt(len(R) / (len(R) - 1) * (resid ** 2).sum()) / total_s)
        else:
            se = float("nan")
        rows = self.counts.sum(axis=1, keepdims=True)
        safe = np.maximum(rows, 1)
        y = np.where(rows > 0, self.counts / safe, 0.0)
        hist = np.where(rows > 0, self.ages / safe, 0.0)
        volume = self.counts.sum(axis=0) / total_s if total_s else np.zeros(self.L)
        return SimResult(int(self.kept), int(total_s), y, hist, float(mean), se,
                         volume, rows.ravel())


def _policy_terms(instance, L, thresholds):
    tau = as_thresholds(thresholds)
    if tau.shape != (L,):
        raise ValueError("one threshold per location required")
    if isinstance(instance, AgingMdpInstance):
        return tau, instance.max_age, instance.utility, instance.prices
    if isinstance(instance, JoacInstance):
        return tau, instance.max_age, instance.utility, np.zeros(L)
    M = int(tau.max()) + 1
    return tau, M, np.zeros(M), np.zeros(L)


def simulate_policy(model: MobilityModel, instance, thresholds, cycles: int,
                    rng: np.random.Generator, warmup: int = 100, batches: int = 50,
                    chunk: int = 4096) -> SimResult:
    """Replay a threshold policy on a path sampled from the mobility chain.

    ``instance`` supplies max age, utility and prices (an AgingMdpInstance;
    a JoacInstance gives zero prices, None gives zero reward). The device
    starts at a stationary-distributed location and recollects right after
    every upload. The first ``warmup`` cycles are discarded; the reward
    standard error comes from ``batches`` contiguous batch means.
    """
    if cycles < 1:
        raise ValueError("cycles must be >= 1")
    L = model.num_locations
    tau, M, U, p = _policy_terms(instance, L, thresholds)
    rep = _Replay(L, M, tau, U, p, warmup, -(-cycles // batches))
    cum = np.cumsum(model.transitions, axis=1)
    cum[:, -1] = 1.0
    loc = int(rng.choice(L, p=model.stationary))
    path = np.empty(chunk, np.int64)
    while True:
        u = rng.random(chunk)
        for k in range(chunk):
            path[k] = loc
            loc = int(np.searchsorted(cum[loc], u[k], side="right"))
        if rep.feed(path.tolist(), cycles):
            break
    return rep.result()


def simulate_from_trace(trace, cell_map: dict, instance, thresholds, warmup: int = 0,
                        batches: int = 50) -> SimResult:
    """Replay a policy on recorded location sequences.

    ``trace`` maps device id to a sequence of cell ids sampled at the slot
    length (or is a list of such sequences). Cells missing from ``cell_map``
    (or mapped to -1) break the sequence and drop the reading in flight, as
    does the end of each device's sequence.
    """
    seqs = list(trace.values()) if isinstance(trace, dict) else list(trace)
    paths = []
    for seq in seqs:
        cur = []
        for c in seq:
            idx = cell_map.get(c, -1)
            if idx >= 0:
                cur.append(int(idx))
            elif cur:
                paths.append(cur)
                cur = []
        if cur:
            paths.append(cur)
    if not paths:
        raise EmptyTrace("no mapped positions in trace")
    L = max(cell_map.values()) + 1
    tau, M, U, p = _policy_terms(instance, L, thresholds)
    # batch size guessed from path length; one cycle per slot at most
    total = sum(len(x) for x in paths)
    rep = _Replay(L, M, tau, U, p, warmup, max(1, total // (batches * max(1, int(tau.mean()) + 1))))
    for path in paths:
        rep.feed(path)
        rep.drop()
    return rep.result()


# ---------------------------------------------------------------------------
# brute force


@dataclass
class SearchResult:
    tau: np.ndarray
    value: float
    evaluated: int
    feasible_count: int


def exhaustive_threshold_search(instance, tmax: int | None = None, mode: str = "cost",
                                tie_tol: float = 1e-12) -> SearchResult:
    """Enumerate every threshold vector in lexicographic order.

    ``mode="cost"``: ``instance`` is a JoacInstance; minimise W over feasible
    vectors in ``{0..t_max}^L``. ``mode="reward"``: ``instance`` is an
    AgingMdpInstance; maximise the average reward over ``{0..M}^L``. Values
    within ``tie_tol`` (relative) of the incumbent keep the earlier vector.
    """
    if mode not in ("cost", "reward"):
        raise ValueError(f"unknown mode {mode!r}")
    L = instance.num_locations
    if mode == "cost":
        top = compute_t_max(instance) if tmax is None else tmax
    else:
        top = instance.max_age if tmax is None else tmax
    size = (top + 1) ** L
    if size > SEARCH_LIMIT:
        raise SearchSpaceTooLarge(f"{size} threshold vectors exceed the {SEARCH_LIMIT} limit")
    best, best_v = None, None
    n_ok = 0
    sign = 1.0 if mode == "cost" else -1.0
    for tau in itertools.product(range(top + 1), repeat=L):
        if mode == "cost":
            ev = evaluate(instance, tau)
            if not feasibility_of(instance, ev).feasible:
                continue
            v = ev.W
        else:
            v = average_reward(instance, ThresholdPolicy(np.array(tau)))
        n_ok += 1
        if best_v is None or sign * (v - best_v) < -tie_tol * max(1.0, abs(best_v)):
            best, best_v = np.array(tau, dtype=np.int64), v
    if best is None:
        raise InfeasibleStart("no feasible threshold vector")
    return SearchResult(best, float(best_v), size, n_ok)


@dataclass
class EnumerationResult:
    action: np.ndarray  # (M, L), 1 = upload
    gain: float
    evaluated: int
    gains: np.ndarray | None = None


def _best_class_gain(P: np.ndarray, r: np.ndarray) -> float:
    """Largest stationary reward over the closed classes of P."""
    ncomp, lab = connected_components(P > 0, directed=True, connection="strong")
    best = -np.inf
    for c in range(ncomp):
        m = np.flatnonzero(lab == c)
        if P[np.ix_(m, lab != c)].sum() == 0:
            pi = stationary_distribution(P[np.ix_(m, m)])
            best = max(best, float(pi @ r[m]))
    return best


def _screen_gains(P: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Stationary reward of a batch of chains, via pi (I - P + 11') = 1'.

    Chains with several closed classes make that system singular; those use
    the minimum-norm solution of the stationarity equations instead.
    """
    B, n, _ = P.shape
    A = np.transpose(np.eye(n) - P + 1.0, (0, 2, 1))
    det = np.abs(np.linalg.det(A))
    ok = det > 1e-10
    pi = np.empty((B, n))
    if ok.any():
        pi[ok] = np.linalg.solve(A[ok], np.ones((int(ok.sum()), n, 1)))[..., 0]
    if (~ok).any():
        sysm = np.concatenate([np.transpose(P[~ok], (0, 2, 1)) - np.eye(n),
                               np.ones((int((~ok).sum()), 1, n))], axis=1)
        rhs = np.zeros(n + 1)
        rhs[-1] = 1.0
        pi[~ok] = np.linalg.pinv(sysm) @ rhs
    return (pi * r).sum(axis=1)


def exhaustive_policy_enumeration(instance: AgingMdpInstance, batch: int = 4096,
                                  keep_gains: bool = False, refine_tol: float = 1e-6
                                  ) -> EnumerationResult:
    """Optimal average reward by visiting every deterministic stationary policy.

    A batched linear solve screens all policies; every policy within
    ``refine_tol`` of the screened maximum is then re-scored exactly as the
    best stationary reward over its closed classes (each such class is
    reachable and sustainable, so this never exceeds the optimal gain).
    Equal gains are resolved toward uploading.
    """
    M, L = instance.max_age, instance.num_locations
    n = M * L
    if n > ENUM_LIMIT:
        raise SearchSpaceTooLarge(f"2^{n} policies exceed the 2^{ENUM_LIMIT} limit")
    P_up, r_up = product_chain(instance, np.ones((M, L), np.int8))
    P_def, r_def = product_chain(instance, np.zeros((M, L), np.int8))
    total = 1 << n
    bits = 1 << np.arange(n)

    def table(k):
        return ((k & bits) > 0).astype(np.int8)

    gains = np.empty(total)
    for start in range(0, total, batch):
        ks = np.arange(start, min(total, start + batch))
        A = (ks[:, None] & bits[None, :]) > 0
        P = np.where(A[:, :, None], P_up[None], P_def[None])
        r = np.where(A, r_up[None], r_def[None])
        gains[ks] = _screen_gains(P, r)
    top = gains.max()
    cands = np.flatnonzero(gains >= top - refine_tol * max(1.0, abs(top)))
    exact = []
    for k in cands:
        P, r = product_chain(instance, table(int(k)).reshape(M, L))
        exact.append(_best_class_gain(P, r))
    exact = np.array(exact)
    best_g = float(exact.max())
    # ties (e.g. actions at unreachable states) go to the policy uploading most
    tied = cands[exact >= best_g - 1e-12 * max(1.0, abs(best_g))]
    best_k = int(max(tied, key=lambda k: (int(table(int(k)).sum()), -int(k))))
    return EnumerationResult(table(best_k).reshape(M, L), best_g, total,
                             gains if keep_gains else None)
