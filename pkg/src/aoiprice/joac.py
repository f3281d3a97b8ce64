"""Service-provider cost minimisation over per-location AoI thresholds."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .aoi import demand, forward_upload_distribution
from .errors import InvalidInstance, Uncalibratable
from .mdp import AgingMdpInstance, as_thresholds, linear_utility, solve_average_reward
from .mobility import MobilityModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class JoacInstance:
    model: MobilityModel
    costs: np.ndarray
    capacities: np.ndarray
    d: int
    epsilon: np.ndarray
    max_age: int
    N: float = 1.0
    F: float = 1.0
    kappa: float = 1.0
    utility: np.ndarray | None = None
    # also cap t_max at d + 3 (operating rule used in the experiments)
    operating_cap: bool = False
    t_max_override: int | None = None
    D: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        L = self.model.num_locations
        C = np.asarray(self.costs, float)
        B = np.broadcast_to(np.asarray(self.capacities, float), (L,)).copy()
        eps = np.broadcast_to(np.asarray(self.epsilon, float), (L,)).copy()
        if C.shape != (L,) or np.any(C < 0):
            raise InvalidInstance("costs must be one non-negative value per location")
        if np.any(B <= 0):
            raise InvalidInstance("capacities must be positive")
        if np.any(eps <= 0) or np.any(eps >= 1):
            raise InvalidInstance("epsilon must lie in (0, 1)")
        if not 1 <= self.d < self.max_age:
            raise InvalidInstance("need 1 <= d < M")
        U = linear_utility(self.max_age) if self.utility is None else np.asarray(self.utility, float)
        for name, val in (("costs", C), ("capacities", B), ("epsilon", eps), ("utility", U)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "D", demand(self.model, self.N, self.F, self.kappa))

    @property
    def num_locations(self):
        return self.model.num_locations

    @property
    def rate_scale(self) -> float:
        """N F / kappa."""
        return self.N * self.F / self.kappa

    def replace(self, **kw) -> "JoacInstance":
        args = {k: getattr(self, k) for k in (
            "model", "costs", "capacities", "d", "epsilon", "max_age", "N", "F", "kappa",
            "utility", "operating_cap", "t_max_override")}
        args.update(kw)
        return JoacInstance(**args)


@dataclass
class Evaluation:
    """Objective ingredients for one threshold vector."""

    tau: np.ndarray
    y: np.ndarray
    Y: np.ndarray
    tail: np.ndarray  # P(Delta_i > d) per origin
    W: float


def evaluate(instance: JoacInstance, thresholds) -> Evaluation:
    tau = as_thresholds(thresholds)
    if tau.shape != (instance.num_locations,):
        raise ValueError("one threshold per location required")
    f = forward_upload_distribution(instance.model.transitions, tau)
    y = f.sum(axis=-1)
    Y = instance.D @ y
    tail = f[:, :, instance.d:].sum(axis=(1, 2))
    return Evaluation(tau, y, Y, tail, float(instance.costs @ Y))


def objective(instance: JoacInstance, thresholds) -> float:
    """Total leasing cost W = sum_j C_j Y_j."""
    return evaluate(instance, thresholds).W


@dataclass
class FeasibilityReport:
    aoi_violations: list
    capacity_violations: list

    @property
    def feasible(self) -> bool:
        return not self.aoi_violations and not self.capacity_violations

    def __bool__(self):
        return self.feasible


def feasibility_of(instance: JoacInstance, ev: Evaluation, locations=None) -> FeasibilityReport:
    idx = range(instance.num_locations) if locations is None else locations
    aoi = [(i, float(ev.tail[i]), float(instance.epsilon[i]))
           for i in idx if ev.tail[i] > instance.epsilon[i]]
    cap = [(j, float(ev.Y[j]), float(instance.capacities[j]))
           for j in idx if ev.Y[j] > instance.capacities[j]]
    return FeasibilityReport(aoi, cap)


def feasible(instance: JoacInstance, thresholds) -> FeasibilityReport:
    """Check P(Delta_i > d) <= eps_i and Y_j <= B_j everywhere."""
    return feasibility_of(instance, evaluate(instance, thresholds))


def t_max(instance: JoacInstance) -> int:
    """Largest t such that raising any single threshold to t (all others 0)
    keeps every P(Delta_i > d) strictly below eps_i; capped at M - 1."""
    if instance.t_max_override is not None:
        return int(instance.t_max_override)
    L, d = instance.num_locations, instance.d
    cap = instance.max_age - 1
    if instance.operating_cap:
        cap = min(cap, d + 3)
    Lam = instance.model.transitions
    best = 0
    for t in range(1, cap + 1):
        ok = True
        for i in range(L):
            tau = np.zeros(L, dtype=np.int64)
            tau[i] = t
            f = forward_upload_distribution(Lam, tau, [i])
            if f[0, :, d:].sum() >= instance.epsilon[i]:
                ok = False
                break
        if not ok:
            break
        best = t
    return best


def upper_bound(instance: JoacInstance) -> float:
    """(sum D) max_j C_j, no larger than (N F / kappa) max_j C_j."""
    return float(instance.D.sum() * instance.costs.max())


# ---------------------------------------------------------------------------
# thresholds -> prices


@dataclass
class Calibration:
    prices: np.ndarray
    achieved: np.ndarray
    ok: np.ndarray


def _mdp_thresholds(mdp: AgingMdpInstance, prices) -> np.ndarray:
    sol = solve_average_reward(mdp.with_prices(prices))
    return mdp.max_age - sol.policy.action.sum(axis=0).astype(np.int64)


def calibrate_prices(instance: JoacInstance, thresholds, grid_points: int = 64,
                     sweeps: int = 8, strict: bool = True) -> Calibration:
    """Find a price per location whose optimal device policy has the target
    thresholds.

    Gauss-Seidel over locations: for each location a geometric grid over
    ``[0, sum_x (U(x) - U(M)) + 1]`` is scanned with the other prices fixed,
    and the step of the (non-decreasing) threshold-vs-price curve that hits
    the target is refined by bisection. Raises Uncalibratable when some
    location cannot be matched (the exception carries the closest result).
    """
    target = as_thresholds(thresholds)
    L = instance.num_locations
    U = instance.utility
    mdp = AgingMdpInstance(instance.model, instance.max_age, U, np.zeros(L))
    top = float((U - U[-1]).sum()) + 1.0
    grid = np.concatenate([[0.0], np.geomspace(top * 1e-4, top, grid_points - 1)])
    prices = np.zeros(L)
    achieved = _mdp_thresholds(mdp, prices)
    for _ in range(sweeps):
        if np.array_equal(achieved, target):
            break
        for l in range(L):
            if achieved[l] == target[l]:
                continue
            prices[l] = _search_price(mdp, prices, l, int(target[l]), grid)
            achieved = _mdp_thresholds(mdp, prices)
    ok = achieved == target
    result = Calibration(prices, achieved, ok)
    if strict and not ok.all():
        bad = np.flatnonzero(~ok)
        raise Uncalibratable(f"no grid price reproduces thresholds at locations {bad.tolist()}",
                             prices=prices, achieved=achieved, ok=ok)
    return result


def _search_price(mdp, prices, l, target, grid, bisect_steps=40) -> float:
    def thr(p):
        trial = prices.copy()
        trial[l] = p
        return int(_mdp_thresholds(mdp, trial)[l])

    vals = [thr(p) for p in grid]
    hits = [k for k, v in enumerate(vals) if v == target]
    if hits:
        k = hits[len(hits) // 2]
        return float(grid[k])
    below = [k for k, v in enumerate(vals) if v < target]
    above = [k for k, v in enumerate(vals) if v > target]
    if not below or not above:
        k = int(np.argmin([abs(v - target) for v in vals]))
        return float(grid[k])
    lo, hi = grid[max(below)], grid[min(k for k in above if k > max(below))] if any(
        k > max(below) for k in above) else grid[-1]
    for _ in range(bisect_steps):
        mid = 0.5 * (lo + hi)
        v = thr(mid)
        if v == target:
            return float(mid)
        if v < target:
            lo = mid
        else:
            hi = mid
    return float(lo)
