"""Metropolis-Hastings sampling and simulated annealing over threshold vectors."""

from __future__ import annotations

import csv
import itertools
import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .aoi import forward_upload_distribution
from .errors import InfeasibleStart
from .joac import JoacInstance, evaluate, feasibility_of, t_max as compute_t_max, upper_bound

logger = logging.getLogger(__name__)

EDGE_TOL = 1e-12


@dataclass
class AnnealConfig:
    a_hat: float | None = None  # None: (N F / kappa) max_j C_j
    schedule: str = "log"
    exponent: float = 2.8
    stop_unchanged_slots: int = 200
    stop_temperature: float = 1e-6
    iteration_cap: int = 100_000
    seed: int = 0
    audit_every: int = 1000
    # sum the objective change over the proposer's neighbourhood only
    local_delta: bool = True

    def __post_init__(self):
        if self.a_hat is not None and self.a_hat <= 0:
            raise ValueError("a_hat must be positive")
        if self.stop_temperature <= 0:
            raise ValueError("stop_temperature must be positive")
        if self.schedule not in ("log", "power"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


def default_a_hat(instance: JoacInstance) -> float:
    a = instance.rate_scale * float(instance.costs.max())
    # every achievable W is bounded by (sum D) max C, and sum D = N F / kappa
    assert upper_bound(instance) <= a * (1 + 1e-12)
    return a


def temperature(config: AnnealConfig, a_hat: float, t: int) -> float:
    if config.schedule == "log":
        return a_hat / math.log(1.0 + t)
    return a_hat / t ** config.exponent


# ---------------------------------------------------------------------------
# neighbourhoods


@dataclass(frozen=True, eq=False)
class NeighborhoodGraph:
    adjacency: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.adjacency, bool).copy()
        np.fill_diagonal(A, False)
        A = A | A.T
        A.setflags(write=False)
        object.__setattr__(self, "adjacency", A)

    @property
    def num_vertices(self):
        return self.adjacency.shape[0]

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])

    def closed_neighborhood(self, i: int) -> np.ndarray:
        return np.union1d(self.neighbors(i), [i])

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def edges(self):
        i, j = np.nonzero(np.triu(self.adjacency))
        return list(zip(i.tolist(), j.tolist()))

    @classmethod
    def from_edges(cls, n: int, edges) -> "NeighborhoodGraph":
        A = np.zeros((n, n), bool)
        for i, j in edges:
            A[i, j] = A[j, i] = True
        return cls(A)


def neighborhood_graph(instance: JoacInstance, tmax: int | None = None) -> NeighborhoodGraph:
    """Locations i ~ j iff data flows between them (either direction) when
    every threshold sits at t_max."""
    tmax = compute_t_max(instance) if tmax is None else tmax
    tau = np.full(instance.num_locations, tmax, dtype=np.int64)
    y = forward_upload_distribution(instance.model.transitions, tau).sum(axis=-1)
    return NeighborhoodGraph((y > EDGE_TOL) | (y.T > EDGE_TOL))


# ---------------------------------------------------------------------------
# proposal and acceptance


def proposal_uniform(current, tmax: int, rng: np.random.Generator):
    """Change one uniformly chosen coordinate to a uniformly chosen other value
    in {0..tmax}. Returns ``(location, new_value, candidate)``."""
    if tmax < 1:
        raise ValueError("need t_max >= 1 to propose a change")
    cur = np.asarray(current, dtype=np.int64)
    i = int(rng.integers(len(cur)))
    v = int(rng.integers(tmax))
    if v >= cur[i]:
        v += 1
    cand = cur.copy()
    cand[i] = v
    return i, v, cand


def accept_with(delta: float, T: float, u: float) -> bool:
    """Acceptance rule given a uniform draw ``u``."""
    if delta <= 0:
        return True
    return u < math.exp(-delta / T)


def acceptance(delta: float, T: float, rng: np.random.Generator) -> bool:
    if T <= 0:
        raise ValueError("temperature must be positive")
    if delta <= 0:
        return True
    return accept_with(delta, T, rng.random())


# ---------------------------------------------------------------------------
# incremental objective


@dataclass
class Candidate:
    location: int
    value: int
    tau: np.ndarray
    affected: np.ndarray
    y_rows: np.ndarray
    tail_rows: np.ndarray
    Y: np.ndarray
    W: float


class IncrementalEvaluator:
    """Tracks y, tail probabilities and Y for the current threshold vector and
    recomputes only the origins whose paths can reach a changed location
    within t_max steps."""

    def __init__(self, instance: JoacInstance, tau, tmax: int):
        self.instance = instance
        self.tmax = int(tmax)
        self.horizon = self.tmax + 1
        Lam = instance.model.transitions
        L = instance.num_locations
        reach = np.eye(L, dtype=bool)
        step = Lam > 0
        frontier = reach.copy()
        for _ in range(self.tmax):
            frontier = (frontier.astype(np.int64) @ step.astype(np.int64)) > 0
            reach |= frontier
        self.reach = reach
        self.reset(tau)

    def reset(self, tau):
        tau = np.asarray(tau, dtype=np.int64).copy()
        ev = evaluate(self.instance, tau)
        self.tau, self.y, self.tail, self.Y, self.W = tau, ev.y, ev.tail, ev.Y, ev.W

    def propose(self, location: int, value: int, base=None) -> Candidate:
        inst = self.instance
        base = self.tau if base is None else base
        tau = base.copy()
        tau[location] = value
        affected = np.flatnonzero(self.reach[:, location])
        f = forward_upload_distribution(inst.model.transitions, tau, affected, self.horizon)
        y_rows = f.sum(axis=-1)
        tail_rows = f[:, :, inst.d:].sum(axis=(1, 2))
        Y = self.Y + inst.D[affected] @ (y_rows - self.y[affected])
        W = float(inst.costs @ Y)
        return Candidate(location, value, tau, affected, y_rows, tail_rows, Y, W)

    def tail_of(self, cand: Candidate) -> np.ndarray:
        tail = self.tail.copy()
        tail[cand.affected] = cand.tail_rows
        return tail

    def commit(self, cand: Candidate):
        self.tau = cand.tau
        self.y = self.y.copy()
        self.y[cand.affected] = cand.y_rows
        self.tail = self.tail_of(cand)
        self.Y = cand.Y
        self.W = cand.W

    def audit(self) -> float:
        """Recompute from scratch; returns the drift in W and resyncs."""
        ev = evaluate(self.instance, self.tau)
        drift = max(abs(ev.W - self.W), float(np.abs(ev.Y - self.Y).max()))
        self.y, self.tail, self.Y, self.W = ev.y, ev.tail, ev.Y, ev.W
        return drift


def _violations(inst: JoacInstance, tail, Y, where) -> bool:
    where = np.asarray(where)
    return bool(np.any(tail[where] > inst.epsilon[where]) or np.any(Y[where] > inst.capacities[where]))


@dataclass
class StepOutcome:
    candidate: Candidate
    delta: float
    locally_feasible: bool
    globally_feasible: bool
    accepted: bool


def sa_step(ev: IncrementalEvaluator, graph: NeighborhoodGraph, location: int, value: int,
            T: float, u: float, local_delta: bool = True, base=None, base_Y=None) -> StepOutcome:
    """One assignment / test / decision pass at ``location``.

    The candidate is checked against the constraints of the closed
    neighbourhood first; the objective change is summed over that
    neighbourhood (or globally when ``local_delta`` is False). Accepted
    candidates must also be globally feasible.
    """
    inst = ev.instance
    cand = ev.propose(location, value, base)
    hood = graph.closed_neighborhood(location)
    tail = ev.tail_of(cand)
    Y0 = ev.Y if base_Y is None else base_Y
    if _violations(inst, tail, cand.Y, hood):
        return StepOutcome(cand, math.nan, False, False, False)
    diff = (cand.Y - Y0) * inst.costs
    delta = float(diff[hood].sum() if local_delta else diff.sum())
    if not accept_with(delta, T, u):
        return StepOutcome(cand, delta, True, True, False)
    if _violations(inst, tail, cand.Y, np.arange(inst.num_locations)):
        logger.debug("candidate feasible in neighbourhood of %d but not globally", location)
        return StepOutcome(cand, delta, True, False, False)
    return StepOutcome(cand, delta, True, True, True)


# ---------------------------------------------------------------------------
# traces and results


TRACE_COLUMNS = ("t", "temperature", "location", "proposal", "accepted", "feasible",
                 "delta", "current_W", "best_W", "best_tau")


@dataclass
class AnnealTrace:
    """One row per slot; ``best_tau`` is stored as a ``-``-joined string."""

    columns: tuple = TRACE_COLUMNS
    rows: list = field(default_factory=list)

    def record(self, *row):
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        k = self.columns.index(name)
        return np.array([r[k] for r in self.rows], dtype=float)

    def __len__(self):
        return len(self.rows)

    def first_slot_below(self, level: float) -> float:
        """First slot whose best W is <= level (inf if never)."""
        k = self.columns.index("best_W")
        for r in self.rows:
            if r[k] <= level:
                return r[0]
        return math.inf

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([_fmt(v) for v in r])


def tau_string(tau) -> str:
    return "-".join(str(int(v)) for v in tau)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return v


@dataclass
class AnnealResult:
    best_tau: np.ndarray
    best_W: float
    trace: AnnealTrace
    iterations: int
    stop_reason: str
    capped: bool
    audit_drift: float = 0.0
    local_global_mismatches: int = 0


def _check_start(ev: IncrementalEvaluator):
    inst = ev.instance
    if _violations(inst, ev.tail, ev.Y, np.arange(inst.num_locations)):
        raise InfeasibleStart(f"initial thresholds {ev.tau.tolist()} violate the constraints")


def sa_optimize(instance: JoacInstance, config: AnnealConfig | None = None,
                rng: np.random.Generator | None = None, initial=None,
                tmax: int | None = None, graph: NeighborhoodGraph | None = None) -> AnnealResult:
    """Simulated annealing over {0..t_max}^L starting from all-zero thresholds.

    Each slot: set the temperature, pick a location uniformly, propose a new
    threshold for it and run :func:`sa_step`. Stops when the cost has not
    changed for ``stop_unchanged_slots`` slots, when the temperature drops
    below ``stop_temperature``, or at ``iteration_cap`` (``capped`` is set).
    """
    config = config or AnnealConfig()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    tmax = compute_t_max(instance) if tmax is None else tmax
    graph = graph or neighborhood_graph(instance, tmax)
    a_hat = config.a_hat or default_a_hat(instance)
    L = instance.num_locations
    tau0 = np.zeros(L, np.int64) if initial is None else np.asarray(initial, np.int64)
    ev = IncrementalEvaluator(instance, tau0, tmax)
    _check_start(ev)
    if tmax < 1:
        tr = AnnealTrace()
        return AnnealResult(ev.tau.copy(), ev.W, tr, 0, "empty search space", False)
    best_tau, best_W = ev.tau.copy(), ev.W
    best_s = tau_string(best_tau)
    tol = 1e-12 * max(1.0, abs(best_W))
    trace = AnnealTrace()
    unchanged = 0
    drift = 0.0
    mismatches = 0
    reason, capped = "iteration cap", True
    t = 0
    for t in range(1, config.iteration_cap + 1):
        T = temperature(config, a_hat, t)
        if T < config.stop_temperature:
            reason, capped = "temperature", False
            break
        i, v, _ = proposal_uniform(ev.tau, tmax, rng)
        u = rng.random()
        out = sa_step(ev, graph, i, v, T, u, config.local_delta)
        before = ev.W
        if out.accepted:
            ev.commit(out.candidate)
        elif out.locally_feasible and not out.globally_feasible:
            mismatches += 1
        if ev.W < best_W - tol:
            best_W, best_tau = ev.W, ev.tau.copy()
            best_s = tau_string(best_tau)
        trace.record(t, T, i, v, out.accepted, out.globally_feasible, out.delta, ev.W, best_W, best_s)
        unchanged = unchanged + 1 if abs(ev.W - before) <= tol else 0
        if config.audit_every and t % config.audit_every == 0:
            d = ev.audit()
            drift = max(drift, d)
            if d > 1e-9:
                logger.warning("incremental objective drifted by %.3e at slot %d", d, t)
        if unchanged >= config.stop_unchanged_slots:
            reason, capped = "unchanged", False
            break
    return AnnealResult(best_tau, best_W, trace, t, reason, capped, drift, mismatches)


# ---------------------------------------------------------------------------
# fixed-temperature chain


@dataclass
class MHResult:
    states: np.ndarray
    histogram: Counter
    accepted: int
    rejected_infeasible: int

    def occupancy(self) -> dict:
        n = sum(self.histogram.values())
        return {k: v / n for k, v in self.histogram.items()}


def mh_chain_fixed_T(instance: JoacInstance, T: float, steps: int,
                     rng: np.random.Generator, tmax: int | None = None, start=None) -> MHResult:
    """Metropolis-Hastings at constant temperature targeting
    exp(-W(tau)/T) on the feasible threshold vectors.

    Infeasible proposals are rejected (and counted) without a draw.
    """
    if T <= 0:
        raise ValueError("temperature must be positive")
    tmax = compute_t_max(instance) if tmax is None else tmax
    L = instance.num_locations
    cur = np.zeros(L, np.int64) if start is None else np.asarray(start, np.int64)
    cache = {}

    def score(tau):
        key = tuple(int(v) for v in tau)
        if key not in cache:
            ev = evaluate(instance, tau)
            cache[key] = (ev.W, feasibility_of(instance, ev).feasible)
        return cache[key]

    W_cur, ok = score(cur)
    if not ok:
        raise InfeasibleStart(f"start {cur.tolist()} is infeasible")
    states = np.empty((steps, L), dtype=np.int16)
    hist = Counter()
    acc = rej = 0
    for k in range(steps):
        _, _, cand = proposal_uniform(cur, tmax, rng)
        W_new, ok = score(cand)
        if not ok:
            rej += 1
        elif acceptance(W_new - W_cur, T, rng):
            cur, W_cur = cand, W_new
            acc += 1
        states[k] = cur
        hist[tuple(int(v) for v in cur)] += 1
    return MHResult(states, hist, acc, rej)


def boltzmann_gibbs(instance: JoacInstance, T: float, tmax: int) -> dict:
    """Exact target distribution by enumerating feasible vectors."""
    L = instance.num_locations
    weights = {}
    Ws = {}
    for tau in itertools.product(range(tmax + 1), repeat=L):
        ev = evaluate(instance, tau)
        if feasibility_of(instance, ev).feasible:
            Ws[tau] = ev.W
    w0 = min(Ws.values())
    for tau, W in Ws.items():
        weights[tau] = math.exp(-(W - w0) / T)
    Z = sum(weights.values())
    return {k: v / Z for k, v in weights.items()}
