"""Graph coloring of the location neighbourhood graph and the color-parallel
annealer built on it."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .anneal import (AnnealConfig, AnnealResult, AnnealTrace, IncrementalEvaluator,
                     NeighborhoodGraph, _check_start, _violations, default_a_hat,
                     neighborhood_graph, sa_step, tau_string, temperature)
from .errors import SearchSpaceTooLarge
from .joac import JoacInstance, t_max as compute_t_max

logger = logging.getLogger(__name__)

EXACT_LIMIT = 12


@dataclass(frozen=True, eq=False)
class Coloring:
    colors: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.colors, dtype=np.int64).copy()
        c.setflags(write=False)
        object.__setattr__(self, "colors", c)

    @property
    def used(self) -> frozenset:
        return frozenset(int(v) for v in self.colors)

    @property
    def num_colors(self) -> int:
        return len(self.used)

    def conflicts(self, graph: NeighborhoodGraph):
        return [(i, j) for i, j in graph.edges() if self.colors[i] == self.colors[j]]

    def is_feasible(self, graph: NeighborhoodGraph) -> bool:
        A = graph.adjacency
        return not np.any(A & (self.colors[:, None] == self.colors[None, :]))

    def classes(self) -> list:
        """Locations grouped by color, ordered by color id."""
        return [np.flatnonzero(self.colors == c) for c in sorted(self.used)]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("location", "color"))
            for i, c in enumerate(self.colors):
                w.writerow((i, int(c)))


def greedy_coloring(graph: NeighborhoodGraph) -> Coloring:
    """First-fit in degree-descending order (ties by index)."""
    n = graph.num_vertices
    deg = graph.degrees()
    order = sorted(range(n), key=lambda v: (-deg[v], v))
    colors = np.full(n, -1, dtype=np.int64)
    for v in order:
        taken = set(colors[graph.neighbors(v)].tolist())
        c = 0
        while c in taken:
            c += 1
        colors[v] = c
    return Coloring(colors)


def _feasible_moves(graph: NeighborhoodGraph, colors: np.ndarray, palette: int) -> np.ndarray:
    """Boolean (L, palette) table of recolorings that keep the coloring proper."""
    onehot = np.zeros((len(colors), palette), bool)
    onehot[np.arange(len(colors)), colors] = True
    blocked = (graph.adjacency.astype(np.int64) @ onehot) > 0
    return ~(blocked | onehot)


def sa_coloring_step(graph: NeighborhoodGraph, current: Coloring, n: int, b: float,
                     rng: np.random.Generator, palette: int | None = None) -> Coloring:
    """One annealing step on colorings.

    A location and a different color from ``{0..palette-1}`` (default: number
    of locations) are drawn uniformly among the choices that keep the coloring
    proper; redrawing until a proper choice appears gives the same law. The
    move is accepted if it does not increase the number of colors in use,
    else with probability ``exp(-beta / T)``, ``T = b / log(1 + n)``.
    """
    H = palette or graph.num_vertices
    cols = np.array(current.colors)
    if cols.max() >= H:
        raise ValueError("coloring uses a color outside the palette")
    moves = np.flatnonzero(_feasible_moves(graph, cols, H))
    if moves.size == 0:
        return current
    v, c = divmod(int(moves[rng.integers(moves.size)]), H)
    new = cols.copy()
    new[v] = c
    beta = len(set(new.tolist())) - current.num_colors
    u = rng.random()
    if beta <= 0 or u < math.exp(-beta * math.log(1.0 + n) / b):
        return Coloring(new)
    return current


class ColoringStream:
    """Coloring annealer on its own iteration clock.

    ``advance(k)`` runs k steps; ``best`` holds the latest broadcast (the best
    coloring so far, replaced only on a strict improvement).
    """

    def __init__(self, graph: NeighborhoodGraph, rng: np.random.Generator,
                 start: Coloring | None = None, b: float | None = None):
        self.graph = graph
        self.rng = rng
        self.b = float(graph.num_vertices if b is None else b)
        self.current = start or greedy_coloring(graph)
        if not self.current.is_feasible(graph):
            raise ValueError("start coloring is infeasible")
        self.best = self.current
        self.n = 0
        self.broadcasts = [(0, self.best.num_colors)]
        self.trace = []

    def advance(self, steps: int = 1) -> Coloring:
        for _ in range(steps):
            self.n += 1
            self.current = sa_coloring_step(self.graph, self.current, self.n, self.b, self.rng)
            if self.current.num_colors < self.best.num_colors:
                self.best = self.current
                self.broadcasts.append((self.n, self.best.num_colors))
            self.trace.append((self.n, self.current.num_colors, self.best.num_colors))
        return self.best

    def write_trace(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("n", "colors", "best_colors"))
            w.writerows(self.trace)


def chromatic_number(graph: NeighborhoodGraph) -> int:
    """Exact chromatic number by backtracking (small graphs only)."""
    n = graph.num_vertices
    if n > EXACT_LIMIT:
        raise SearchSpaceTooLarge(f"exact coloring limited to {EXACT_LIMIT} vertices, got {n}")
    if n == 0:
        return 0
    order = sorted(range(n), key=lambda v: -graph.degrees()[v])
    nbrs = [set(graph.neighbors(v).tolist()) for v in range(n)]

    def colorable(k):
        col = {}

        def go(idx):
            if idx == n:
                return True
            v = order[idx]
            seen = {col[u] for u in nbrs[v] if u in col}
            # symmetry: a new color is only ever the next unused id
            top = max(col.values(), default=-1)
            for c in range(min(k, top + 2)):
                if c not in seen:
                    col[v] = c
                    if go(idx + 1):
                        return True
                    del col[v]
            return False

        return go(0)

    for k in range(1, n + 1):
        if colorable(k):
            return k
    return n


# ---------------------------------------------------------------------------
# color-parallel annealing


ACCEL_COLUMNS = ("t", "temperature", "color", "class_size", "accepted", "reverted",
                 "current_W", "best_W", "tau", "best_tau")


@dataclass
class AcceleratedResult(AnnealResult):
    colorings: list = field(default_factory=list)
    stream: ColoringStream | None = None


def accelerated_sa(instance: JoacInstance, config: AnnealConfig | None = None,
                   stream: ColoringStream | None = None, rng: np.random.Generator | None = None,
                   initial=None, tmax: int | None = None, graph: NeighborhoodGraph | None = None,
                   coloring_steps: int = 10) -> AcceleratedResult:
    """Annealing where every location of one color class updates per slot.

    Each slot adopts the stream's current best coloring, draws a color class
    uniformly, runs one proposal/test/decision pass at each member against
    the slot-start thresholds and merges the accepted changes. A merged vector
    that violates a constraint has its changes undone in ascending location
    order until it is feasible. Stop rules match :func:`sa_optimize`.
    """
    config = config or AnnealConfig()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    tmax = compute_t_max(instance) if tmax is None else tmax
    graph = graph or neighborhood_graph(instance, tmax)
    if stream is None:
        stream = ColoringStream(graph, np.random.default_rng(rng.integers(2**63)))
    a_hat = config.a_hat or default_a_hat(instance)
    L = instance.num_locations
    everywhere = np.arange(L)
    tau0 = np.zeros(L, np.int64) if initial is None else np.asarray(initial, np.int64)
    ev = IncrementalEvaluator(instance, tau0, tmax)
    _check_start(ev)
    trace = AnnealTrace(columns=ACCEL_COLUMNS)
    if tmax < 1:
        return AcceleratedResult(ev.tau.copy(), ev.W, trace, 0, "empty search space", False,
                                 stream=stream)
    best_tau, best_W = ev.tau.copy(), ev.W
    best_s = tau_string(best_tau)
    tol = 1e-12 * max(1.0, abs(best_W))
    unchanged = 0
    drift = 0.0
    mismatches = 0
    colorings = []
    coloring = None
    reason, capped = "iteration cap", True
    t = 0
    for t in range(1, config.iteration_cap + 1):
        T = temperature(config, a_hat, t)
        if T < config.stop_temperature:
            reason, capped = "temperature", False
            break
        latest = stream.advance(coloring_steps)
        if latest is not coloring:
            coloring = latest
            assert coloring.is_feasible(graph)
            colorings.append((t, coloring))
        classes = coloring.classes()
        h = int(rng.integers(len(classes)))
        members = classes[h]
        base = ev.tau.copy()
        accepted = []
        for i in members:
            i = int(i)
            v = int(rng.integers(tmax))
            if v >= base[i]:
                v += 1
            u = rng.random()
            out = sa_step(ev, graph, i, v, T, u, config.local_delta, base=base)
            if out.accepted:
                accepted.append(out.candidate)
            elif out.locally_feasible and not out.globally_feasible:
                mismatches += 1
        before = ev.W
        reverted = 0
        if len(accepted) == 1:
            ev.commit(accepted[0])
        elif accepted:
            for c in accepted:
                ev.commit(ev.propose(c.location, c.value))
            for c in accepted:
                if not _violations(instance, ev.tail, ev.Y, everywhere):
                    break
                ev.commit(ev.propose(c.location, int(base[c.location])))
                reverted += 1
            if reverted:
                logger.debug("slot %d: reverted %d merged changes", t, reverted)
        if ev.W < best_W - tol:
            best_W, best_tau = ev.W, ev.tau.copy()
            best_s = tau_string(best_tau)
        trace.record(t, T, int(coloring.colors[members[0]]), len(members),
                     len(accepted) - reverted, reverted, ev.W, best_W, tau_string(ev.tau), best_s)
        unchanged = unchanged + 1 if abs(ev.W - before) <= tol else 0
        if config.audit_every and t % config.audit_every == 0:
            d = ev.audit()
            drift = max(drift, d)
            if d > 1e-9:
                logger.warning("incremental objective drifted by %.3e at slot %d", d, t)
        if unchanged >= config.stop_unchanged_slots:
            reason, capped = "unchanged", False
            break
    return AcceleratedResult(best_tau, best_W, trace, t, reason, capped, drift, mismatches,
                             colorings=colorings, stream=stream)
