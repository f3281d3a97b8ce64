"""Location Markov chain: construction, trace estimation and taboo probabilities."""

from __future__ import annotations

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import (EmptyTrace, NonStochasticRow, Reducible,
                     SingleLocationTrace, TabooCoversAll)

logger = logging.getLogger(__name__)

ROW_TOL = 1e-6
DENSE_LIMIT = 512


@dataclass(frozen=True, eq=False)
class MobilityModel:
    """Row-stochastic transition matrix over locations and its stationary law.

    Build instances with :func:`build_model`; the arrays are made read-only.
    """

    transitions: np.ndarray
    stationary: np.ndarray
    # original cell id for each compact index (identity when built directly)
    cells: tuple = field(default=())

    @property
    def num_locations(self) -> int:
        return self.transitions.shape[0]

    def __len__(self):
        return self.num_locations


@dataclass(frozen=True)
class TabooQuery:
    taboo_set: frozenset
    steps: int

    def __init__(self, taboo_set: Iterable[int], steps: int):
        if steps < 1:
            raise ValueError("steps must be >= 1")
        object.__setattr__(self, "taboo_set", frozenset(int(a) for a in taboo_set))
        object.__setattr__(self, "steps", int(steps))


def stationary_distribution(P: np.ndarray) -> np.ndarray:
    n = P.shape[0]
    if n <= DENSE_LIMIT:
        A = P.T - np.eye(n)
        A[-1, :] = 1.0
        b = np.zeros(n)
        b[-1] = 1.0
        pi = np.linalg.solve(A, b)
    else:
        # lazy chain: same stationary law, no periodic oscillation
        Q = 0.5 * (P + np.eye(n))
        pi = np.full(n, 1.0 / n)
        for _ in range(1_000_000):
            nxt = pi @ Q
            if np.abs(nxt - pi).sum() < 1e-10:
                pi = nxt
                break
            pi = nxt
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def is_irreducible(P: np.ndarray) -> bool:
    ncomp, _ = connected_components(P > 0, directed=True, connection="strong")
    return ncomp == 1


def build_model(transitions, cells: Sequence = ()) -> MobilityModel:
    """Validate a transition matrix and attach its stationary distribution.

    Raises
    ------
    NonStochasticRow
        if a row sum deviates from 1 by more than 1e-6 or entries leave [0, 1].
    Reducible
        if the chain has more than one communicating class.
    """
    P = np.array(transitions, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
        raise NonStochasticRow(f"transition matrix must be square, got shape {P.shape}")
    if np.any(P < -1e-12) or np.any(P > 1 + 1e-12) or not np.all(np.isfinite(P)):
        raise NonStochasticRow("transition probabilities must lie in [0, 1]")
    sums = P.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_TOL)
    if bad.size:
        raise NonStochasticRow(f"row {bad[0]} sums to {sums[bad[0]]!r}")
    P = np.clip(P, 0.0, 1.0)
    # leave rows already stochastic up to rounding alone, so rebuilds are exact
    off = np.abs(P.sum(axis=1) - 1.0) > 1e-15
    P[off] /= P[off].sum(axis=1, keepdims=True)
    if not is_irreducible(P):
        raise Reducible("mobility chain has more than one communicating class")
    pi = stationary_distribution(P)
    P.setflags(write=False)
    pi.setflags(write=False)
    cells = tuple(cells) if len(cells) else tuple(range(P.shape[0]))
    if len(cells) != P.shape[0]:
        raise ValueError("cells label count does not match matrix size")
    return MobilityModel(P, pi, cells)


# ---------------------------------------------------------------------------
# taboo probabilities


class TabooPowers:
    """Memoized powers of taboo matrices for one model.

    ``matrix(A, n)[u, w]`` is P{l_1..l_{n-1} not in A, l_n = w | l_0 = u}.
    """

    def __init__(self, model: MobilityModel):
        self.model = model
        self._powers: dict[frozenset, list[np.ndarray]] = {}

    def _check(self, A: frozenset):
        L = self.model.num_locations
        if any(a < 0 or a >= L for a in A):
            raise IndexError("taboo location out of range")
        if len(A) >= L:
            raise TabooCoversAll("taboo set covers every location")

    def _restricted_power(self, A: frozenset, k: int) -> np.ndarray:
        # Q^k where Q is the transition matrix with rows/columns of A zeroed
        powers = self._powers.get(A)
        if powers is None:
            L = self.model.num_locations
            Q = np.array(self.model.transitions)
            idx = sorted(A)
            Q[idx, :] = 0.0
            Q[:, idx] = 0.0
            powers = [np.eye(L), Q]
            self._powers[A] = powers
        while len(powers) <= k:
            powers.append(powers[-1] @ powers[1])
        return powers[k]

    def matrix(self, taboo_set: Iterable[int], n: int) -> np.ndarray:
        A = frozenset(int(a) for a in taboo_set)
        self._check(A)
        if n < 1:
            raise ValueError("n must be >= 1")
        Lam = self.model.transitions
        if n == 1:
            return np.array(Lam)
        keep = np.ones(Lam.shape[0])
        keep[sorted(A)] = 0.0
        first = Lam * keep[None, :]
        return first @ self._restricted_power(A, n - 2) @ Lam


def taboo_transition(model: MobilityModel, query: TabooQuery, src: int, dst: int,
                     cache: TabooPowers | None = None) -> float:
    """Probability of reaching ``dst`` in ``query.steps`` steps from ``src``
    without visiting the taboo set at any intermediate step."""
    cache = cache or TabooPowers(model)
    return float(cache.matrix(query.taboo_set, query.steps)[src, dst])


# ---------------------------------------------------------------------------
# sampling and estimation


def sample_path(model: MobilityModel, steps: int, rng: np.random.Generator,
                start: int | None = None) -> np.ndarray:
    """Simulate ``steps`` locations of the chain (start drawn from pi if None)."""
    L = model.num_locations
    cdf = np.cumsum(model.transitions, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(steps)
    path = np.empty(steps, dtype=np.int64)
    cur = int(rng.choice(L, p=model.stationary)) if start is None else int(start)
    path[0] = cur
    for k in range(1, steps):
        cur = int(np.searchsorted(cdf[cur], u[k], side="right"))
        path[k] = cur
    return path


@dataclass
class Estimate:
    model: MobilityModel
    # original cell id -> compact index; dropped cells are absent
    remap: dict
    dropped: list
    counts: np.ndarray


def resample(times: np.ndarray, cells: Sequence, step: float, method: str = "hold") -> list:
    """Positions on the regular grid t0, t0+step, ... up to the last timestamp."""
    times = np.asarray(times, dtype=float)
    ticks = times[0] + step * np.arange(int(np.floor((times[-1] - times[0]) / step + 1e-9)) + 1)
    if method == "hold":
        idx = np.searchsorted(times, ticks + 1e-9, side="right") - 1
    elif method == "nearest":
        right = np.clip(np.searchsorted(times, ticks), 0, len(times) - 1)
        left = np.clip(right - 1, 0, len(times) - 1)
        idx = np.where(np.abs(times[left] - ticks) <= np.abs(times[right] - ticks), left, right)
    else:
        raise ValueError(f"unknown resampling method {method!r}")
    return [cells[i] for i in idx]


def device_sequences(records, resample_step: float, method: str = "hold") -> dict:
    """Group (time, device, cell) records and resample each device's track."""
    by_dev = defaultdict(list)
    for t, dev, cell in records:
        by_dev[dev].append((float(t), cell))
    seqs = {}
    for dev in sorted(by_dev, key=str):
        rows = sorted(by_dev[dev], key=lambda r: r[0])
        times = np.array([r[0] for r in rows])
        seqs[dev] = resample(times, [r[1] for r in rows], resample_step, method)
    return seqs


def _largest_closed_class(counts: np.ndarray) -> np.ndarray:
    keep = np.arange(counts.shape[0])
    while True:
        sub = counts[np.ix_(keep, keep)]
        ncomp, labels = connected_components(sub > 0, directed=True, connection="strong")
        if ncomp == 1 and np.all(sub.sum(axis=1) > 0):
            return keep
        sizes = np.bincount(labels, weights=sub.sum(axis=1))
        best = int(np.argmax(sizes))
        keep = keep[labels == best]
        if keep.size == 0:
            return keep


def estimate_from_trace(records, resample_step: float, method: str = "hold",
                        trim: bool = True) -> Estimate:
    """Estimate a location chain from ``(time, device_id, cell_id)`` records.

    Each device's track is resampled on a regular grid of ``resample_step``
    seconds (``method`` "hold" keeps the last seen cell, "nearest" takes the
    closest record in time) and consecutive positions are counted as
    transitions. Cells that never appear get no index. With ``trim`` the
    chain is restricted to its largest strongly connected part so the result
    is irreducible; trimmed cells are listed in ``dropped``.
    """
    records = list(records)
    if not records:
        raise EmptyTrace("trace contains no records")
    seqs = device_sequences(records, resample_step, method)
    seqs = {d: s for d, s in seqs.items() if len(s) >= 2}
    if not seqs:
        raise SingleLocationTrace("no device has two resampled positions")
    observed = sorted({c for s in seqs.values() for c in s}, key=_cell_key)
    index = {c: k for k, c in enumerate(observed)}
    counts = np.zeros((len(observed), len(observed)))
    for s in seqs.values():
        a = np.array([index[c] for c in s])
        np.add.at(counts, (a[:-1], a[1:]), 1.0)
    if len(observed) < 2 or np.trace(counts) == counts.sum():
        raise SingleLocationTrace("no transition between distinct cells observed")
    keep = _largest_closed_class(counts) if trim else np.arange(len(observed))
    if keep.size < 2:
        raise SingleLocationTrace("no recurrent set of two or more cells")
    dropped = [observed[k] for k in range(len(observed)) if k not in set(keep.tolist())]
    if dropped:
        logger.info("dropping %d cells outside the largest recurrent class", len(dropped))
    sub = counts[np.ix_(keep, keep)]
    P = sub / sub.sum(axis=1, keepdims=True)
    kept_cells = [observed[k] for k in keep]
    model = build_model(P, cells=kept_cells)
    return Estimate(model, {c: i for i, c in enumerate(kept_cells)}, dropped, sub)


def _cell_key(c):
    return (0, int(c), "") if isinstance(c, (int, np.integer)) else (1, 0, str(c))


# ---------------------------------------------------------------------------
# file formats


def _parse_cell(tok: str):
    tok = tok.strip()
    try:
        return int(tok)
    except ValueError:
        return tok


def _data_rows(path):
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                float(row[0])
            except ValueError:
                continue  # header line
            yield row


def read_trace(path) -> list:
    """Read ``timestamp_seconds, device_id, cell_id`` lines."""
    out = []
    for row in _data_rows(path):
        if len(row) < 3:
            raise ValueError(f"trace line needs 3 fields: {row}")
        out.append((float(row[0]), row[1].strip(), _parse_cell(row[2])))
    return out


def read_centers(path) -> tuple[list, np.ndarray]:
    """Read ``cell_id, x, y`` cell-centre lines."""
    ids, xy = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                xy.append((float(row[1]), float(row[2])))
            except (ValueError, IndexError):
                continue
            ids.append(_parse_cell(row[0]))
    return ids, np.array(xy)


def read_xy_trace(path, centers_path) -> list:
    """Read ``timestamp, device_id, x, y`` lines, assigning the nearest centre."""
    ids, centers = read_centers(centers_path)
    tree = cKDTree(centers)
    raw = [(float(r[0]), r[1].strip(), float(r[2]), float(r[3])) for r in _data_rows(path)]
    if not raw:
        return []
    _, nearest = tree.query(np.array([(r[2], r[3]) for r in raw]))
    return [(t, dev, ids[k]) for (t, dev, _, _), k in zip(raw, nearest)]


def write_model(model: MobilityModel, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{model.num_locations}\n")
        for row in model.transitions:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_model(path) -> MobilityModel:
    with open(path) as fh:
        L = int(fh.readline().strip())
        rows = [[float(v) for v in line.split(",")] for line in fh if line.strip()]
    if len(rows) != L:
        raise NonStochasticRow(f"header says {L} rows, file has {len(rows)}")
    return build_model(rows)


def write_remap(estimate: Estimate, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_id", "index"])
        for cell, k in estimate.remap.items():
            w.writerow([cell, k])
        for cell in estimate.dropped:
            w.writerow([cell, -1])
