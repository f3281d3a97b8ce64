"""Upload-time distribution, per-device rates and AoI statistics under a
threshold policy.

``f[i, z, t-1]`` is the probability that a reading collected at origin i is
uploaded at location z when its age is t. A device holding a reading of age t
at location l uploads iff ``t > tau[l]``; at age ``max(tau) + 1`` every
location uploads, so f has finite support.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MemoryGuard
from .mdp import as_thresholds
from .mobility import MobilityModel, TabooPowers

MAX_LOCATIONS = 512


def _horizon(tau: np.ndarray) -> int:
    return int(tau.max()) + 1


def forward_upload_distribution(transitions: np.ndarray, tau: np.ndarray,
                                origins=None, horizon: int | None = None) -> np.ndarray:
    """Propagate undelivered mass age by age; returns f for ``origins``.

    Shape is ``(len(origins), L, horizon)``.
    """
    L = transitions.shape[0]
    origins = np.arange(L) if origins is None else np.asarray(origins)
    H = horizon or _horizon(tau)
    f = np.zeros((len(origins), L, H))
    mass = np.zeros((len(origins), L))
    mass[np.arange(len(origins)), origins] = 1.0
    for t in range(1, H + 1):
        can = (t > tau).astype(float)
        up = mass * can[None, :]
        f[:, :, t - 1] = up
        mass = (mass - up) @ transitions
    return f


def upload_time_distribution(model: MobilityModel, thresholds, origin: int | None = None) -> np.ndarray:
    """f slice ``(L, horizon)`` for one origin, or the full tensor if origin is None."""
    tau = as_thresholds(thresholds)
    L = model.num_locations
    if L > MAX_LOCATIONS:
        raise MemoryGuard(f"dense f tensor refused for {L} > {MAX_LOCATIONS} locations")
    if tau.shape != (L,):
        raise ValueError("one threshold per location required")
    if origin is None:
        return forward_upload_distribution(model.transitions, tau)
    return forward_upload_distribution(model.transitions, tau, [origin])[0]


def taboo_upload_distribution(model: MobilityModel, thresholds, origin: int,
                              cache: TabooPowers | None = None) -> np.ndarray:
    """Same quantity as :func:`upload_time_distribution`, built from taboo
    matrix products.

    Ages are grouped into phases between consecutive distinct thresholds;
    within a phase the set of locations that would trigger an upload is
    fixed and acts as the taboo set for that stretch of the path.
    """
    tau = as_thresholds(thresholds)
    cache = cache or TabooPowers(model)
    Lam = model.transitions
    L = model.num_locations
    H = _horizon(tau)
    f = np.zeros((L, H))

    def uploads_at(age):
        return tau < age

    if uploads_at(1)[origin]:
        f[origin, 0] = 1.0
        return f
    cuts = sorted({int(v) for v in tau if v >= 1})
    for t in range(2, H + 1):
        # g[w]: reading still undelivered at age t-1 with the device at w,
        # rebuilt from the origin one whole phase at a time
        g = np.zeros(L)
        g[origin] = 1.0
        age = 1
        while age < t - 1:
            end = min([c for c in cuts if c > age] + [t - 1])
            A = np.flatnonzero(uploads_at(end))
            g = (g @ cache.matrix(A, end - age)) * ~uploads_at(end)
            age = end
        f[:, t - 1] = (g @ Lam) * uploads_at(t)
    return f


def per_device_rates(f: np.ndarray) -> np.ndarray:
    """y[i, z] = sum over t of f[i, z, t]."""
    return f.sum(axis=-1)


@dataclass(frozen=True, eq=False)
class AggregateRates:
    Y: np.ndarray
    D: np.ndarray


def demand(model: MobilityModel, N: float, F: float, kappa: float) -> np.ndarray:
    """Collected data rate per location, N pi_j F / kappa."""
    if N < 1 or F <= 0 or kappa <= 0:
        raise ValueError("need N >= 1, F > 0, kappa > 0")
    return N * np.asarray(model.stationary) * F / kappa


def aggregate_rates(y: np.ndarray, model: MobilityModel, N: float = 1, F: float = 1.0,
                    kappa: float = 1.0) -> AggregateRates:
    D = demand(model, N, F, kappa)
    return AggregateRates(D @ y, D)


def aoi_ccdf(f: np.ndarray, origin: int, d: int) -> float:
    """P(age at upload > d) for readings collected at ``origin``."""
    if d < 0:
        raise ValueError("d must be >= 0")
    return float(f[origin, :, d:].sum())


def ccdf_table(f: np.ndarray, d: int) -> np.ndarray:
    """P(Delta_i > d) for every origin."""
    return f[:, :, d:].sum(axis=(1, 2))


def expected_aoi(f: np.ndarray, origin: int) -> float:
    t = np.arange(1, f.shape[-1] + 1)
    return float((f[origin].sum(axis=0) * t).sum())


@dataclass(frozen=True, eq=False)
class UploadAnalytics:
    f: np.ndarray
    y: np.ndarray
    mean_aoi: np.ndarray

    def ccdf(self, origin: int, d: int) -> float:
        return aoi_ccdf(self.f, origin, d)

    def ccdf_curve(self, origin: int) -> np.ndarray:
        """P(Delta > d) for d = 0..horizon."""
        pmf = self.f[origin].sum(axis=0)
        return (1.0 - np.concatenate([[0.0], np.cumsum(pmf)])).clip(0, 1)


def analyze(model: MobilityModel, thresholds) -> UploadAnalytics:
    f = upload_time_distribution(model, thresholds)
    t = np.arange(1, f.shape[-1] + 1)
    mean = (f.sum(axis=1) * t[None, :]).sum(axis=1)
    return UploadAnalytics(f, per_device_rates(f), mean)
