"""Run configuration (JSON) and deterministic table writers."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .anneal import AnnealConfig
from .errors import ConfigError
from .joac import JoacInstance
from .mdp import AgingMdpInstance, linear_utility
from .mobility import MobilityModel, build_model, read_model

ANNEAL_KEYS = ("a_hat", "schedule", "exponent", "stop_unchanged_slots", "stop_temperature",
               "iteration_cap", "audit_every", "local_delta")


@dataclass
class RunConfig:
    raw: dict
    base: Path

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        return cls(raw, path.parent)

    def get(self, key, default=None):
        return self.raw.get(key, default)

    def require(self, key):
        if key not in self.raw:
            raise ConfigError(f"config is missing {key!r}")
        return self.raw[key]

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    def model(self) -> MobilityModel:
        entry = self.require("model")
        if isinstance(entry, str):
            p = self.base / entry
            if not p.exists():
                raise ConfigError(f"model file not found: {p}")
            return read_model(p)
        if isinstance(entry, dict) and "transitions" in entry:
            return build_model(np.asarray(entry["transitions"], float), entry.get("cells", ()))
        raise ConfigError("model must be a file path or an object with 'transitions'")

    def utility(self, M: int) -> np.ndarray:
        U = self.raw.get("utility")
        return linear_utility(M) if U is None else np.asarray(U, float)

    def mdp_instance(self, model=None) -> AgingMdpInstance:
        model = model or self.model()
        M = int(self.require("max_age"))
        prices = np.asarray(self.require("prices"), float)
        return AgingMdpInstance(model, M, self.utility(M), prices)

    def joac_instance(self, model=None, **overrides) -> JoacInstance:
        model = model or self.model()
        M = int(self.require("max_age"))
        kw = dict(
            model=model,
            costs=np.asarray(self.require("costs"), float),
            capacities=self.raw.get("capacities", math.inf),
            d=int(self.require("d")),
            epsilon=self.raw.get("epsilon", 0.01),
            max_age=M,
            N=float(self.raw.get("N", 1.0)),
            F=float(self.raw.get("F", 1.0)),
            kappa=float(self.raw.get("kappa", 1.0)),
            utility=self.utility(M),
            operating_cap=bool(self.raw.get("operating_cap", False)),
            t_max_override=self.raw.get("t_max"),
        )
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return JoacInstance(**kw)

    def anneal_config(self, seed=None, **overrides) -> AnnealConfig:
        section = dict(self.raw.get("anneal", {}))
        unknown = set(section) - set(ANNEAL_KEYS)
        if unknown:
            raise ConfigError(f"unknown anneal settings: {sorted(unknown)}")
        section.update({k: v for k, v in overrides.items() if v is not None})
        return AnnealConfig(seed=self.seed if seed is None else seed, **section)


def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else str(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")
