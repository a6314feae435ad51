"""Human reachable occupancy from measured keypoints.

Under the normative speed bound (no human joint moves faster than the
configured limit), the set of positions a keypoint can reach within a time
horizon is a ball around its measurement.  Growing each body capsule's radius
by measurement error plus ``speed * horizon`` therefore covers every possible
human pose over the horizon.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .geometry import OccupancySet


class MissingKeypoint(KeyError):
    """A body references a keypoint absent from the measurement."""


@dataclass(frozen=True)
class ReachParams:
    """Bound on human keypoint speed (m/s), per DIN EN ISO 13855."""

    v_h_max: float = 2.0

    def __post_init__(self):
        if not self.v_h_max > 0:
            raise ValueError("human speed bound must be positive")


@dataclass
class HumanMeasurement:
    """Keypoint positions at one instant plus the sensor error bound."""

    timestamp: float
    names: tuple[str, ...]
    positions: np.ndarray  # (K, 3)
    error: float = 0.0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if len(self.names) != self.positions.shape[0]:
            raise ValueError("one position per keypoint name required")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("measured positions must be finite")
        if self.error < 0:
            raise ValueError("measurement error bound must be >= 0")

    @staticmethod
    def from_dict(timestamp: float, kp: dict, error: float = 0.0):
        names = tuple(kp.keys())
        return HumanMeasurement(timestamp, names,
                                np.array([kp[n] for n in names]), error)


@dataclass(frozen=True)
class BodySpec:
    name: str
    kp1: str
    kp2: str
    radius: float


class HumanModel:
    """Capsule bodies spanned between named keypoints."""

    def __init__(self, bodies: list[BodySpec], meas_error: float = 0.005,
                 speed_bound: float = 2.0):
        if not bodies:
            raise ValueError("human model needs at least one body")
        for b in bodies:
            if not b.radius > 0:
                raise ValueError(f"body {b.name} radius must be positive")
        self.bodies = bodies
        self.meas_error = float(meas_error)
        self.params = ReachParams(speed_bound)
        self._index_cache: tuple[tuple[str, ...], np.ndarray, np.ndarray] | None = None

    @staticmethod
    def from_config(path) -> "HumanModel":
        data = yaml.safe_load(Path(path).read_text())
        bodies = [BodySpec(b["name"], b["kp1"], b["kp2"], float(b["radius"]))
                  for b in data["bodies"]]
        return HumanModel(bodies, meas_error=float(data.get("meas_error", 0.005)),
                          speed_bound=float(data.get("speed_bound", 2.0)))

    @property
    def radii(self) -> np.ndarray:
        return np.array([b.radius for b in self.bodies])

    @property
    def keypoint_names(self) -> tuple[str, ...]:
        seen = []
        for b in self.bodies:
            for n in (b.kp1, b.kp2):
                if n not in seen:
                    seen.append(n)
        return tuple(seen)

    def _indices_for(self, names: tuple[str, ...]):
        # measurements reuse one names tuple per source: cache the resolution
        cached = self._index_cache
        if cached is not None and cached[0] == names:
            return cached[1], cached[2]
        lookup = {n: i for i, n in enumerate(names)}
        try:
            i1 = np.array([lookup[b.kp1] for b in self.bodies], dtype=np.intp)
            i2 = np.array([lookup[b.kp2] for b in self.bodies], dtype=np.intp)
        except KeyError as exc:
            raise MissingKeypoint(f"keypoint {exc.args[0]!r} not measured") from exc
        self._index_cache = (names, i1, i2)
        return i1, i2


def reachable_arrays(model: HumanModel, meas: HumanMeasurement,
                     horizon: float):
    """(p1, p2, radii) arrays of the reachable set; shield hot path."""
    i1, i2 = model._indices_for(meas.names)
    grow = meas.error + model.params.v_h_max * horizon
    return meas.positions[i1], meas.positions[i2], model.radii + grow


def reachable_occupancy(model: HumanModel, meas: HumanMeasurement,
                        horizon: float, params: ReachParams | None = None
                        ) -> OccupancySet:
    """Over-approximate all space the human can occupy within `horizon`.

    One capsule per body: the measured keypoint segment, inflated by body
    radius + measurement error + speed bound * horizon.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    if params is None:
        params = model.params
    i1, i2 = model._indices_for(meas.names)
    grow = meas.error + params.v_h_max * horizon
    return OccupancySet(
        p1=meas.positions[i1],
        p2=meas.positions[i2],
        radii=model.radii + grow,
        t_begin=meas.timestamp,
        t_end=meas.timestamp + horizon,
    )
