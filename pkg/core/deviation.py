"""
Value types shared by the cluster, rate and shape modules.

A ClusteringDeviation is a finite sum of point masses moving along
piecewise-linear trajectories on [0, horizon]; a MergeTree records how
inertia clusters coalesced along the way.
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import COINCIDE_TOL, MERGE_TIME_RTOL
from core.errors import ValidationError
from core.measure import AtomicMeasure


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ClusteringDeviation:
    masses: np.ndarray
    knot_times: Tuple[np.ndarray, ...]
    knot_positions: Tuple[np.ndarray, ...]
    horizon: float

    def __post_init__(self):
        masses = _frozen(self.masses)
        horizon = float(self.horizon)
        if masses.size == 0:
            raise ValidationError("deviation needs at least one cluster")
        if np.any(masses <= 0):
            raise ValidationError("cluster masses must be positive")
        if not horizon > 0:
            raise ValidationError("horizon must be positive")
        if len(self.knot_times) != masses.size or len(self.knot_positions) != masses.size:
            raise ValidationError("one trajectory per cluster is required")
        snap = 1e-12 * max(1.0, horizon)
        times, positions = [], []
        for ts, xs in zip(self.knot_times, self.knot_positions):
            ts = np.array(ts, dtype=float).reshape(-1)
            xs = np.array(xs, dtype=float).reshape(-1)
            if ts.size < 2 or ts.size != xs.size:
                raise ValidationError("each trajectory needs matching knots at 0 and at the horizon")
            if abs(ts[0]) > snap or abs(ts[-1] - horizon) > snap:
                raise ValidationError("trajectories must run from 0 to the horizon")
            ts[0], ts[-1] = 0.0, horizon
            if np.any(np.diff(ts) <= 0):
                raise ValidationError("knot times must increase strictly")
            if not np.all(np.isfinite(xs)):
                raise ValidationError("knot positions must be finite")
            ts.setflags(write=False)
            xs.setflags(write=False)
            times.append(ts)
            positions.append(xs)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "horizon", horizon)
        object.__setattr__(self, "knot_times", tuple(times))
        object.__setattr__(self, "knot_positions", tuple(positions))
        # PL trajectories ordered at every breakpoint stay ordered in between
        grid = self.breakpoints()
        sampled = self.sample(grid)
        scale = COINCIDE_TOL * max(1.0, float(np.max(np.abs(sampled))))
        if np.any(np.diff(sampled, axis=1) < -scale):
            raise ValidationError("cluster trajectories must stay ordered")

    @classmethod
    def from_knots(cls, masses, times: Sequence, positions: Sequence, horizon: float) -> "ClusteringDeviation":
        return cls(np.asarray(masses, dtype=float), tuple(times), tuple(positions), horizon)

    @property
    def n(self) -> int:
        return self.masses.size

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.masses))

    @property
    def trajectories(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.knot_times, self.knot_positions))

    def position(self, c: int, s) -> np.ndarray:
        return np.interp(s, self.knot_times[c], self.knot_positions[c])

    def positions(self, s: float) -> np.ndarray:
        return np.array([np.interp(s, ts, xs) for ts, xs in self.trajectories])

    def sample(self, grid) -> np.ndarray:
        """Array of shape (len(grid), n)."""
        grid = np.asarray(grid, dtype=float)
        return np.column_stack([np.interp(grid, ts, xs) for ts, xs in self.trajectories])

    def breakpoints(self, start: float = 0.0, stop: Optional[float] = None) -> np.ndarray:
        """Union of all knot times inside [start, stop], endpoints included."""
        stop = self.horizon if stop is None else stop
        merged = np.unique(np.concatenate(self.knot_times))
        inner = merged[(merged > start) & (merged < stop)]
        return np.concatenate(([start], inner, [stop]))

    def snapshot(self, s: float) -> AtomicMeasure:
        return AtomicMeasure.from_atoms(self.positions(s), self.masses, tol=COINCIDE_TOL)

    def scaled(self, mass: Optional[float] = None) -> "ClusteringDeviation":
        """(1/m)𝔖_m: positions and masses divided by m (the total mass by default)."""
        m = self.total_mass if mass is None else float(mass)
        if not m > 0:
            raise ValidationError("scaling mass must be positive")
        return ClusteringDeviation(self.masses / m, self.knot_times,
                                   tuple(xs / m for xs in self.knot_positions), self.horizon)

    def to_json(self) -> Dict[str, Any]:
        return {
            "masses": self.masses.tolist(),
            "horizon": self.horizon,
            "trajectories": [
                [[float(s), float(x)] for s, x in zip(ts, xs)] for ts, xs in self.trajectories
            ],
        }

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "ClusteringDeviation":
        try:
            masses = [float(m) for m in data["masses"]]
            horizon = float(data["horizon"])
            trajectories = data["trajectories"]
            times = [[float(k[0]) for k in traj] for traj in trajectories]
            positions = [[float(k[1]) for k in traj] for traj in trajectories]
        except (KeyError, TypeError, IndexError, ValueError) as e:
            raise ValidationError(f"malformed deviation JSON: {e}") from e
        return cls.from_knots(masses, times, positions, horizon)


@dataclass(frozen=True)
class MergeEvent:
    time: float
    members: Tuple[int, ...]
    mass: float
    velocity: float
    position: float
    incoming: Tuple[Tuple[float, float], ...] = ()

    def to_json(self) -> Dict[str, Any]:
        return {
            "time": self.time,
            "members": list(self.members),
            "mass": self.mass,
            "velocity": self.velocity,
            "position": self.position,
            "incoming": [list(pair) for pair in self.incoming],
        }


@dataclass(frozen=True)
class MergeTree:
    """
    Merge events of one cluster evolution, in time order.

    `members` are 0-based cluster indices. `drifts` holds the constant drift
    added to every cluster on top of the inertia motion (zero for inertia
    clusters themselves).
    """
    n: int
    horizon: float
    masses: Tuple[float, ...]
    events: Tuple[MergeEvent, ...]
    terminal_positions: Tuple[float, ...]
    drifts: Tuple[float, ...] = field(default=())

    def __post_init__(self):
        if not self.drifts:
            object.__setattr__(self, "drifts", (0.0,) * self.n)
        if len(self.masses) != self.n or len(self.drifts) != self.n:
            raise ValidationError("merge tree arrays must have one entry per cluster")

    @property
    def branches(self) -> Tuple[Tuple[int, ...], ...]:
        return tuple(self.branches_until(self.horizon))

    def branches_until(self, horizon: float) -> List[Tuple[int, ...]]:
        """Maximal index intervals whose clusters merged strictly inside (0, horizon)."""
        cutoff = horizon * (1.0 - MERGE_TIME_RTOL)
        parent = list(range(self.n))

        def find(i: int) -> int:
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for event in self.events:
            if 0.0 < event.time < cutoff:
                root = find(event.members[0])
                for i in event.members[1:]:
                    parent[find(i)] = root

        branches: List[Tuple[int, ...]] = []
        for c in range(self.n):
            if branches and find(branches[-1][0]) == find(c):
                branches[-1] = branches[-1] + (c,)
            else:
                branches.append((c,))
        return branches

    def to_json(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "horizon": self.horizon,
            "masses": list(self.masses),
            "events": [e.to_json() for e in self.events],
            "terminal_positions": list(self.terminal_positions),
            "drifts": list(self.drifts),
            "branches": [list(b) for b in self.branches],
        }

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "MergeTree":
        try:
            events = tuple(
                MergeEvent(
                    time=float(e["time"]),
                    members=tuple(int(i) for i in e["members"]),
                    mass=float(e["mass"]),
                    velocity=float(e["velocity"]),
                    position=float(e["position"]),
                    incoming=tuple((float(a), float(b)) for a, b in e.get("incoming", [])),
                )
                for e in data["events"]
            )
            return cls(
                n=int(data["n"]),
                horizon=float(data["horizon"]),
                masses=tuple(float(m) for m in data["masses"]),
                events=events,
                terminal_positions=tuple(float(x) for x in data["terminal_positions"]),
                drifts=tuple(float(d) for d in data.get("drifts", [])),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"malformed merge tree JSON: {e}") from e
