"""
Inertia (sticky) cluster dynamics and the optimal deviation built on it.

Clusters travel at constant velocity and merge on contact, the merged
cluster moving with the momentum-weighted velocity. Event times come from
the linear trajectories in closed form, no time stepping is involved.
"""
import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from config import MERGE_TIME_RTOL
from core.deviation import ClusteringDeviation, MergeEvent, MergeTree
from core.errors import ValidationError

logger = logging.getLogger(__name__)

Branch = Tuple[int, ...]


@dataclass
class _Cluster:
    members: List[int]
    mass: float
    velocity: float
    position: float


def _validate_start(start_positions: Sequence[float], masses: Sequence[float], horizon: float):
    x = np.asarray(start_positions, dtype=float).reshape(-1)
    m = np.asarray(masses, dtype=float).reshape(-1)
    if x.size == 0:
        raise ValidationError("at least one cluster is required")
    if x.size != m.size:
        raise ValidationError(f"{x.size} start positions but {m.size} masses")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(m))):
        raise ValidationError("start positions and masses must be finite")
    if np.any(np.diff(x) <= 0):
        raise ValidationError("start positions must be strictly increasing")
    if np.any(m <= 0):
        raise ValidationError("masses must be positive")
    if not (np.isfinite(horizon) and horizon > 0):
        raise ValidationError("horizon must be positive")
    return x, m, float(horizon)


def inertia_velocities(masses: Sequence[float]) -> np.ndarray:
    """φ_c = ½(mass to the right of c − mass to the left of c)."""
    m = np.asarray(masses, dtype=float).reshape(-1)
    if m.size == 0:
        raise ValidationError("empty mass list")
    cum = np.cumsum(m)
    left = cum - m
    right = cum[-1] - cum
    return 0.5 * (right - left)


def _next_meeting(clusters: List[_Cluster], now: float):
    """Earliest meeting time and the adjacent pairs meeting then (within the relative tolerance)."""
    times = []
    for i in range(len(clusters) - 1):
        a, b = clusters[i], clusters[i + 1]
        closing = a.velocity - b.velocity
        if closing > 0:
            times.append((now + (b.position - a.position) / closing, i))
    if not times:
        return None, []
    first = min(t for t, _ in times)
    window = MERGE_TIME_RTOL * max(abs(first), np.finfo(float).tiny)
    return first, [i for t, i in times if t - first <= window]


def evolve_inertia_clusters(start_positions: Sequence[float], masses: Sequence[float],
                            horizon: float) -> Tuple[ClusteringDeviation, MergeTree]:
    x, m, horizon = _validate_start(start_positions, masses, horizon)
    phi = inertia_velocities(m)
    clusters = [_Cluster([c], float(m[c]), float(phi[c]), float(x[c])) for c in range(x.size)]
    knots = [([0.0], [float(x[c])]) for c in range(x.size)]
    events: List[MergeEvent] = []
    now = 0.0

    while len(clusters) > 1:
        meet, pairs = _next_meeting(clusters, now)
        if meet is None or meet > horizon:
            break
        dt = meet - now
        for cl in clusters:
            cl.position += cl.velocity * dt
        now = meet

        # adjacent meeting pairs chain into runs of clusters merging together
        runs, run = [], [pairs[0]]
        for i in pairs[1:]:
            if i == run[-1] + 1:
                run.append(i)
            else:
                runs.append(run)
                run = [i]
        runs.append(run)

        merged: List[_Cluster] = []
        cursor = 0
        for run in runs:
            lo, hi = run[0], run[-1] + 1
            merged.extend(clusters[cursor:lo])
            group = clusters[lo:hi + 1]
            mass = sum(cl.mass for cl in group)
            velocity = sum(cl.mass * cl.velocity for cl in group) / mass
            position = sum(cl.mass * cl.position for cl in group) / mass
            members = sorted(i for cl in group for i in cl.members)
            events.append(MergeEvent(
                time=now,
                members=tuple(members),
                mass=mass,
                velocity=velocity,
                position=position,
                incoming=tuple((cl.mass, cl.velocity) for cl in group),
            ))
            for i in members:
                knots[i][0].append(now)
                knots[i][1].append(position)
            merged.append(_Cluster(members, mass, velocity, position))
            cursor = hi + 1
        merged.extend(clusters[cursor:])
        clusters = merged
        logger.debug("merge at s=%.6g: %s", now, [e.members for e in events[-len(runs):]])

    terminal = np.empty(x.size)
    for cl in clusters:
        end = cl.position + cl.velocity * (horizon - now)
        for i in cl.members:
            terminal[i] = end
            if knots[i][0][-1] >= horizon:
                knots[i][1][-1] = end
            else:
                knots[i][0].append(horizon)
                knots[i][1].append(end)

    deviation = ClusteringDeviation.from_knots(
        m, [k[0] for k in knots], [k[1] for k in knots], horizon)
    tree = MergeTree(
        n=x.size,
        horizon=horizon,
        masses=tuple(m.tolist()),
        events=tuple(events),
        terminal_positions=tuple(terminal.tolist()),
    )
    return deviation, tree


def branch_partition(tree: MergeTree, n: int, horizon: float) -> List[Branch]:
    """Maximal index intervals whose clusters merged strictly inside (0, horizon)."""
    if n != tree.n:
        raise ValidationError(f"merge tree has {tree.n} clusters, expected {n}")
    return tree.branches_until(horizon)


def branch_drifts(tree: MergeTree, terminal_point: float) -> List[float]:
    """Per-branch drift d_𝔟 = (𝔵 − 𝒾_𝔟(𝔱))/𝔱 bringing the branch to the terminal point."""
    drifts = []
    masses = np.asarray(tree.masses)
    terminal = np.asarray(tree.terminal_positions)
    for branch in branch_partition(tree, tree.n, tree.horizon):
        idx = list(branch)
        end = float(np.dot(masses[idx], terminal[idx]) / masses[idx].sum())
        drifts.append((terminal_point - end) / tree.horizon)
    return drifts


def optimal_deviation(start_positions: Sequence[float], masses: Sequence[float],
                      terminal_point: float, horizon: float) -> Tuple[ClusteringDeviation, MergeTree]:
    """
    Inertia clusters plus a constant drift per branch so that every cluster
    ends at the terminal point. The returned tree keeps the inertia merge
    events, shifted onto the drifted trajectories, and records the drifts.
    """
    if not np.isfinite(terminal_point):
        raise ValidationError("terminal point must be finite")
    inertia, tree = evolve_inertia_clusters(start_positions, masses, horizon)
    branches = branch_partition(tree, tree.n, tree.horizon)
    drift_per_branch = branch_drifts(tree, terminal_point)
    drift = np.empty(tree.n)
    for branch, d in zip(branches, drift_per_branch):
        drift[list(branch)] = d

    times, positions = [], []
    for c, (ts, xs) in enumerate(inertia.trajectories):
        shifted = xs + drift[c] * ts
        shifted[-1] = terminal_point
        times.append(ts)
        positions.append(shifted)
    deviation = ClusteringDeviation.from_knots(inertia.masses, times, positions, tree.horizon)

    m = np.asarray(tree.masses)
    events = []
    for e in tree.events:
        idx = list(e.members)
        d = float(np.dot(m[idx], drift[idx]) / m[idx].sum())
        events.append(MergeEvent(
            time=e.time,
            members=e.members,
            mass=e.mass,
            velocity=e.velocity + d,
            position=e.position + d * e.time,
            incoming=tuple((mass, v + d) for mass, v in e.incoming),
        ))
    optimal_tree = MergeTree(
        n=tree.n,
        horizon=tree.horizon,
        masses=tree.masses,
        events=tuple(events),
        terminal_positions=(float(terminal_point),) * tree.n,
        drifts=tuple(drift.tolist()),
    )
    logger.info("optimal deviation: %d clusters, %d branches, drifts %s",
                tree.n, len(branches), [round(d, 6) for d in drift_per_branch])
    return deviation, optimal_tree
