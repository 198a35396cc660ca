"""
Rate functional, moment functional and transition cost on clustering deviations.

Between two consecutive knots of a piecewise-linear deviation every cluster
moves at constant velocity and the set of coincident clusters does not
change, so every time integral is evaluated exactly segment by segment.
"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from config import COINCIDE_TOL
from core.clusters import branch_partition, inertia_velocities, optimal_deviation
from core.deviation import ClusteringDeviation, MergeTree
from core.errors import ValidationError
from core.measure import AtomicMeasure, merged_slabs, atom_drifts

logger = logging.getLogger(__name__)

Interval = Optional[Tuple[float, float]]


@dataclass(frozen=True)
class RateBreakdown:
    total: float
    per_segment: Tuple[Tuple[float, float, float], ...]
    per_cluster: Tuple[float, ...]

    def to_json(self) -> Dict[str, Any]:
        return {
            "total": self.total,
            "breakdown": {
                "per_segment": [list(seg) for seg in self.per_segment],
                "per_cluster": list(self.per_cluster),
            },
        }


def _resolve_interval(dev: ClusteringDeviation, interval: Interval) -> Tuple[float, float]:
    if interval is None:
        return 0.0, dev.horizon
    start, stop = float(interval[0]), float(interval[1])
    slack = 1e-12 * max(1.0, dev.horizon)
    if start < -slack or stop > dev.horizon + slack or stop < start:
        raise ValidationError(f"interval [{start!r}, {stop!r}] not within [0, {dev.horizon!r}]")
    return max(0.0, start), min(dev.horizon, stop)


def _segments(dev: ClusteringDeviation, start: float, stop: float):
    """Yield (a, b, velocities, drifts, group masses) for every nondegenerate segment."""
    grid = dev.breakpoints(start, stop)
    for a, b in zip(grid[:-1], grid[1:]):
        length = b - a
        if length <= 0:
            continue
        xa, xb = dev.positions(a), dev.positions(b)
        velocity = (xb - xa) / length
        mid = 0.5 * (xa + xb)
        scale = COINCIDE_TOL * max(1.0, float(np.max(np.abs(mid))))
        starts = np.concatenate(([True], np.diff(mid) > scale))
        label = np.cumsum(starts) - 1
        group_mass = np.add.reduceat(dev.masses, np.flatnonzero(starts))
        cum = np.cumsum(group_mass)
        total = cum[-1]
        # Sgn at a cluster excludes the whole atom it sits in
        group_drift = 0.5 * (total - cum) - 0.5 * (cum - group_mass)
        yield a, b, velocity, group_drift[label], group_mass


def rateq_clustering(dev: ClusteringDeviation, interval: Interval = None) -> RateBreakdown:
    """∫ Σ_c (m_c/2)(ν̇_c − Sgn[ν](ν_c))² ds over the interval, segment by segment."""
    start, stop = _resolve_interval(dev, interval)
    per_segment = []
    per_cluster = np.zeros(dev.n)
    for a, b, velocity, drift, _ in _segments(dev, start, stop):
        contrib = (b - a) * 0.5 * dev.masses * (velocity - drift) ** 2
        per_cluster += contrib
        per_segment.append((float(a), float(b), math.fsum(contrib)))
    total = math.fsum(seg[2] for seg in per_segment)
    return RateBreakdown(total, tuple(per_segment), tuple(per_cluster.tolist()))


def rateq_optimal(tree: MergeTree, masses: Sequence[float], horizon: float,
                  drifts: Optional[Sequence[float]] = None) -> float:
    """
    Closed form Σ_𝔟 𝔱 (m_𝔟/2)(𝒵̇_𝔟 − φ_𝔟)² for an optimal deviation.
    `drifts` is either one value per branch or one per cluster; it defaults
    to the drifts recorded on the tree.
    """
    m = np.asarray(masses, dtype=float).reshape(-1)
    if m.size != tree.n:
        raise ValidationError(f"{m.size} masses for a tree of {tree.n} clusters")
    branches = branch_partition(tree, tree.n, horizon)
    drifts = list(tree.drifts if drifts is None else drifts)
    if len(drifts) == tree.n:
        per_branch = []
        for branch in branches:
            values = {round(drifts[c], 12) for c in branch}
            if len(values) != 1:
                raise ValidationError(f"clusters of branch {branch} carry different drifts")
            per_branch.append(float(drifts[branch[0]]))
    elif len(drifts) == len(branches):
        per_branch = [float(d) for d in drifts]
    else:
        raise ValidationError(f"{len(drifts)} drifts for {len(branches)} branches")

    phi = inertia_velocities(m)
    total = 0.0
    for branch, d in zip(branches, per_branch):
        idx = list(branch)
        mass = m[idx].sum()
        phi_b = float(np.dot(m[idx], phi[idx]) / mass)
        speed = phi_b + d
        total += horizon * 0.5 * mass * (speed - phi_b) ** 2
    return total


def mom_functional(dev: ClusteringDeviation, interval: Interval = None) -> float:
    """∫ (Σ_atoms M³/24 − Σ_c (m_c/2) ν̇_c²) ds over the interval."""
    start, stop = _resolve_interval(dev, interval)
    pieces = []
    for a, b, velocity, _, group_mass in _segments(dev, start, stop):
        cubes = np.sum(group_mass ** 3) / 24.0
        kinetic = np.sum(0.5 * dev.masses * velocity ** 2)
        pieces.append((b - a) * (cubes - kinetic))
    return math.fsum(pieces)


def pair_energy(measure: AtomicMeasure) -> float:
    """⟨λ⊗λ, |x − x'|/2⟩ = Σ_{c<c'} m_c m_c' |x_c − x_c'|."""
    x, m = measure.positions, measure.masses
    return 0.5 * float(np.sum(np.outer(m, m) * np.abs(x[:, None] - x[None, :])))


def drift_energy(measure: AtomicMeasure) -> float:
    """⟨λ, x·Sgn[λ](x)⟩, equal to −pair_energy/2."""
    return float(np.sum(measure.masses * measure.positions * atom_drifts(measure)))


def mom_identity_check(dev: ClusteringDeviation) -> Tuple[float, float]:
    """
    Both sides of 𝔱m³/24 − ⟨μ, x·Sgn[μ]⟩|₀^𝔱 − ℐ_q(μ) = 𝕄(μ), computed independently.
    """
    m = dev.total_mass
    boundary = drift_energy(dev.snapshot(dev.horizon)) - drift_energy(dev.snapshot(0.0))
    lhs = dev.horizon * m ** 3 / 24.0 - boundary - rateq_clustering(dev).total
    rhs = mom_functional(dev)
    return lhs, rhs


def transition_cost(start: AtomicMeasure, end: AtomicMeasure, interval: Tuple[float, float]) -> float:
    """((s″−s′)/2) ∫ (|Q[end] − Q[start]|/(s″−s′) + ½)² da, slab by slab."""
    length = float(interval[1]) - float(interval[0])
    if not length > 0:
        raise ValidationError("transition interval must have positive length")
    widths, q0, q1 = merged_slabs(start, end)
    integrand = (np.abs(q1 - q0) / length + 0.5) ** 2
    return 0.5 * length * float(np.sum(widths * integrand))


def lyapunov_exponent(terminal_point: float, horizon: float,
                      start_positions: Sequence[float], masses: Sequence[float]) -> float:
    """
    L_SHE(𝔵 →𝔱 (x, m)): the moment functional of the optimal deviation.
    The deviation runs from Σ m_c δ_{x_c} at s=0 to m δ_𝔵 at s=𝔱.
    """
    dev, _ = optimal_deviation(start_positions, masses, terminal_point, horizon)
    value = mom_functional(dev)
    logger.debug("L_SHE(%g -> %g) = %.17g", terminal_point, horizon, value)
    return value
