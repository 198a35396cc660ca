"""
Finite atomic measures on the real line and their quantile calculus.

Every object here is immutable; the arrays backing an AtomicMeasure are
flagged read-only at construction.
"""
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from config import ATOM_MERGE_TOL, MASS_RTOL, get_configured_weak_truncation
from core.errors import MassMismatchError, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    positions: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        positions = np.array(self.positions, dtype=float).reshape(-1)
        masses = np.array(self.masses, dtype=float).reshape(-1)
        if positions.size == 0:
            raise ValidationError("measure needs at least one atom")
        if positions.shape != masses.shape:
            raise ValidationError("positions and masses differ in length")
        if not (np.all(np.isfinite(positions)) and np.all(np.isfinite(masses))):
            raise ValidationError("atoms must be finite")
        if np.any(masses <= 0):
            raise ValidationError("atom masses must be positive")
        if np.any(np.diff(positions) <= 0):
            raise ValidationError("atom positions must be strictly increasing")
        positions.setflags(write=False)
        masses.setflags(write=False)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "masses", masses)

    @classmethod
    def from_atoms(cls, positions: Sequence[float], masses, tol: float = ATOM_MERGE_TOL) -> "AtomicMeasure":
        """Sort atoms and merge positions closer than `tol`, summing their masses."""
        positions = np.asarray(positions, dtype=float).reshape(-1)
        masses = np.broadcast_to(np.asarray(masses, dtype=float), positions.shape)
        if positions.size == 0:
            raise ValidationError("measure needs at least one atom")
        order = np.argsort(positions, kind="stable")
        positions, masses = positions[order], masses[order]
        if np.any(masses <= 0):
            raise ValidationError("atom masses must be positive")
        starts = np.concatenate(([True], np.diff(positions) > tol))
        idx = np.flatnonzero(starts)
        merged_mass = np.add.reduceat(masses, idx)
        merged_pos = np.add.reduceat(positions * masses, idx) / merged_mass
        return cls(merged_pos, merged_mass)

    @classmethod
    def dirac(cls, x: float, mass: float = 1.0) -> "AtomicMeasure":
        return cls([x], [mass])

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.masses))

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.masses)

    @property
    def atoms(self) -> List[Tuple[float, float]]:
        return list(zip(self.positions.tolist(), self.masses.tolist()))

    def __len__(self) -> int:
        return self.positions.size

    def __repr__(self) -> str:
        body = " + ".join(f"{m:g}δ[{x:g}]" for x, m in self.atoms)
        return f"AtomicMeasure({body})"

    def to_json(self) -> Dict[str, Any]:
        return {"atoms": [[x, m] for x, m in self.atoms]}

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "AtomicMeasure":
        try:
            atoms = data["atoms"]
            positions = [float(a[0]) for a in atoms]
            masses = [float(a[1]) for a in atoms]
        except (KeyError, TypeError, IndexError, ValueError) as e:
            raise ValidationError(f"malformed measure JSON: {e}") from e
        return cls.from_atoms(positions, masses)


@dataclass(frozen=True, eq=False)
class QuantileView:
    """Q[λ] as slabs (a_{k-1}, a_k] of cumulative mass, one position per slab."""
    breakpoints: np.ndarray
    values: np.ndarray

    @classmethod
    def from_measure(cls, measure: AtomicMeasure) -> "QuantileView":
        breakpoints = np.concatenate(([0.0], measure.cumulative))
        return cls(breakpoints, measure.positions.copy())

    def to_measure(self) -> AtomicMeasure:
        return AtomicMeasure.from_atoms(self.values, np.diff(self.breakpoints))


class WeakDistance(NamedTuple):
    value: float
    tail: float


def _check_same_mass(m1: AtomicMeasure, m2: AtomicMeasure) -> float:
    a, b = m1.total_mass, m2.total_mass
    if abs(a - b) > MASS_RTOL * max(a, b) * 10:
        raise MassMismatchError(f"total masses differ: {a!r} vs {b!r}")
    return min(a, b)


def cdf_at(measure: AtomicMeasure, x):
    """λ((-∞, x]); accepts a scalar or an array of points."""
    cum = np.concatenate(([0.0], measure.cumulative))
    idx = np.searchsorted(measure.positions, x, side="right")
    result = cum[idx]
    return float(result) if np.ndim(result) == 0 else result


def quantile(measure: AtomicMeasure, a: float) -> float:
    """
    inf{x : a <= F(x)}.
    At a = 0 the minimum atom position is returned instead of -inf.
    """
    total = measure.total_mass
    slack = MASS_RTOL * total * 10
    if a < 0 or a > total + slack:
        raise ValidationError(f"quantile level {a!r} outside [0, {total!r}]")
    if a <= 0:
        return float(measure.positions[0])
    idx = int(np.searchsorted(measure.cumulative, a - slack, side="left"))
    return float(measure.positions[min(idx, len(measure) - 1)])


def sgn_drift(measure: AtomicMeasure, x):
    """½·(mass strictly right of x) − ½·(mass strictly left of x)."""
    cum = np.concatenate(([0.0], measure.cumulative))
    total = cum[-1]
    left = cum[np.searchsorted(measure.positions, x, side="left")]
    right = total - cum[np.searchsorted(measure.positions, x, side="right")]
    result = 0.5 * (right - left)
    return float(result) if np.ndim(result) == 0 else result


def atom_drifts(measure: AtomicMeasure) -> np.ndarray:
    """sgn_drift evaluated at every atom of the measure."""
    cum = measure.cumulative
    return 0.5 * measure.total_mass - (cum - 0.5 * measure.masses)


def sgn_quantile(measure: AtomicMeasure, a: float) -> float:
    """Sgn[λ](Q(a)) computed in the quantile coordinate: slab average of m/2 − a."""
    total = measure.total_mass
    x = quantile(measure, a)
    j = int(np.searchsorted(measure.positions, x))
    hi = measure.cumulative[j]
    lo = hi - measure.masses[j]
    return 0.5 * total - 0.5 * (lo + hi)


def merged_slabs(m1: AtomicMeasure, m2: AtomicMeasure) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Widths of the common refinement of both slab partitions and both quantiles on it."""
    total = _check_same_mass(m1, m2)
    c1, c2 = m1.cumulative, m2.cumulative
    levels = np.unique(np.concatenate(([0.0], c1[:-1], c2[:-1], [total])))
    levels = levels[levels <= total]
    widths = np.diff(levels)
    mids = 0.5 * (levels[:-1] + levels[1:])
    i1 = np.minimum(np.searchsorted(c1, mids, side="left"), len(m1) - 1)
    i2 = np.minimum(np.searchsorted(c2, mids, side="left"), len(m2) - 1)
    return widths, m1.positions[i1], m2.positions[i2]


def w1_distance(m1: AtomicMeasure, m2: AtomicMeasure) -> float:
    widths, q1, q2 = merged_slabs(m1, m2)
    return float(np.sum(widths * np.abs(q1 - q2)))


def weak_distance(m1: AtomicMeasure, m2: AtomicMeasure, truncation: Optional[int] = None) -> WeakDistance:
    """
    Σ_{k=1..K} 2^{-k} min{1, ∫_{-k}^{k} |F1 − F2| dx}.
    The omitted tail of the series is at most 2^{-K} and is returned with the value.
    """
    _check_same_mass(m1, m2)
    K = get_configured_weak_truncation() if truncation is None else int(truncation)
    if K < 1:
        raise ValidationError("weak distance truncation must be >= 1")
    grid = np.union1d(m1.positions, m2.positions)
    diff = np.abs(cdf_at(m1, grid[:-1]) - cdf_at(m2, grid[:-1]))
    lo, hi = grid[:-1], grid[1:]
    ks = np.arange(1, K + 1, dtype=float)[:, None]
    overlap = np.clip(np.minimum(hi, ks) - np.maximum(lo, -ks), 0.0, None)
    windows = np.minimum(1.0, overlap @ diff) if diff.size else np.zeros(K)
    weights = 0.5 ** np.arange(1, K + 1)
    return WeakDistance(float(np.sum(weights * windows)), float(0.5 ** K))


def kolmogorov_distance(m1: AtomicMeasure, m2: AtomicMeasure) -> float:
    """sup_x |F1(x) − F2(x)|."""
    grid = np.union1d(m1.positions, m2.positions)
    return float(np.max(np.abs(cdf_at(m1, grid) - cdf_at(m2, grid))))


def divide_measure(measure: AtomicMeasure, masses: Sequence[float]) -> List[AtomicMeasure]:
    """Cut the CDF at the cumulative levels of `masses`; piece c is the slab between levels c-1 and c."""
    masses = np.asarray(masses, dtype=float).reshape(-1)
    if masses.size == 0 or np.any(masses <= 0):
        raise ValidationError("piece masses must be positive")
    total = measure.total_mass
    if abs(masses.sum() - total) > MASS_RTOL * total * 10:
        raise MassMismatchError(f"piece masses sum to {masses.sum()!r}, measure has {total!r}")
    levels = np.concatenate(([0.0], np.cumsum(masses)))
    levels[-1] = total
    hi = measure.cumulative
    lo = hi - measure.masses
    sliver = MASS_RTOL * total
    pieces = []
    for c in range(masses.size):
        overlap = np.minimum(hi, levels[c + 1]) - np.maximum(lo, levels[c])
        keep = overlap > sliver
        pieces.append(AtomicMeasure(measure.positions[keep], overlap[keep]))
    return pieces


def scale_measure(measure: AtomicMeasure, factor: float) -> AtomicMeasure:
    if not factor > 0:
        raise ValidationError(f"scale factor must be positive, got {factor!r}")
    return AtomicMeasure(measure.positions * factor, measure.masses)


def normalize_measure(measure: AtomicMeasure) -> AtomicMeasure:
    """(1/m)𝔖_m: positions and masses divided by the total mass m."""
    total = measure.total_mass
    return AtomicMeasure(measure.positions / total, measure.masses / total)


def cluster_approximate(path: Sequence[Tuple[float, AtomicMeasure]], n: int):
    """
    Replace a measure path by n equal-mass clusters sitting at the barycenters
    of the n CDF slabs of every snapshot.

    `path` is a list of (time, measure) pairs with strictly increasing times
    starting at 0; the snapshots are joined linearly.
    """
    from core.deviation import ClusteringDeviation

    if not path:
        raise ValidationError("empty path")
    if n < 1:
        raise ValidationError("cluster count must be >= 1")
    if len(path) < 2:
        raise ValidationError("path needs at least two snapshots")
    times = np.array([float(s) for s, _ in path])
    if times[0] != 0 or np.any(np.diff(times) <= 0):
        raise ValidationError("path times must start at 0 and increase strictly")
    total = path[0][1].total_mass
    share = np.full(n, total / n)
    knots = np.empty((n, times.size))
    for k, (_, snapshot) in enumerate(path):
        _check_same_mass(snapshot, path[0][1])
        pieces = divide_measure(snapshot, share)
        bary = np.array([np.dot(p.positions, p.masses) / p.total_mass for p in pieces])
        knots[:, k] = np.maximum.accumulate(bary)
    logger.debug("cluster approximation: %d clusters over %d snapshots", n, times.size)
    return ClusteringDeviation.from_knots(share, [times] * n, list(knots), float(times[-1]))
