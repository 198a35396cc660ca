"""
Euler–Maruyama simulation of attractive Brownian particles

    dX_i = Σ_{j≠i} ½ sgn(X_j − X_i) ds + dB_i,

the scaled empirical measure (1/N)Σ δ_{X_i(Ts)/(NT)}, distances to a
clustering deviation and a seeded Monte Carlo harness around them.
"""
import logging
import math
import threading
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import (
    DEFAULT_DT_FACTOR, DEFAULT_SEED, DEFAULT_SNAPSHOTS, NOISE_BLOCK,
    SPREAD_QUANTILES, SPREAD_THRESHOLD,
)
from core.clusters import evolve_inertia_clusters, optimal_deviation
from core.deviation import ClusteringDeviation
from core.errors import ValidationError
from core.measure import AtomicMeasure, weak_distance
from core.workers import LogQueue, run_replicas

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ParticleState:
    positions: np.ndarray
    micro_time: float
    n: int
    scale: float

    def __post_init__(self):
        positions = np.array(self.positions, dtype=float).reshape(-1)
        if positions.size != self.n:
            raise ValidationError(f"{positions.size} positions for N={self.n}")
        if not self.scale > 0:
            raise ValidationError("time scale T must be positive")
        positions.setflags(write=False)
        object.__setattr__(self, "positions", positions)

    @property
    def macro_time(self) -> float:
        return self.micro_time / self.scale

    @property
    def macro_positions(self) -> np.ndarray:
        return self.positions / (self.n * self.scale)


@dataclass(frozen=True)
class SimConfig:
    dt: float
    seed: int = DEFAULT_SEED
    noise_scale: float = 1.0
    spawn_key: Tuple[int, ...] = ()

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValidationError(f"time step must be positive, got {self.dt!r}")
        if not 0.0 <= self.noise_scale <= 1.0:
            raise ValidationError(f"noise scale must lie in [0, 1], got {self.noise_scale!r}")

    @classmethod
    def for_particles(cls, n: int, **kwargs) -> "SimConfig":
        """Default step 10⁻³/N keeps the drift step well below the particle spacing."""
        dt = kwargs.pop("dt", None)
        return cls(dt=DEFAULT_DT_FACTOR / n if dt is None else dt, **kwargs)

    def to_json(self) -> Dict[str, Any]:
        data = asdict(self)
        data["spawn_key"] = list(self.spawn_key)
        return data


def drift_vector(state: ParticleState, groups: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    Σ_{j≠i} ½ sgn(X_j − X_i) with sgn(0) = 0. With `groups` (one label per
    particle) the pulls between particles of the same group are removed.
    """
    x = state.positions
    drift = _pull(x)
    if groups is not None:
        labels = np.asarray(groups)
        if labels.size != x.size:
            raise ValidationError("one group label per particle is required")
        for label in np.unique(labels):
            idx = np.flatnonzero(labels == label)
            drift[idx] -= _pull(x[idx])
    return drift


def _pull(x: np.ndarray) -> np.ndarray:
    ordered = np.sort(x)
    left = np.searchsorted(ordered, x, side="left")
    right = x.size - np.searchsorted(ordered, x, side="right")
    return 0.5 * (right - left)


class _NoiseSource:
    """Standard normals from one Philox substream per particle, drawn in blocks."""

    def __init__(self, config: SimConfig, n: int):
        root = np.random.SeedSequence(config.seed, spawn_key=config.spawn_key)
        self._streams = [np.random.Generator(np.random.Philox(child)) for child in root.spawn(n)]
        self._block = np.empty((n, 0))
        self._cursor = 0

    def next(self) -> np.ndarray:
        if self._cursor >= self._block.shape[1]:
            self._block = np.stack([g.standard_normal(NOISE_BLOCK) for g in self._streams])
            self._cursor = 0
        column = self._block[:, self._cursor]
        self._cursor += 1
        return column


def simulate(initial: ParticleState, config: SimConfig, horizon_micro: float,
             snapshot_times: Sequence[float], groups: Optional[Sequence[int]] = None,
             cancel_event: Optional[threading.Event] = None) -> List[ParticleState]:
    """
    Fixed-step Euler–Maruyama from `initial`; the last step is shortened to
    land on the horizon. Snapshots are linearly interpolated between steps.
    """
    horizon_micro = float(horizon_micro)
    start = initial.micro_time
    if not horizon_micro >= start:
        raise ValidationError("horizon precedes the initial time")
    times = np.sort(np.asarray(snapshot_times, dtype=float).reshape(-1))
    slack = 1e-12 * max(1.0, horizon_micro)
    if times.size and (times[0] < start - slack or times[-1] > horizon_micro + slack):
        raise ValidationError(f"snapshot times must lie in [{start!r}, {horizon_micro!r}]")
    times = np.clip(times, start, horizon_micro)

    noise = _NoiseSource(config, initial.n) if config.noise_scale > 0 else None
    x = np.array(initial.positions, dtype=float)
    now = start
    out: List[ParticleState] = []
    pending = 0

    def emit(at: float, positions: np.ndarray):
        out.append(ParticleState(positions, at, initial.n, initial.scale))

    while pending < times.size and times[pending] <= now:
        emit(float(times[pending]), x.copy())
        pending += 1

    steps = 0
    while now < horizon_micro and pending < times.size:
        if cancel_event is not None and cancel_event.is_set():
            logger.info("simulation cancelled at micro time %g", now)
            break
        dt = min(config.dt, horizon_micro - now)
        drift = drift_vector(ParticleState(x, now, initial.n, initial.scale), groups)
        step = drift * dt
        if noise is not None:
            step = step + config.noise_scale * math.sqrt(dt) * noise.next()
        nxt = x + step
        later = now + dt if horizon_micro - (now + dt) > slack else horizon_micro
        while pending < times.size and times[pending] <= later:
            w = (times[pending] - now) / (later - now)
            emit(float(times[pending]), (1.0 - w) * x + w * nxt)
            pending += 1
        x, now = nxt, later
        steps += 1

    logger.debug("simulated N=%d for %d steps up to micro time %g", initial.n, steps, now)
    return out


def empirical_measure(state: ParticleState) -> AtomicMeasure:
    """(1/N)Σ δ_{X_i/(NT)} with coincident particles coalesced."""
    return AtomicMeasure.from_atoms(state.macro_positions, np.full(state.n, 1.0 / state.n))


def cluster_counts(masses: Sequence[float], n: int) -> np.ndarray:
    """Particles per cluster, proportional to the masses and summing to n (largest remainders)."""
    m = np.asarray(masses, dtype=float).reshape(-1)
    if m.size == 0 or np.any(m <= 0):
        raise ValidationError("cluster masses must be positive")
    share = n * m / m.sum()
    counts = np.floor(share + 1e-9).astype(int)
    short = n - int(counts.sum())
    if short > 0:
        counts[np.argsort(-(share - counts), kind="stable")[:short]] += 1
    if np.any(counts < 1):
        raise ValidationError(f"N={n} is too small to give every cluster a particle")
    return counts


def assign_clusters(counts: Sequence[int]) -> np.ndarray:
    """Cluster index of every particle: the first counts[0] indices go to cluster 0, and so on."""
    counts = np.asarray(counts, dtype=int)
    return np.repeat(np.arange(counts.size), counts)


def cluster_initial_state(start_positions: Sequence[float], masses: Sequence[float],
                          n: int, scale: float) -> Tuple[ParticleState, np.ndarray]:
    """Particles stacked at N·T·x_c, cluster c holding its share of the N particles."""
    x = np.asarray(start_positions, dtype=float).reshape(-1)
    counts = cluster_counts(masses, n)
    if counts.size != x.size:
        raise ValidationError(f"{x.size} positions but {counts.size} masses")
    positions = np.repeat(n * scale * x, counts)
    return ParticleState(positions, 0.0, n, scale), counts


def deviation_distance(trajectory: Sequence[ParticleState], dev: ClusteringDeviation,
                       assignment: Sequence[int]) -> Tuple[float, float]:
    """
    (sup over snapshots and particles of |X_i/(NT) − ξ_{c(i)}(s)|,
     sup over snapshots of the weak distance to Σ_c (n_c/N) δ_{ξ_c(s)}).
    """
    assignment = np.asarray(assignment, dtype=int)
    if not trajectory:
        return 0.0, 0.0
    n = trajectory[0].n
    if assignment.size != n:
        raise ValidationError(f"assignment covers {assignment.size} particles, N={n}")
    counts = np.bincount(assignment, minlength=dev.n)
    if counts.size != dev.n:
        raise ValidationError("assignment refers to clusters the deviation does not have")
    occupied = counts > 0
    slack = 1e-9 * max(1.0, dev.horizon)
    sup_fine = sup_weak = 0.0
    for state in trajectory:
        s = state.macro_time
        if s < -slack or s > dev.horizon + slack:
            raise ValidationError(f"snapshot at macro time {s!r} outside the deviation horizon {dev.horizon!r}")
        clusters = dev.positions(min(max(s, 0.0), dev.horizon))
        sup_fine = max(sup_fine, float(np.max(np.abs(state.macro_positions - clusters[assignment]))))
        target = AtomicMeasure.from_atoms(clusters[occupied], counts[occupied] / n)
        sup_weak = max(sup_weak, weak_distance(empirical_measure(state), target).value)
    return sup_fine, sup_weak


@dataclass
class ExperimentReport:
    n_replicas: int
    n: int
    scale: float
    regime: float
    clustering_regime: bool
    quantile_levels: Tuple[float, ...]
    quantiles: Dict[str, List[float]] = field(default_factory=dict)
    median_spread: Optional[float] = None
    below_threshold: Optional[bool] = None
    seeds: List[Dict[str, Any]] = field(default_factory=list)
    replicas: List[Dict[str, float]] = field(default_factory=list)
    config: Dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> Dict[str, Any]:
        data = asdict(self)
        data["quantile_levels"] = list(self.quantile_levels)
        return data


def _run_replica(r: int, initial: ParticleState, counts: np.ndarray, config: SimConfig,
                 horizon: float, grid: np.ndarray, optimal: ClusteringDeviation,
                 inertia: ClusteringDeviation, cancel_event: Optional[threading.Event]) -> Dict[str, float]:
    replica_config = replace(config, spawn_key=(r,))
    trajectory = simulate(initial, replica_config, horizon * initial.scale, grid * initial.scale,
                          cancel_event=cancel_event)
    assignment = assign_clusters(counts)
    fine_opt, weak_opt = deviation_distance(trajectory, optimal, assignment)
    fine_in, weak_in = deviation_distance(trajectory, inertia, assignment)
    final = trajectory[-1].macro_positions
    return {
        "replica": r,
        "sup_fine_optimal": fine_opt,
        "sup_weak_optimal": weak_opt,
        "sup_fine_inertia": fine_in,
        "sup_weak_inertia": weak_in,
        "spread": float(final.max() - final.min()),
    }


def mc_clustering_experiment(n_replicas: int, n: int, scale: float,
                             start_positions: Sequence[float], masses: Sequence[float],
                             terminal_point: float, horizon: float, config: SimConfig,
                             workers: Optional[int] = None, snapshots: int = DEFAULT_SNAPSHOTS,
                             cancel_event: Optional[threading.Event] = None,
                             queue: Optional[Any] = None) -> ExperimentReport:
    """
    Simulate `n_replicas` independent systems started from the clusters
    (x, m) and measure how far they stay from the optimal and the inertia
    deviations over [0, horizon] (macroscopic time), plus the terminal spread.

    The N particles carry mass 1/N each, so `masses` only fix the share of
    particles per cluster and are rescaled to sum to 1. Positions are
    macroscopic already and are not rescaled.
    """
    if n_replicas < 0:
        raise ValidationError("replica count must be nonnegative")
    if n < 1:
        raise ValidationError("N must be >= 1")
    regime = n * n * scale
    report = ExperimentReport(
        n_replicas=n_replicas,
        n=n,
        scale=scale,
        regime=regime,
        clustering_regime=regime >= 1.0,
        quantile_levels=tuple(SPREAD_QUANTILES),
        config=config.to_json(),
    )
    if not report.clustering_regime:
        logger.warning("N²T = %g < 1: outside the clustering regime", regime)
    if n_replicas == 0:
        return report

    initial, counts = cluster_initial_state(start_positions, masses, n, scale)
    total = float(np.sum(masses))
    if abs(total - 1.0) > 1e-12:
        logger.warning("masses sum to %g; rescaled to the unit mass of the particle system", total)
    masses = np.asarray(masses, dtype=float) / total
    optimal, _ = optimal_deviation(start_positions, masses, terminal_point, horizon)
    inertia, _ = evolve_inertia_clusters(start_positions, masses, horizon)
    grid = np.linspace(0.0, horizon, max(2, snapshots))

    queue = queue if queue is not None else LogQueue(logger)
    tasks = [
        (lambda r=r: _run_replica(r, initial, counts, config, horizon, grid, optimal, inertia, cancel_event))
        for r in range(n_replicas)
    ]
    results = run_replicas(tasks, workers=workers, cancel_event=cancel_event, queue=queue)
    records = sorted((res for res in results if res is not None), key=lambda rec: rec["replica"])

    report.replicas = records
    report.seeds = [{"replica": rec["replica"], "entropy": config.seed, "spawn_key": [rec["replica"]]}
                    for rec in records]
    if records:
        for key in ("sup_fine_optimal", "sup_weak_optimal", "sup_fine_inertia", "sup_weak_inertia", "spread"):
            values = np.array([rec[key] for rec in records])
            report.quantiles[key] = np.quantile(values, report.quantile_levels).tolist()
        report.median_spread = float(np.median([rec["spread"] for rec in records]))
        report.below_threshold = report.median_spread <= SPREAD_THRESHOLD
    queue.put(("done", f"{len(records)}/{n_replicas} replicas, median spread {report.median_spread}"))
    return report
