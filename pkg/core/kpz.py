"""
Terminal shapes above the parabola ℘(t,x) = −x²/(2t), the KPZ rate I_KPZ,
its gradient and inverse, the backward Hopf–Lax limit shape and its shocks,
plus the Legendre-duality cross-checks against the cluster side.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from config import (
    COINCIDE_TOL, CONCAVITY_TOL, INVERT_MAX_SWEEPS, INVERT_TOL,
    MERGE_INSTANT_TOL, MERGE_TIME_RTOL, PARABOLA_DISC_TOL,
)
from core.clusters import optimal_deviation
from core.errors import ConvergenceError, ValidationError
from core.rates import lyapunov_exponent

logger = logging.getLogger(__name__)

NEWTON_SWITCH = 1e-3
_EPS = np.finfo(float).eps


class Line(NamedTuple):
    slope: float
    intercept: float

    def __call__(self, x):
        return self.slope * np.asarray(x, dtype=float) + self.intercept


@dataclass(frozen=True)
class Piece:
    """One segment of a shape: a line on [a, bx] or the parabola ℘(t) on [a, bx]."""
    kind: str
    a: float
    bx: float
    u: float = 0.0
    b: float = 0.0

    def to_json(self) -> Dict[str, Any]:
        if self.kind == "linear":
            return {"kind": "linear", "u": self.u, "b": self.b, "a": self.a, "bx": self.bx}
        return {"kind": "parabola", "a": self.a, "bx": self.bx}


@dataclass(frozen=True)
class BranchLines:
    """
    Lines of one branch in slope order: left tangent, chords, right tangent.
    Shock j of the branch separates lines j and j+1.
    """
    members: Tuple[int, ...]
    lines: Tuple[Line, ...]
    left_tangent: float
    right_tangent: float

    def to_json(self) -> Dict[str, Any]:
        return {
            "members": list(self.members),
            "lines": [[ln.slope, ln.intercept] for ln in self.lines],
            "tangents": [self.left_tangent, self.right_tangent],
        }


@dataclass(frozen=True, eq=False)
class ShapeFunction:
    t: float
    pieces: Tuple[Piece, ...]
    nodes_x: np.ndarray
    nodes_h: np.ndarray
    left_slopes: np.ndarray
    right_slopes: np.ndarray
    branches: Tuple[BranchLines, ...] = ()
    concave: bool = True

    @property
    def slope_drops(self) -> np.ndarray:
        return self.left_slopes - self.right_slopes

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = parabola(self.t, x)
        for piece in self.pieces:
            if piece.kind == "linear":
                mask = (x >= piece.a) & (x <= piece.bx)
                out = np.where(mask, piece.u * x + piece.b, out)
        return float(out) if out.ndim == 0 else out

    def slope(self, x):
        """Right derivative of the shape."""
        x = np.asarray(x, dtype=float)
        out = -x / self.t
        for piece in self.pieces:
            if piece.kind == "linear":
                mask = (x >= piece.a) & (x < piece.bx)
                out = np.where(mask, piece.u, out)
        return float(out) if out.ndim == 0 else out

    def sample(self, xs) -> np.ndarray:
        """Columns x, h, u for plotting."""
        xs = np.asarray(xs, dtype=float)
        return np.column_stack([xs, self.value(xs), self.slope(xs)])

    def support(self) -> Tuple[float, float]:
        """Interval outside which the shape equals the parabola."""
        if not self.pieces:
            x0 = float(self.nodes_x[0]) if self.nodes_x.size else 0.0
            return x0, x0
        return self.pieces[0].a, self.pieces[-1].bx

    def to_json(self) -> Dict[str, Any]:
        return {
            "t": self.t,
            "pieces": [p.to_json() for p in self.pieces],
            "nodes": [[float(x), float(h)] for x, h in zip(self.nodes_x, self.nodes_h)],
            "slopes": [[float(a), float(b)] for a, b in zip(self.left_slopes, self.right_slopes)],
            "branches": [b.to_json() for b in self.branches],
            "concave": self.concave,
        }

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "ShapeFunction":
        try:
            pieces = tuple(
                Piece("linear", float(p["a"]), float(p["bx"]), float(p["u"]), float(p["b"]))
                if p["kind"] == "linear" else Piece("parabola", float(p["a"]), float(p["bx"]))
                for p in data["pieces"]
            )
            nodes = np.array(data.get("nodes") or np.empty((0, 2)), dtype=float).reshape(-1, 2)
            slopes = np.array(data.get("slopes") or np.empty((0, 2)), dtype=float).reshape(-1, 2)
            branches = tuple(
                BranchLines(
                    members=tuple(int(i) for i in b["members"]),
                    lines=tuple(Line(float(u), float(c)) for u, c in b["lines"]),
                    left_tangent=float(b["tangents"][0]),
                    right_tangent=float(b["tangents"][1]),
                )
                for b in data.get("branches", [])
            )
            return cls(float(data["t"]), pieces, nodes[:, 0], nodes[:, 1],
                       slopes[:, 0], slopes[:, 1], branches, bool(data.get("concave", True)))
        except (KeyError, TypeError, ValueError, IndexError) as e:
            raise ValidationError(f"malformed shape JSON: {e}") from e


@dataclass(frozen=True, eq=False)
class ShockFan:
    """Shock trajectories in backward time s ∈ [0, horizon], one per node."""
    horizon: float
    knot_times: Tuple[np.ndarray, ...]
    knot_positions: Tuple[np.ndarray, ...]
    segments: Tuple[Tuple[Tuple[float, float, float, float], ...], ...]
    branches: Tuple[Tuple[int, ...], ...]
    cones: Tuple[Tuple[float, float], ...] = field(default=())

    @property
    def n(self) -> int:
        return len(self.knot_times)

    def position(self, c: int, s):
        return np.interp(s, self.knot_times[c], self.knot_positions[c])

    def sample(self, grid) -> np.ndarray:
        grid = np.asarray(grid, dtype=float)
        return np.column_stack([self.position(c, grid) for c in range(self.n)])


class DecompositionReport(NamedTuple):
    t_horizon: float
    t_mid: float
    positions: Tuple[float, ...]
    groups: Tuple[Tuple[int, ...], ...]
    masses: Tuple[float, ...]
    h_prime: Tuple[float, ...]
    lhs: float
    first_leg: float
    second_leg: Tuple[float, ...]
    residual_split: float
    residual_gradient: float

    def to_json(self) -> Dict[str, Any]:
        data = self._asdict()
        data["groups"] = [list(g) for g in self.groups]
        for key in ("positions", "masses", "h_prime", "second_leg"):
            data[key] = list(data[key])
        return data


def parabola(t: float, x):
    x = np.asarray(x, dtype=float)
    return -x * x / (2.0 * t)


def hopf_lax_line(u: float, b: float, s: float) -> Line:
    """HL_s of the line u·x + b is the same line lowered by (s/2)u²."""
    return Line(u, b - 0.5 * s * u * u)


def _validate_nodes(t: float, x: Sequence[float], values: Sequence[float], name: str = "h"):
    t = float(t)
    if not (math.isfinite(t) and t > 0):
        raise ValidationError("time must be positive")
    x = np.array(x, dtype=float).reshape(-1)
    values = np.array(values, dtype=float).reshape(-1)
    if x.size == 0:
        raise ValidationError("at least one node is required")
    if x.size != values.size:
        raise ValidationError(f"{x.size} node positions but {values.size} values of {name}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(values))):
        raise ValidationError("node positions and values must be finite")
    if np.any(np.diff(x) <= 0):
        raise ValidationError("node positions must be strictly increasing")
    return t, x, values


def _roots(t: float, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """√(x² + 2th) per node; a discriminant within tolerance of 0 puts the node on the parabola."""
    disc = x * x + 2.0 * t * h
    tol = PARABOLA_DISC_TOL * np.maximum(1.0, x * x)
    below = np.flatnonzero(disc < -tol)
    if below.size:
        c = int(below[0])
        raise ValidationError(
            f"node {c} lies below the parabola: h={h[c]!r} < {float(parabola(t, x[c]))!r}")
    return np.sqrt(np.where(disc <= tol, 0.0, disc))


def _chord_clears(t: float, xa: float, ha: float, xb: float, hb: float) -> bool:
    """True when the chord stays strictly above ℘ inside (xa, xb)."""
    s = (hb - ha) / (xb - xa)
    vertex = -t * s
    if xa < vertex < xb:
        return ha + s * (vertex - xa) + vertex * vertex / (2.0 * t) > 0
    return True


def _structure(t: float, x: np.ndarray, h: np.ndarray):
    root = _roots(t, x, h)
    joins = np.array([_chord_clears(t, x[c], h[c], x[c + 1], h[c + 1])
                      for c in range(x.size - 1)], dtype=bool)
    chord = np.diff(h) / np.diff(x)
    left = (root - x) / t
    right = -(x + root) / t
    left[1:][joins] = chord[joins]
    right[:-1][joins] = chord[joins]
    return root, joins, chord, left, right


def build_hf(t: float, x: Sequence[float], h: Sequence[float]) -> ShapeFunction:
    t, x, h = _validate_nodes(t, x, h)
    root, joins, chord, left, right = _structure(t, x, h)

    spans: List[Tuple[int, int]] = []
    lo = 0
    for c in range(x.size - 1):
        if not joins[c]:
            spans.append((lo, c))
            lo = c + 1
    spans.append((lo, x.size - 1))

    tangents = [[x[lo] - root[lo], x[hi] + root[hi]] for lo, hi in spans]
    for k in range(len(tangents) - 1):
        if tangents[k][1] > tangents[k + 1][0]:
            mid = 0.5 * (tangents[k][1] + tangents[k + 1][0])
            tangents[k][1] = tangents[k + 1][0] = mid

    pieces: List[Piece] = []
    branches: List[BranchLines] = []
    for k, (lo, hi) in enumerate(spans):
        y_left, y_right = tangents[k]
        if k > 0 and y_left > tangents[k - 1][1]:
            pieces.append(Piece("parabola", tangents[k - 1][1], y_left))
        lines = [Line(left[lo], h[lo] - left[lo] * x[lo])]
        lines += [Line(chord[c], h[c] - chord[c] * x[c]) for c in range(lo, hi)]
        lines.append(Line(right[hi], h[hi] - right[hi] * x[hi]))
        bounds = [y_left] + list(x[lo:hi + 1]) + [y_right]
        for line, a, bx in zip(lines, bounds[:-1], bounds[1:]):
            if bx > a:
                pieces.append(Piece("linear", float(a), float(bx), float(line.slope), float(line.intercept)))
        branches.append(BranchLines(tuple(range(lo, hi + 1)), tuple(lines), float(y_left), float(y_right)))

    drops = left - right
    return ShapeFunction(
        t=t,
        pieces=tuple(pieces),
        nodes_x=x,
        nodes_h=h,
        left_slopes=left,
        right_slopes=right,
        branches=tuple(branches),
        concave=bool(np.all(drops >= -CONCAVITY_TOL)),
    )


def concavity(t: float, x: Sequence[float], h: Sequence[float]) -> Tuple[bool, bool]:
    """(h_f is concave, some node has a vanishing slope drop)."""
    drops = i_kpz_gradient(t, x, h)
    return bool(np.all(drops >= -CONCAVITY_TOL)), bool(np.any(np.abs(drops) <= CONCAVITY_TOL))


def i_kpz(shape: ShapeFunction) -> float:
    """∫ ((∂h_f)² − (∂℘)²)/2 dx; only the linear pieces contribute."""
    t2 = shape.t * shape.t
    terms = [
        (p.bx - p.a) * p.u * p.u / 2.0 - (p.bx ** 3 - p.a ** 3) / (6.0 * t2)
        for p in shape.pieces if p.kind == "linear"
    ]
    return math.fsum(terms)


def i_kpz_gradient(t: float, x: Sequence[float], h: Sequence[float]) -> np.ndarray:
    """Slope drop (∂h_f)(x_c⁻) − (∂h_f)(x_c⁺) at every node."""
    t, x, h = _validate_nodes(t, x, h)
    _, _, _, left, right = _structure(t, x, h)
    return left - right


def _local_gradient(t: float, x: np.ndarray, h: np.ndarray, c: int, hc: float) -> float:
    """Slope drop at node c when h_c is replaced by hc and the other nodes stay put."""
    root = math.sqrt(max(x[c] * x[c] + 2.0 * t * hc, 0.0))
    if c > 0 and _chord_clears(t, x[c - 1], h[c - 1], x[c], hc):
        left = (hc - h[c - 1]) / (x[c] - x[c - 1])
    else:
        left = (root - x[c]) / t
    if c < x.size - 1 and _chord_clears(t, x[c], hc, x[c + 1], h[c + 1]):
        right = (h[c + 1] - hc) / (x[c + 1] - x[c])
    else:
        right = -(x[c] + root) / t
    return left - right


def _solve_coordinate(t: float, x: np.ndarray, h: np.ndarray, m: np.ndarray, c: int) -> float:
    def f(hc: float) -> float:
        return _local_gradient(t, x, h, c, hc) - m[c]

    floor = -x[c] * x[c] / (2.0 * t)
    lo = h[c] if f(h[c]) <= 0 else floor
    if f(lo) >= 0:
        return lo
    step = max(1.0, abs(lo))
    for _ in range(200):
        hi = lo + step
        if f(hi) >= 0:
            break
        step *= 2.0
    else:
        raise ConvergenceError(f"could not bracket node {c} for slope drop {m[c]!r}")
    return brentq(f, lo, hi, xtol=1e-15, rtol=4 * _EPS, maxiter=500)


def _newton_step(t: float, x: np.ndarray, h: np.ndarray, m: np.ndarray) -> Optional[np.ndarray]:
    root, joins, _, left, right = _structure(t, x, h)
    n = x.size
    gaps = np.diff(x)
    jac = np.zeros((n, n))
    for c in range(n):
        joined_left = c > 0 and joins[c - 1]
        joined_right = c < n - 1 and joins[c]
        if (not joined_left or not joined_right) and root[c] <= 1e-12:
            return None
        jac[c, c] += 1.0 / gaps[c - 1] if joined_left else 1.0 / root[c]
        jac[c, c] += 1.0 / gaps[c] if joined_right else 1.0 / root[c]
        if joined_left:
            jac[c, c - 1] = -1.0 / gaps[c - 1]
        if joined_right:
            jac[c, c + 1] = -1.0 / gaps[c]
    try:
        delta = np.linalg.solve(jac, m - (left - right))
    except np.linalg.LinAlgError:
        return None
    candidate = h + delta
    if np.any(x * x + 2.0 * t * candidate < 0):
        return None
    return candidate


def _residual(t: float, x: np.ndarray, h: np.ndarray, m: np.ndarray) -> float:
    _, _, _, left, right = _structure(t, x, h)
    return float(np.max(np.abs(left - right - m)))


def invert_gradient(t: float, x: Sequence[float], m: Sequence[float],
                    tol: float = INVERT_TOL, max_sweeps: int = INVERT_MAX_SWEEPS) -> np.ndarray:
    """
    Solve ∇I_KPZ(t, x, h) = m for h in the concave region.

    Coordinate sweeps raise one h_c at a time until its slope drop matches
    m_c; raising h_c lowers every other slope drop, so the iterates climb
    monotonically to the solution. Once the residual is small a Newton step
    on the tridiagonal Jacobian is tried and kept only if it helps.
    """
    t, x, m = _validate_nodes(t, x, m, name="m")
    if np.any(m < 0):
        raise ValidationError("slope drops m must be nonnegative")
    h = parabola(t, x).astype(float)
    if not np.any(m > 0):
        return h

    residual = _residual(t, x, h, m)
    sweeps = 0
    while residual > tol and sweeps < max_sweeps:
        order = range(x.size) if sweeps % 2 == 0 else range(x.size - 1, -1, -1)
        for c in order:
            h[c] = _solve_coordinate(t, x, h, m, c)
        sweeps += 1
        residual = _residual(t, x, h, m)
        if tol < residual < NEWTON_SWITCH:
            candidate = _newton_step(t, x, h, m)
            if candidate is not None:
                candidate_residual = _residual(t, x, candidate, m)
                if candidate_residual < residual:
                    h, residual = candidate, candidate_residual

    if residual > tol:
        raise ConvergenceError(
            f"gradient inversion stalled at residual {residual:.3e} after {sweeps} sweeps")
    logger.debug("gradient inverted in %d sweeps, residual %.3e", sweeps, residual)
    return h


def _lower_envelope(lines: Sequence[Line]) -> List[Line]:
    """Lines of min_k L_k from left to right; input sorted by decreasing slope."""
    hull: List[Line] = []
    for line in lines:
        if hull and abs(line.slope - hull[-1].slope) <= _EPS * max(1.0, abs(line.slope)):
            if line.intercept >= hull[-1].intercept:
                continue
            hull.pop()
        while len(hull) >= 2 and _cross(hull[-2], line) <= _cross(hull[-2], hull[-1]):
            hull.pop()
        hull.append(line)
    return hull


def _cross(p: Line, q: Line) -> float:
    return (q.intercept - p.intercept) / (p.slope - q.slope)


def hopf_lax_evolve(shape: ShapeFunction, back_time: float) -> ShapeFunction:
    """
    𝔥⋆ at time t − s from the terminal shape at time t: every line of the
    line representation drops by (s/2)u², the parabola becomes ℘(t − s)
    and each branch lives between its tangent abscissas scaled by (t − s)/t.
    """
    horizon, s = shape.t, float(back_time)
    if not (0.0 <= s <= horizon):
        raise ValidationError(f"back time {s!r} outside [0, {horizon!r}]")
    if s == horizon:
        raise ValidationError("the limit shape degenerates at back time equal to the horizon")
    if not shape.concave or not shape.branches:
        raise ValidationError("backward evolution needs the line representation of a concave shape")
    if s == 0.0:
        return shape

    t_new = horizon - s
    ratio = t_new / horizon
    pieces: List[Piece] = []
    branches: List[BranchLines] = []
    kinks_x, kinks_h, kinks_left, kinks_right = [], [], [], []
    previous_right: Optional[float] = None
    for branch in shape.branches:
        lines = tuple(hopf_lax_line(ln.slope, ln.intercept, s) for ln in branch.lines)
        y_left, y_right = branch.left_tangent * ratio, branch.right_tangent * ratio
        if previous_right is not None and y_left > previous_right:
            pieces.append(Piece("parabola", previous_right, y_left))
        hull = _lower_envelope(sorted(lines, key=lambda ln: -ln.slope))
        cuts = [float(np.clip(_cross(p, q), y_left, y_right)) for p, q in zip(hull[:-1], hull[1:])]
        bounds = [y_left] + cuts + [y_right]
        for line, a, bx in zip(hull, bounds[:-1], bounds[1:]):
            if bx > a:
                pieces.append(Piece("linear", a, bx, line.slope, line.intercept))
        for k, cut in enumerate(cuts):
            kinks_x.append(cut)
            kinks_h.append(float(hull[k](cut)))
            kinks_left.append(hull[k].slope)
            kinks_right.append(hull[k + 1].slope)
        branches.append(BranchLines(branch.members, lines, y_left, y_right))
        previous_right = y_right

    return ShapeFunction(
        t=t_new,
        pieces=tuple(pieces),
        nodes_x=np.array(kinks_x),
        nodes_h=np.array(kinks_h),
        left_slopes=np.array(kinks_left),
        right_slopes=np.array(kinks_right),
        branches=tuple(branches),
        concave=True,
    )


def _breakpoint(p: Line, q: Line, s: float) -> float:
    """Abscissa where the lowered lines p and q cross at back time s."""
    return (q.intercept - p.intercept - 0.5 * s * (q.slope ** 2 - p.slope ** 2)) / (p.slope - q.slope)


def shock_fan(t_horizon: float, x: Sequence[float], h: Sequence[float]) -> ShockFan:
    """
    Shocks of 𝔥⋆ traced backward from the nodes. Shock j of a branch sits
    where lines j and j+1 cross; it moves at ½(u⁻ + u⁺) and, when a line in
    between drops out of the envelope, the two neighbouring shocks merge.
    """
    shape = build_hf(t_horizon, x, h)
    if np.any(shape.slope_drops <= CONCAVITY_TOL):
        raise ValidationError("shock tracking needs h strictly inside the concave region")
    horizon = shape.t
    n = shape.nodes_x.size
    knot_times: List[List[float]] = [[] for _ in range(n)]
    knot_positions: List[List[float]] = [[] for _ in range(n)]
    segments: List[List[Tuple[float, float, float, float]]] = [[] for _ in range(n)]
    cones = []

    for branch in shape.branches:
        lines = branch.lines
        local = len(branch.members)
        active = list(range(local + 1))

        def pair_of(j: int) -> Tuple[int, int]:
            p = max(i for i in active if i <= j)
            q = min(i for i in active if i >= j + 1)
            return p, q

        for j, c in enumerate(branch.members):
            knot_times[c].append(0.0)
            knot_positions[c].append(float(shape.nodes_x[c]))
        now = 0.0
        while len(active) > 2:
            candidates = []
            for k in range(1, len(active) - 1):
                p, q, r = lines[active[k - 1]], lines[active[k]], lines[active[k + 1]]
                a_pq, a_qr = _breakpoint(p, q, 0.0), _breakpoint(q, r, 0.0)
                closing = 0.5 * (p.slope - r.slope)
                candidates.append(((a_qr - a_pq) / closing, active[k]))
            meet = min(s for s, _ in candidates)
            if meet >= horizon:
                break
            window = MERGE_TIME_RTOL * max(abs(meet), _EPS)
            vanished = {q for s, q in candidates if s - meet <= window}
            before = {j: pair_of(j) for j in range(local)}
            for j, c in enumerate(branch.members):
                p, q = before[j]
                segments[c].append((now, meet, lines[p].slope, lines[q].slope))
            active = [i for i in active if i not in vanished]
            for j, c in enumerate(branch.members):
                p, q = pair_of(j)
                if (p, q) != before[j]:
                    knot_times[c].append(meet)
                    knot_positions[c].append(_breakpoint(lines[p], lines[q], meet))
            now = max(now, meet)

        for j, c in enumerate(branch.members):
            p, q = pair_of(j)
            segments[c].append((now, horizon, lines[p].slope, lines[q].slope))
            knot_times[c].append(horizon)
            knot_positions[c].append(_breakpoint(lines[p], lines[q], horizon))
        cones.append((branch.left_tangent, branch.right_tangent))

    return ShockFan(
        horizon=horizon,
        knot_times=tuple(np.array(ts) for ts in knot_times),
        knot_positions=tuple(np.array(xs) for xs in knot_positions),
        segments=tuple(tuple(seg) for seg in segments),
        branches=tuple(b.members for b in shape.branches),
        cones=tuple(cones),
    )


def duality_check(t: float, x: Sequence[float], m: Sequence[float]) -> Tuple[float, float]:
    """
    L_SHE(0 →t (x, m)) from the optimal clusters and from m·h − I_KPZ(h)
    with h = (∇I_KPZ)⁻¹(m). Nodes with m_c = 0 are dropped first.
    """
    t, x, m = _validate_nodes(t, x, m, name="m")
    if np.any(m < 0):
        raise ValidationError("masses must be nonnegative")
    keep = m > 0
    if not np.any(keep):
        return 0.0, 0.0
    x, m = x[keep], m[keep]
    from_clusters = lyapunov_exponent(0.0, t, x, m)
    h = invert_gradient(t, x, m)
    from_legendre = float(np.dot(m, h)) - i_kpz(build_hf(t, x, h))
    logger.info("duality t=%g n=%d: clusters %.17g, legendre %.17g", t, x.size, from_clusters, from_legendre)
    return from_clusters, from_legendre


def _group_positions(positions: np.ndarray) -> List[List[int]]:
    scale = COINCIDE_TOL * max(1.0, float(np.max(np.abs(positions))))
    groups = [[0]]
    for c in range(1, positions.size):
        if positions[c] - positions[c - 1] > scale:
            groups.append([c])
        else:
            groups[-1].append(c)
    return groups


def intermediate_decomposition(t_horizon: float, x: Sequence[float], m: Sequence[float],
                               t_mid: float) -> DecompositionReport:
    """
    Split L_SHE(0 →𝔱 (x, m)) at time 𝔱′: the clusters of the optimal deviation
    at s = 𝔱 − 𝔱′ give the intermediate configuration (x′, m′), and the limit
    shape at time 𝔱′ evaluated there must have slope drops m′.
    """
    t_horizon, x, m = _validate_nodes(t_horizon, x, m, name="m")
    if np.any(m <= 0):
        raise ValidationError("masses must be positive")
    t_mid = float(t_mid)
    if not (0.0 < t_mid <= t_horizon):
        raise ValidationError(f"intermediate time {t_mid!r} outside (0, {t_horizon!r}]")
    split = t_horizon - t_mid
    dev, tree = optimal_deviation(x, m, 0.0, t_horizon)
    for event in tree.events:
        if abs(event.time - split) <= MERGE_INSTANT_TOL * max(1.0, t_horizon):
            raise ValidationError(f"intermediate time {t_mid!r} falls on a merge at s={event.time!r}")

    positions = dev.positions(split)
    groups = _group_positions(positions)
    x_mid = np.array([float(np.dot(m[g], positions[g]) / m[g].sum()) for g in groups])
    m_mid = np.array([float(m[g].sum()) for g in groups])

    lhs = lyapunov_exponent(0.0, t_horizon, x, m)
    first = lyapunov_exponent(0.0, t_mid, x_mid, m_mid)
    second = tuple(
        lyapunov_exponent(float(x_mid[a]), split, x[g], m[g]) if split > 0 else 0.0
        for a, g in enumerate(groups)
    )

    h = invert_gradient(t_horizon, x, m)
    shape = build_hf(t_horizon, x, h)
    evolved = hopf_lax_evolve(shape, split)
    h_mid = np.atleast_1d(evolved.value(x_mid))
    m_check = i_kpz_gradient(t_mid, x_mid, h_mid)

    report = DecompositionReport(
        t_horizon=t_horizon,
        t_mid=t_mid,
        positions=tuple(x_mid.tolist()),
        groups=tuple(tuple(g) for g in groups),
        masses=tuple(m_mid.tolist()),
        h_prime=tuple(h_mid.tolist()),
        lhs=lhs,
        first_leg=first,
        second_leg=second,
        residual_split=abs(lhs - first - math.fsum(second)),
        residual_gradient=float(np.max(np.abs(m_check - m_mid))),
    )
    logger.info("decomposition at t'=%g: %d groups, residuals %.3e / %.3e",
                t_mid, len(groups), report.residual_split, report.residual_gradient)
    return report


def legendre_g(t_horizon: float, x: Sequence[float], m: Sequence[float], t: float) -> float:
    """
    G(t) = Σ_c m_c 𝔥⋆(t, 𝔰_c(𝔱 − t)) − I_KPZ(𝔥⋆(t)); equals L_SHE at t = 𝔱.
    Shock positions are read off the optimal clusters.
    """
    t_horizon, x, m = _validate_nodes(t_horizon, x, m, name="m")
    if not (0.0 < t <= t_horizon):
        raise ValidationError(f"time {t!r} outside (0, {t_horizon!r}]")
    h = invert_gradient(t_horizon, x, m)
    evolved = hopf_lax_evolve(build_hf(t_horizon, x, h), t_horizon - t)
    dev, _ = optimal_deviation(x, m, 0.0, t_horizon)
    shocks = dev.positions(t_horizon - t)
    return float(np.dot(m, np.atleast_1d(evolved.value(shocks)))) - i_kpz(evolved)


def legendre_g_rate(t_horizon: float, x: Sequence[float], m: Sequence[float], t: float) -> float:
    """(d/dt)G(t) = (1/24)Σ m′³ − Σ ½ m′ 𝔰̇² over the distinct shocks at back time 𝔱 − t."""
    t_horizon, x, m = _validate_nodes(t_horizon, x, m, name="m")
    dev, tree = optimal_deviation(x, m, 0.0, t_horizon)
    s = t_horizon - float(t)
    for event in tree.events:
        if abs(event.time - s) <= MERGE_INSTANT_TOL * max(1.0, t_horizon):
            raise ValidationError(f"time {t!r} falls on a merge; the shock speed is undefined there")
    grid = dev.breakpoints()
    k = int(np.clip(np.searchsorted(grid, s, side="right") - 1, 0, grid.size - 2))
    a, b = grid[k], grid[k + 1]
    velocity = (dev.positions(b) - dev.positions(a)) / (b - a)
    rate = 0.0
    for g in _group_positions(dev.positions(s)):
        mass = m[g].sum()
        rate += mass ** 3 / 24.0 - 0.5 * mass * velocity[g[0]] ** 2
    return float(rate)
