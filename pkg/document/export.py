"""
File formats written by the command line: JSON documents, 17-digit CSV
tables and the run manifest that ties them together.
"""
import csv
import io
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from config import MANIFEST_NAME, TOOL_VERSION
from core.deviation import ClusteringDeviation
from core.errors import ValidationError
from core.kpz import ShockFan
from utils.helpers import atomic_write_text, fmt_float, load_json, sha256_file, write_json

logger = logging.getLogger(__name__)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[float]]) -> None:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt_float(v) for v in row])
    atomic_write_text(path, buffer.getvalue())


def read_csv(path: str) -> Dict[str, np.ndarray]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    table = np.array(rows, dtype=float).reshape(-1, len(header))
    return {name: table[:, k] for k, name in enumerate(header)}


def export_trajectory(path: str, dev: ClusteringDeviation, samples: Optional[int] = None) -> None:
    """Columns s, x_1..x_n at the knot times (or on a uniform grid of `samples` points)."""
    grid = dev.breakpoints() if not samples else np.linspace(0.0, dev.horizon, samples)
    table = dev.sample(grid)
    header = ["s"] + [f"x_{c + 1}" for c in range(dev.n)]
    write_csv(path, header, (np.concatenate(([s], row)) for s, row in zip(grid, table)))


def export_shocks(path: str, fan: ShockFan, samples: int = 101) -> None:
    grid = np.unique(np.concatenate([np.linspace(0.0, fan.horizon, samples)] + list(fan.knot_times)))
    table = fan.sample(grid)
    header = ["s"] + [f"shock_{c + 1}" for c in range(fan.n)]
    write_csv(path, header, (np.concatenate(([s], row)) for s, row in zip(grid, table)))


def export_particles(path: str, trajectory) -> None:
    """Columns t, X_1..X_N in microscopic units."""
    if not trajectory:
        raise ValidationError("nothing to export: empty trajectory")
    header = ["t"] + [f"X_{i + 1}" for i in range(trajectory[0].n)]
    write_csv(path, header, (np.concatenate(([st.micro_time], st.positions)) for st in trajectory))


def export_shape_samples(path: str, shape, xs) -> None:
    write_csv(path, ["x", "h", "u"], shape.sample(xs))


@dataclass
class RunManifest:
    command: str
    parameters: Dict[str, Any]
    seeds: List[Any] = field(default_factory=list)
    tool_version: str = TOOL_VERSION
    digests: Dict[str, str] = field(default_factory=dict)

    def to_json(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "parameters": self.parameters,
            "seeds": self.seeds,
            "tool_version": self.tool_version,
            "digests": dict(sorted(self.digests.items())),
        }

    @classmethod
    def from_json(cls, data: Dict[str, Any]) -> "RunManifest":
        try:
            return cls(
                command=str(data["command"]),
                parameters=dict(data["parameters"]),
                seeds=list(data.get("seeds", [])),
                tool_version=str(data.get("tool_version", TOOL_VERSION)),
                digests=dict(data.get("digests", {})),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"malformed manifest: {e}") from e

    def record(self, out_dir: str, names: Iterable[str]) -> None:
        for name in names:
            self.digests[name] = sha256_file(os.path.join(out_dir, name))

    def save(self, out_dir: str) -> str:
        path = os.path.join(out_dir, MANIFEST_NAME)
        write_json(path, self.to_json())
        logger.info("manifest written: %s (%d files)", path, len(self.digests))
        return path

    @classmethod
    def load(cls, path: str) -> "RunManifest":
        return cls.from_json(load_json(path))

    def mismatches(self, out_dir: str) -> List[str]:
        """Files whose digest in `out_dir` differs from the recorded one."""
        bad = []
        for name, digest in sorted(self.digests.items()):
            target = os.path.join(out_dir, name)
            if not os.path.exists(target) or sha256_file(target) != digest:
                bad.append(name)
        return bad
