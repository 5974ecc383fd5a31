"""Result containers and their CSV/JSON export."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

CSV_VERSION_LINE = "# gausskry-csv v1"


def fmt(x) -> str:
    """Round-trippable, platform independent float formatting."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(fh, header: list[str], rows) -> None:
    fh.write(CSV_VERSION_LINE + "\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])


@dataclass
class IterationTrace:
    """Per-iterate diagnostics of an iterative solve."""

    k: list[int] = field(default_factory=list)
    residual: list[float] = field(default_factory=list)
    energy_dev: list[float] = field(default_factory=list)
    elapsed_ns: list[int] = field(default_factory=list)

    def append(self, k: int, residual: float, energy_dev: float, elapsed_ns: int) -> None:
        self.k.append(int(k))
        self.residual.append(float(residual))
        self.energy_dev.append(float(energy_dev))
        self.elapsed_ns.append(int(elapsed_ns))

    def __len__(self) -> int:
        return len(self.k)

    def rows(self, *, timing: bool = True):
        for k, r, e, t in zip(self.k, self.residual, self.energy_dev, self.elapsed_ns):
            yield k, r, e, (t if timing else 0)

    def to_csv(self, fh=None, *, method: str | None = None, timing: bool = True) -> str | None:
        """Write the trace as CSV.

        Columns are ``k, residual_euclid, energy_dev, elapsed_ns``; with
        ``method`` given a ``method`` column follows ``k``.  Without ``timing``
        the elapsed column is zero so reruns produce identical files.
        """
        out = io.StringIO() if fh is None else fh
        if method is None:
            header = ["k", "residual_euclid", "energy_dev", "elapsed_ns"]
            rows = self.rows(timing=timing)
        else:
            header = ["k", "method", "residual_euclid", "energy_dev", "elapsed_ns"]
            rows = ((k, method, r, e, t) for k, r, e, t in self.rows(timing=timing))
        write_csv(out, header, rows)
        return out.getvalue() if fh is None else None


@dataclass
class LinearSolveReport:
    iterate: np.ndarray
    residual_euclid: float
    energy_dev: float
    k: int
    converged: bool
    trace: IterationTrace
    method: str = ""
    solves: int = 0
    breakdown: bool = False


@dataclass
class NonlinearSolveReport:
    solution: np.ndarray
    trace: IterationTrace
    k_used: int
    converged: bool
    method: str
    iterates: list[np.ndarray] = field(default_factory=list)
    x_iterates: list[np.ndarray] = field(default_factory=list)


@dataclass
class TrajectoryReport:
    """Discrete trajectory ``y_0, ..., y_m`` on the grid ``t_i = i h``."""

    times: np.ndarray
    states: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    q_norm0: float
    energy_devs: np.ndarray
    label: str = ""

    @property
    def max_energy_dev(self) -> float:
        return float(np.max(self.energy_devs)) if len(self.energy_devs) else 0.0

    @property
    def avg_iterations(self) -> float:
        return float(np.mean(self.iterations)) if len(self.iterations) else 0.0

    @property
    def steps(self) -> int:
        return len(self.times) - 1
