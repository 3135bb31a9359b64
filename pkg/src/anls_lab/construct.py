"""Explicit stationary networks.

Least-squares lines, the exact encoding of a cut-off line (a x + d) 1(x >= z)
by one or two ReLU neurons, the cell-by-cell construction of a fully
trained network, and a segment-wise check that a network is least-squares
optimal on every cell of its own activation pattern.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import InvalidInputError
from .model import ReluNetwork, TrainingSet, activation_pattern, evaluate, unsorted_network

REGRESSION = "regression"
LEAST_NORM_SINGLE = "least_norm_single"


@dataclass(frozen=True)
class LsqLine:
    slope: float
    intercept: float
    kind: str

    def __call__(self, x):
        return self.slope * np.asarray(x, dtype=np.float64) + self.intercept


def lsq_line(xs, ys) -> LsqLine:
    """Least-squares line through the points; the least-norm one for a single point."""
    x = np.asarray(xs, dtype=np.float64).reshape(-1)
    y = np.asarray(ys, dtype=np.float64).reshape(-1)
    if x.size == 0 or x.size != y.size:
        raise InvalidInputError("need one or more (x, y) pairs of equal length")
    if x.size == 1:
        # among all lines through (x1, y1), (a, d) of least norm
        s = x[0] * x[0] + 1.0
        return LsqLine(float(x[0] * y[0] / s), float(y[0] / s), LEAST_NORM_SINGLE)
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise InvalidInputError("all inputs coincide; the regression line is undefined")
    a = float(dx @ (y - ym)) / sxx
    return LsqLine(a, float(ym - a * xm), REGRESSION)


def line_to_neurons(slope: float, intercept: float, z: float, eps: float) -> list[tuple[float, float]]:
    """``(bias, coeff)`` pairs reproducing ``(a x + d) 1(x >= z)`` off ``(z - eps, z)``."""
    if not eps > 0:
        raise InvalidInputError(f"eps must be positive, got {eps!r}")
    a, d = float(slope), float(intercept)
    if a == 0.0 and d == 0.0:
        return []
    if a != 0.0 and 0.0 <= z + d / a < eps:
        return [(-d / a, a)]
    return [(z - eps, (a * z + d) / eps), (z, -(a * (z - eps) + d) / eps)]


@dataclass(frozen=True, eq=False)
class Partition:
    """Contiguous cells as ``(start, stop)`` index ranges into sorted inputs."""

    bounds: tuple

    def __post_init__(self):
        b = tuple((int(s), int(e)) for s, e in self.bounds)
        if not b:
            raise InvalidInputError("partition has no cells")
        for (s0, e0), (s1, _) in zip(b, b[1:]):
            if e0 != s1:
                raise InvalidInputError("partition cells must be contiguous")
        if b[0][0] != 0:
            raise InvalidInputError("partition must start at the first point")
        object.__setattr__(self, "bounds", b)

    @property
    def size(self) -> int:
        return len(self.bounds)

    def check(self, data: TrainingSet) -> None:
        if self.bounds[-1][1] != data.m:
            raise InvalidInputError(f"partition covers {self.bounds[-1][1]} points, data has {data.m}")
        for j, (s, e) in enumerate(self.bounds):
            if e <= s:
                raise InvalidInputError(f"partition cell {j} is empty")

    @classmethod
    def from_breakpoints(cls, data: TrainingSet, breakpoints) -> "Partition":
        """Cells split at the given x values; a point equal to a breakpoint opens the next cell."""
        cuts = np.searchsorted(data.xs, np.sort(np.asarray(breakpoints, dtype=np.float64)), side="left")
        edges = np.concatenate([[0], cuts, [data.m]])
        return cls(tuple(zip(edges[:-1], edges[1:])))

    @classmethod
    def equal_width(cls, data: TrainingSet, n_cells: int) -> "Partition":
        """``n_cells`` equal-width cells over [min x, max x]; empty cells merge into the left neighbour."""
        if n_cells < 1:
            raise InvalidInputError(f"number of cells must be >= 1, got {n_cells}")
        lo, hi = data.xs[0], data.xs[-1]
        inner = lo + (hi - lo) * np.arange(1, n_cells) / n_cells
        cuts = np.searchsorted(data.xs, inner, side="left")
        edges = [0]
        for c in cuts:
            if c > edges[-1]:
                edges.append(int(c))
        if edges[-1] == data.m:
            edges.pop()
        edges.append(data.m)
        return cls(tuple(zip(edges[:-1], edges[1:])))


def build_fully_trained(partition: Partition, data: TrainingSet) -> ReluNetwork:
    """A network that is the least-squares line of the data on every cell.

    Cells are glued left to right: each one fits a line to the targets
    minus everything built so far, and that line is switched on inside the
    gap before the cell's first point, so earlier cells see none of it.
    """
    partition.check(data)
    xs, ys = data.xs, data.ys
    gaps = np.diff(xs)
    first_gap = float(gaps.min()) if gaps.size else 1.0
    biases, coeffs = [], []
    for j, (s, e) in enumerate(partition.bounds):
        x, y = xs[s:e], ys[s:e]
        if biases:
            prev = unsorted_network(biases, coeffs)
            y_hat = y - evaluate(prev, x)
        else:
            y_hat = y
        line = lsq_line(x, y_hat)
        g = first_gap if j == 0 else float(x[0] - xs[s - 1])
        # both hinge knots sit strictly inside the gap, never on a data point
        z = x[0] - 0.25 * g
        for b, c in line_to_neurons(line.slope, line.intercept, z, 0.5 * g):
            biases.append(b)
            coeffs.append(c)
    return unsorted_network(biases, coeffs)


@dataclass
class SegmentCheck:
    cell: int
    count: int
    kind: str
    deviation: float
    passed: bool


@dataclass
class StationaryReport:
    segments: list = field(default_factory=list)
    max_deviation: float = 0.0
    tol: float = 1e-8

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.segments)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "max_deviation": self.max_deviation,
            "tol": self.tol,
            "segments": [vars(s) for s in self.segments],
        }


def verify_lsq_stationary(net: ReluNetwork, data: TrainingSet, tol: float = 1e-8) -> StationaryReport:
    """Check that on each occupied cell l >= 1 the last active neuron is the
    least-squares line of the targets minus the earlier neurons.

    Slope and intercept deviations are measured relative to
    ``max(1, |c_l|, |c_l b_l|)``; single-point cells check interpolation.
    """
    pattern = activation_pattern(net, data)
    xs = data.xs
    knots = net.biases - net.input_shift
    report = StationaryReport(tol=tol)
    for l in range(1, net.n + 1):
        u = int(pattern.u[l])
        if u == 0:
            continue
        sl = pattern.cell(l)
        x, y = xs[sl], data.ys[sl]
        below = np.maximum(x[:, None] - knots[None, : l - 1], 0.0) @ net.coeffs[: l - 1]
        y_hat = y - below
        c, b = float(net.coeffs[l - 1]), float(knots[l - 1])
        if u >= 2:
            line = lsq_line(x, y_hat)
            scale = max(1.0, abs(c), abs(c * b))
            dev = max(abs(line.slope - c), abs(line.intercept + c * b)) / scale
            kind = REGRESSION
        else:
            pred = c * (x[0] - b)
            dev = abs(pred - y_hat[0]) / max(1.0, abs(y_hat[0]))
            kind = "interpolation"
        report.segments.append(SegmentCheck(l, u, kind, float(dev), bool(dev <= tol)))
        report.max_deviation = max(report.max_deviation, float(dev))
    return report
