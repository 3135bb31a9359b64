"""Univariate two-layer ReLU networks f(x) = sum_j c_j relu(x + s - b_j).

Holds the network and dataset containers, evaluation, the reduction of
general neurons c relu(w x + b) to unit-slope form, activation patterns,
per-cell (macroscopic) statistics and the design matrix.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .linalg import InvalidInputError


def relu(z):
    return np.maximum(z, 0.0)


def _frozen(a, name: str) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True).reshape(-1)
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} has non-finite entries")
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ReluNetwork:
    """Knots ``biases`` (sorted), outer weights ``coeffs`` and an input shift.

    The network evaluates ``sum_j coeffs[j] * relu(x + input_shift - biases[j])``.
    """

    biases: np.ndarray
    coeffs: np.ndarray
    input_shift: float = 0.0

    def __post_init__(self):
        b = _frozen(self.biases, "biases")
        c = _frozen(self.coeffs, "coeffs")
        if b.shape != c.shape:
            raise InvalidInputError(f"{b.size} biases but {c.size} coeffs")
        if b.size > 1 and np.any(np.diff(b) < 0):
            raise InvalidInputError("biases must be non-decreasing; use sort_neurons")
        if not np.isfinite(self.input_shift):
            raise InvalidInputError("input_shift must be finite")
        object.__setattr__(self, "biases", b)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "input_shift", float(self.input_shift))

    @property
    def n(self) -> int:
        return self.biases.size

    def with_params(self, biases=None, coeffs=None) -> "ReluNetwork":
        return ReluNetwork(
            self.biases if biases is None else biases,
            self.coeffs if coeffs is None else coeffs,
            self.input_shift,
        )

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "biases": [float(v) for v in self.biases],
            "coeffs": [float(v) for v in self.coeffs],
            "input_shift": self.input_shift,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReluNetwork":
        try:
            biases, coeffs = d["biases"], d["coeffs"]
            shift = d.get("input_shift", 0.0)
            n = d.get("n", len(biases))
        except (KeyError, TypeError, AttributeError) as exc:
            raise InvalidInputError(f"malformed network record: {exc}") from None
        if n != len(biases):
            raise InvalidInputError(f"network record says n={n} but lists {len(biases)} biases")
        return cls(biases, coeffs, shift)

    def __call__(self, x):
        return evaluate(self, x)


@dataclass(frozen=True, eq=False)
class GeneralNeuron:
    """``c * relu(w * x + b)``."""

    w: float
    b: float
    c: float

    def __call__(self, x):
        return self.c * relu(self.w * np.asarray(x, dtype=np.float64) + self.b)


@dataclass(frozen=True, eq=False)
class TrainingSet:
    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = _frozen(self.xs, "xs")
        ys = _frozen(self.ys, "ys")
        if xs.size == 0:
            raise InvalidInputError("training set is empty")
        if xs.shape != ys.shape:
            raise InvalidInputError(f"{xs.size} inputs but {ys.size} targets")
        if np.any(np.diff(xs) <= 0):
            raise InvalidInputError("inputs must be strictly increasing")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def m(self) -> int:
        return self.xs.size

    @classmethod
    def from_unsorted(cls, xs, ys) -> "TrainingSet":
        """Sort by x; exact duplicates collapse, conflicting duplicates are rejected."""
        xs = np.asarray(xs, dtype=np.float64).reshape(-1)
        ys = np.asarray(ys, dtype=np.float64).reshape(-1)
        if xs.shape != ys.shape:
            raise InvalidInputError(f"{xs.size} inputs but {ys.size} targets")
        order = np.argsort(xs, kind="stable")
        xs, ys = xs[order], ys[order]
        keep = np.ones(xs.size, dtype=bool)
        dup = np.flatnonzero(np.diff(xs) == 0) + 1
        for i in dup:
            if ys[i] != ys[i - 1]:
                raise InvalidInputError(f"conflicting targets at duplicate input x={xs[i]!r}")
            keep[i] = False
        return cls(xs[keep], ys[keep])


def evaluate(net: ReluNetwork, x):
    """Network output at scalar or array ``x``."""
    x = np.asarray(x, dtype=np.float64)
    z = (x.reshape(-1) + net.input_shift)[:, None] - net.biases[None, :]
    out = relu(z) @ net.coeffs
    return out.reshape(x.shape) if x.ndim else float(out[0])


def sort_neurons(net: ReluNetwork) -> ReluNetwork:
    b = np.asarray(net.biases)
    order = np.argsort(b, kind="stable")
    return ReluNetwork(b[order], np.asarray(net.coeffs)[order], net.input_shift)


def unsorted_network(biases, coeffs, input_shift: float = 0.0) -> ReluNetwork:
    """Build a network from knots in any order."""
    b = np.asarray(biases, dtype=np.float64).reshape(-1)
    c = np.asarray(coeffs, dtype=np.float64).reshape(-1)
    if b.shape != c.shape:
        raise InvalidInputError(f"{b.size} biases but {c.size} coeffs")
    order = np.argsort(b, kind="stable")
    return ReluNetwork(b[order], c[order], input_shift)


def canonicalize(neurons, domain) -> ReluNetwork:
    """Rewrite ``sum c relu(w x + b)`` as a unit-slope network on ``domain``.

    The domain is shifted so that it starts at or above zero, which the
    reflection identity relu(-x + b) = relu(x - b) - 2 relu(x) + relu(x + b)
    needs; the shift is recorded in ``input_shift``.
    """
    x_lo, x_hi = float(domain[0]), float(domain[1])
    if not (np.isfinite(x_lo) and np.isfinite(x_hi)) or x_lo > x_hi:
        raise InvalidInputError(f"bad domain {domain!r}")
    s = -min(0.0, x_lo)
    biases, coeffs = [], []
    for nu in neurons:
        w, c = float(nu.w), float(nu.c)
        b = float(nu.b) - w * s  # relu(w x + b) = relu(w (x + s) + b - w s)
        if w > 0:
            biases.append(-b / w)
            coeffs.append(c * w)
        elif w == 0:
            if b > 0:
                # constant b = relu(x + b) - relu(x) for x >= 0
                biases += [-b, 0.0]
                coeffs += [c, -c]
        else:
            beta = b / -w
            if beta > 0:
                a = c * -w
                biases += [beta, 0.0, -beta]
                coeffs += [a, -2.0 * a, a]
    return unsorted_network(biases, coeffs, s)


@dataclass(frozen=True, eq=False)
class ActivationPattern:
    """``u[l]`` points see exactly ``l`` knots strictly below them.

    ``cell_bounds[l] = (start, stop)`` slices xs to the cell U_l.
    """

    u: np.ndarray
    cell_bounds: np.ndarray

    @property
    def n(self) -> int:
        return self.u.size - 1

    def cell(self, l: int) -> slice:
        start, stop = self.cell_bounds[l]
        return slice(int(start), int(stop))

    def key(self) -> tuple:
        return tuple(int(v) for v in self.u)


def active_counts(net: ReluNetwork, xs) -> np.ndarray:
    """Number of knots strictly below each (shifted) input."""
    return np.searchsorted(net.biases, np.asarray(xs, dtype=np.float64) + net.input_shift, side="left")


def activation_pattern(net: ReluNetwork, data: TrainingSet) -> ActivationPattern:
    counts = active_counts(net, data.xs)
    n = net.n
    # counts are non-decreasing in x, so every cell is a contiguous slice
    edges = np.searchsorted(counts, np.arange(n + 2), side="left")
    bounds = np.stack([edges[:-1], edges[1:]], axis=1)
    u = np.diff(edges)
    u.setflags(write=False)
    bounds.setflags(write=False)
    return ActivationPattern(u=u, cell_bounds=bounds)


@dataclass(frozen=True, eq=False)
class MacroData:
    """Per-cell statistics, indexed by ``l = 0..n`` (zeros for empty cells)."""

    count: np.ndarray
    mu: np.ndarray
    ybar: np.ndarray
    var: np.ndarray
    xy_mean: np.ndarray

    def cells(self) -> np.ndarray:
        return np.flatnonzero(self.count > 0)

    def to_list(self) -> list[dict]:
        return [
            {
                "l": int(l),
                "count": int(self.count[l]),
                "mu": float(self.mu[l]),
                "ybar": float(self.ybar[l]),
                "var": float(self.var[l]),
                "xy_mean": float(self.xy_mean[l]),
            }
            for l in self.cells()
        ]


def macroscopic_data(pattern: ActivationPattern, data: TrainingSet) -> MacroData:
    if int(pattern.u.sum()) != data.m:
        raise InvalidInputError("activation pattern does not match the data")
    count = np.array(pattern.u)
    occupied = count > 0
    starts = pattern.cell_bounds[occupied, 0]
    k = count[occupied].astype(np.float64)
    mu, ybar, var, xy = (np.zeros(count.size) for _ in range(4))
    if starts.size:
        x, y = data.xs, data.ys
        mu[occupied] = np.add.reduceat(x, starts) / k
        ybar[occupied] = np.add.reduceat(y, starts) / k
        cell_of = np.repeat(np.arange(count.size), count)
        dx = x - mu[cell_of]
        var[occupied] = np.add.reduceat(dx * dx, starts) / k
        xy[occupied] = np.add.reduceat(x * y, starts) / k
    return MacroData(count=count, mu=mu, ybar=ybar, var=var, xy_mean=xy)


def design_matrix(net: ReluNetwork, data: TrainingSet) -> np.ndarray:
    """``A[i, j] = relu(x_i + s - b_j)``."""
    return relu((data.xs + net.input_shift)[:, None] - net.biases[None, :])


# serialization

def save_network(net: ReluNetwork, path) -> None:
    with open(path, "w") as fh:
        json.dump(net.to_dict(), fh, indent=2)
        fh.write("\n")


def load_network(path) -> ReluNetwork:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: not valid JSON ({exc})") from None
    return ReluNetwork.from_dict(d)


def save_dataset(data: TrainingSet, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y"])
        for x, y in zip(data.xs, data.ys):
            w.writerow([repr(float(x)), repr(float(y))])


def load_dataset(path) -> TrainingSet:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != ["x", "y"]:
        raise InvalidInputError(f"{path}: expected header 'x,y'")
    try:
        vals = np.array([[float(a), float(b)] for a, b in (r for r in rows[1:] if r)])
    except ValueError as exc:
        raise InvalidInputError(f"{path}: {exc}") from None
    if vals.size == 0:
        raise InvalidInputError(f"{path}: no data rows")
    return TrainingSet.from_unsorted(vals[:, 0], vals[:, 1])
