"""Plateau diagnostics for the gradient flow of a two-layer ReLU network.

Loss, residual and gradients; the stationarity residual; the stage
subspace V spanned by per-cell indicator and centred-input vectors; the
horizontal asymptote Q0; the matrix M = D N governing the decay rate
inside a stage and closed-form bounds on its singular values; and stage
tracking over a training run.

Cells are U_l = {x : exactly l knots lie strictly below x}; only l >= 1
enters V since f vanishes identically on U_0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import InvalidInputError, singular_values
from .model import (
    ActivationPattern,
    ReluNetwork,
    TrainingSet,
    activation_pattern,
    design_matrix,
    evaluate,
    macroscopic_data,
)


def residual(net: ReluNetwork, data: TrainingSet) -> np.ndarray:
    """``f(x_k) - y_k``."""
    return design_matrix(net, data) @ net.coeffs - data.ys


def loss(net: ReluNetwork, data: TrainingSet) -> float:
    r = residual(net, data)
    return 0.5 * float(r @ r)


def heaviside_matrix(net: ReluNetwork, data: TrainingSet) -> np.ndarray:
    """``H[i, j] = 1 if x_i + s > b_j`` (left-continuous step, so ties are off)."""
    return ((data.xs + net.input_shift)[:, None] > net.biases[None, :]).astype(np.float64)


def flow_matrices(net: ReluNetwork, data: TrainingSet) -> tuple[np.ndarray, np.ndarray]:
    """``B[j, k] = c_j 1(x_k > b_j)`` and ``C[j, k] = relu(x_k - b_j)``, both n x m.

    The flow reads db/dt = B r, dc/dt = -C r.
    """
    h = heaviside_matrix(net, data)
    return net.coeffs[:, None] * h.T, design_matrix(net, data).T


def gradient(net: ReluNetwork, data: TrainingSet) -> tuple[np.ndarray, np.ndarray]:
    """``(dL/db, dL/dc)``."""
    r = residual(net, data)
    b_mat, c_mat = flow_matrices(net, data)
    return -(b_mat @ r), c_mat @ r


def flow_direction(net: ReluNetwork, data: TrainingSet) -> np.ndarray:
    """``(db/dt, dc/dt) = (B r, -C r)``, the negative gradient."""
    r = residual(net, data)
    b_mat, c_mat = flow_matrices(net, data)
    return np.concatenate([b_mat @ r, -(c_mat @ r)])


def residual_velocity(net: ReluNetwork, data: TrainingSet) -> np.ndarray:
    """``d r / dt = -(B^T B + C^T C) r`` along the flow."""
    r = residual(net, data)
    b_mat, c_mat = flow_matrices(net, data)
    return -(b_mat.T @ (b_mat @ r) + c_mat.T @ (c_mat @ r))


def stationarity_terms(net: ReluNetwork, data: TrainingSet) -> np.ndarray:
    """Pooled defects of the two stationarity families.

    For cells l >= 1: f(mu_l) - ybar_l when u_l > 0 and c_l != 0, and
    sum_{i<=l} c_i - (xy_mean_l - mu_l ybar_l) / var_l when u_l > 1.
    """
    pattern = activation_pattern(net, data)
    macro = macroscopic_data(pattern, data)
    u = pattern.u[1:]
    values = evaluate(net, macro.mu[1:]) - macro.ybar[1:]
    first = values[(u > 0) & (net.coeffs != 0.0)]
    many = u > 1
    if np.any(macro.var[1:][many] <= 0.0):
        raise InvalidInputError("a cell with several points has zero input variance")
    var = np.where(many, macro.var[1:], 1.0)
    slope = (macro.xy_mean[1:] - macro.mu[1:] * macro.ybar[1:]) / var
    second = (np.cumsum(net.coeffs) - slope)[many]
    return np.concatenate([first, second])


def stationarity_residual(net: ReluNetwork, data: TrainingSet) -> float:
    """Mean squared stationarity defect; 0 when no condition applies."""
    t = stationarity_terms(net, data)
    return float(np.mean(t * t)) if t.size else 0.0


@dataclass(frozen=True, eq=False)
class StageBasis:
    """Unnormalized ``eb[l-1]``, ``ec[l-1]`` for cells l = 1..n, stored as n x m arrays."""

    eb: np.ndarray
    ec: np.ndarray
    rank: int

    def normalized(self) -> np.ndarray:
        """Orthonormal columns spanning V (zero vectors dropped), m x rank."""
        vecs = np.vstack([self.eb, self.ec])
        norms = np.linalg.norm(vecs, axis=1)
        keep = norms > 0.0
        return (vecs[keep] / norms[keep, None]).T

    def normalized_full(self) -> np.ndarray:
        """m x 2n matrix [eb_1..eb_n, ec_1..ec_n] / norms, zero columns left zero."""
        vecs = np.vstack([self.eb, self.ec])
        norms = np.linalg.norm(vecs, axis=1)
        safe = np.where(norms > 0.0, norms, 1.0)
        return (vecs / safe[:, None]).T


def expected_rank(u) -> int:
    """dim V = 2n - 2 #{u_l = 0} - #{u_l = 1} over l = 1..n."""
    u = np.asarray(u)[1:]
    return int(2 * u.size - 2 * np.count_nonzero(u == 0) - np.count_nonzero(u == 1))


def stage_basis(pattern: ActivationPattern, data: TrainingSet) -> StageBasis:
    n = pattern.n
    eb = np.zeros((n, data.m))
    ec = np.zeros((n, data.m))
    for l in range(1, n + 1):
        if pattern.u[l] == 0:
            continue
        sl = pattern.cell(l)
        x = data.xs[sl]
        eb[l - 1, sl] = 1.0
        ec[l - 1, sl] = x - x.mean()
    return StageBasis(eb=eb, ec=ec, rank=expected_rank(pattern.u))


def project_onto_v(basis: StageBasis, r) -> np.ndarray:
    # the nonzero basis vectors are mutually orthogonal, so projection is a sum of rank-one terms
    phi = basis.normalized()
    return phi @ (phi.T @ r)


def q_zero(net: ReluNetwork, data: TrainingSet, r=None) -> float:
    """``0.5 * |r - P_V r|^2``, the floor the loss cannot cross inside a stage.

    ``r`` may pass a precomputed residual.
    """
    if r is None:
        r = residual(net, data)
    pattern = activation_pattern(net, data)
    return 0.5 * float(np.sum(perp_residual(pattern, data, r) ** 2))


def perp_residual(pattern: ActivationPattern, data: TrainingSet, r) -> np.ndarray:
    """``r - P_V r`` cell by cell: on U_l (l >= 1) subtract the least-squares line in x."""
    r = np.asarray(r, dtype=np.float64)
    out = r.copy()
    start = int(pattern.cell_bounds[1, 0]) if pattern.n >= 1 else data.m
    if start >= data.m:
        return out
    u = pattern.u[1:]
    occupied = u > 0
    starts = pattern.cell_bounds[1:, 0][occupied]
    k = u[occupied].astype(np.float64)
    x, rr = data.xs[start:], r[start:]
    cell_of = np.repeat(np.arange(k.size), u[occupied])
    offs = starts - start
    mu = np.add.reduceat(x, offs) / k
    rbar = np.add.reduceat(rr, offs) / k
    dx = x - mu[cell_of]
    sxx = np.add.reduceat(dx * dx, offs)
    sxr = np.add.reduceat(dx * rr, offs)
    slope = np.divide(sxr, sxx, out=np.zeros_like(sxr), where=sxx > 0)
    out[start:] = rr - rbar[cell_of] - slope[cell_of] * dx
    return out


def assemble_M(net: ReluNetwork, pattern: ActivationPattern, data: TrainingSet) -> np.ndarray:
    """``M = D N`` with ``D = diag(sqrt(u), sqrt(u) sigma)`` and
    ``N = [[L D_c, D_mu L - L D_b], [0, L]]``, L the lower-triangular ones."""
    n = net.n
    macro = macroscopic_data(pattern, data)
    u = pattern.u[1:].astype(np.float64)
    mu = macro.mu[1:]
    sigma = np.sqrt(macro.var[1:])
    b = net.biases - net.input_shift  # knots in data coordinates
    tri = np.tril(np.ones((n, n)))
    top = np.hstack([tri * net.coeffs[None, :], mu[:, None] * tri - tri * b[None, :]])
    bottom = np.hstack([np.zeros((n, n)), tri])
    d = np.concatenate([np.sqrt(u), np.sqrt(u) * sigma])
    return d[:, None] * np.vstack([top, bottom])


@dataclass(frozen=True)
class RateBounds:
    r_min_bound: float
    r_max_bound: float
    d_max: float
    c_min: float
    c_max: float


def rate_bounds(net: ReluNetwork, pattern: ActivationPattern, data: TrainingSet) -> RateBounds:
    """Closed-form bounds on the squared singular values of M.

    lower: min{u_l min(1, var_l)} / (4 (1 + 1/min c_l^2 + 4 d^2 n^2))
    upper: max{u_l max(1, var_l)} (1 + max c_l^2 + d^2) n^2

    The lower-bound minimum runs over cells l >= 1 with u_l > 0 and
    var_l > 0, the upper-bound maximum over all occupied cells l >= 1, and
    the coefficient extrema over all neurons; narrower index sets admit
    counterexamples. Both bounds assume the knots lie in [x_1, x_m].
    """
    n = net.n
    macro = macroscopic_data(pattern, data)
    d_max = float(data.xs[-1] - data.xs[0])
    u = pattern.u[1:].astype(np.float64)
    var = macro.var[1:]
    occupied = u > 0
    if not np.any(occupied):
        return RateBounds(0.0, 0.0, d_max, 0.0, 0.0)
    c = np.abs(net.coeffs)
    c_min, c_max = float(c.min()), float(c.max())
    hi = float(np.max(u * np.maximum(1.0, var))) * (1.0 + c_max**2 + d_max**2) * n * n
    elig = occupied & (var > 0)
    if c_min == 0.0 or not np.any(elig):
        lo = 0.0
    else:
        lo = float(np.min(u[elig] * np.minimum(1.0, var[elig]))) / (
            4.0 * (1.0 + 1.0 / c_min**2 + 4.0 * d_max**2 * n * n)
        )
    return RateBounds(lo, hi, d_max, c_min, c_max)


def m_singular_values(net: ReluNetwork, data: TrainingSet) -> np.ndarray:
    return singular_values(assemble_M(net, activation_pattern(net, data), data))


@dataclass(frozen=True)
class StageRecord:
    """A maximal run of constant activation pattern over ``[start_iter, end_iter)``."""

    start_iter: int
    end_iter: int
    u: tuple
    q0_at_entry: float
    loss_at_entry: float
    loss_at_exit: float

    @property
    def length(self) -> int:
        return self.end_iter - self.start_iter

    def to_dict(self) -> dict:
        return {
            "start_iter": self.start_iter,
            "end_iter": self.end_iter,
            "length": self.length,
            "u": list(self.u),
            "q0_at_entry": self.q0_at_entry,
            "loss_at_entry": self.loss_at_entry,
            "loss_at_exit": self.loss_at_exit,
        }


class StageTracker:
    """Incremental run-length encoding of the activation pattern."""

    def __init__(self):
        self.records: list[StageRecord] = []
        self._open = None  # [start, u, q0, loss_entry, last_iter, last_loss]

    def push(self, it: int, u, loss_value: float, q0=None) -> int:
        """Feed one iteration; returns the stage id it belongs to.

        ``q0`` may be a callable, evaluated only when a new stage opens.
        """
        key = tuple(int(v) for v in u)
        if self._open is not None and self._open[1] == key:
            self._open[4] = it
            self._open[5] = float(loss_value)
            return len(self.records)
        self._close(it)
        q = q0() if callable(q0) else q0
        self._open = [it, key, float("nan") if q is None else float(q), float(loss_value), it, float(loss_value)]
        return len(self.records)

    def _close(self, end: int) -> None:
        if self._open is None:
            return
        start, key, q0, le, _, ll = self._open
        self.records.append(StageRecord(start, end, key, q0, le, ll))
        self._open = None

    def finish(self) -> list[StageRecord]:
        if self._open is not None:
            self._close(self._open[4] + 1)
        return self.records

    @property
    def current_q0(self) -> float:
        return self._open[2] if self._open is not None else float("nan")


def track_stages(sequence) -> list[StageRecord]:
    """Stage records from an iterable of ``(iter, u, loss, q0)``."""
    tracker = StageTracker()
    for it, u, loss_value, q0 in sequence:
        tracker.push(int(it), u, loss_value, q0)
    return tracker.finish()
