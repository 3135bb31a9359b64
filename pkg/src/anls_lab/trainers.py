"""Baseline trainers: full-batch GD, Adam, fixed-bias least squares and the
LS/GD, LS/Adam hybrids, all driven by one trace-emitting loop.

Parameters are re-sorted by bias after every step, with coefficients (and
any optimizer moments) permuted alongside; sorting does not change the
network function.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import flowdiag
from .linalg import cod, min_norm_lsq
from .model import ReluNetwork, TrainingSet, active_counts, design_matrix, relu

METHODS = ("gd", "adam", "lsq", "ls_gd", "ls_adam", "anls")
# what the gradient methods descend on; traces always report 0.5 * SSE
OBJECTIVES = ("half_sse", "mse")

TRACE_COLUMNS = ("iter", "loss", "stationarity_mse", "stage_id", "q0")
EXTENDED_COLUMNS = TRACE_COLUMNS + ("n_candidates",)


class ConfigError(ValueError):
    """Invalid training configuration."""


@dataclass(frozen=True)
class TrainConfig:
    method: str = "gd"
    width: int = 10
    learning_rate: float = 1e-3
    max_iters: int = 1000
    seed: int = 0
    record_every: int = 1
    stop_loss: float | None = None
    stop_stationarity: float | None = None
    extended_trace: bool = False
    objective: str = "half_sse"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective {self.objective!r}; choose from {', '.join(OBJECTIVES)}")
        if not isinstance(self.width, (int, np.integer)) or self.width < 1:
            raise ConfigError(f"width must be a positive integer, got {self.width!r}")
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate!r}")
        if not isinstance(self.max_iters, (int, np.integer)) or self.max_iters < 1:
            raise ConfigError(f"max_iters must be >= 1, got {self.max_iters!r}")
        if not isinstance(self.record_every, (int, np.integer)) or self.record_every < 1:
            raise ConfigError(f"record_every must be >= 1, got {self.record_every!r}")
        if not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        for name in ("stop_loss", "stop_stationarity"):
            v = getattr(self, name)
            if v is not None and not (np.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be a non-negative number, got {v!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainTrace:
    rows: list = field(default_factory=list)
    network: ReluNetwork | None = None
    stages: list = field(default_factory=list)
    wall_time: float = 0.0
    iterations: int = 0
    termination: str = ""
    losses: list = field(default_factory=list)  # loss at every iteration 0..iterations
    extended: bool = False

    @property
    def columns(self) -> tuple:
        return EXTENDED_COLUMNS if self.extended else TRACE_COLUMNS

    @property
    def final_loss(self) -> float:
        return self.losses[-1]


def gradient_scale(objective: str, m: int) -> float:
    """Factor taking gradients of 0.5 * SSE to gradients of ``objective``."""
    if objective == "mse":
        return 2.0 / m  # (1/m) sum r^2 = (2/m) * 0.5 sum r^2
    return 1.0


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def he_init(n: int, seed: int) -> ReluNetwork:
    """c ~ N(0, 2/n), b ~ N(0, 2), sorted by b."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ConfigError(f"width must be a positive integer, got {n!r}")
    rng = make_rng(seed)
    c = rng.normal(0.0, np.sqrt(2.0 / n), size=n)
    b = rng.normal(0.0, np.sqrt(2.0), size=n)
    order = np.argsort(b, kind="stable")
    return ReluNetwork(b[order], c[order])


def _loss_and_grads(net: ReluNetwork, data: TrainingSet):
    z = (data.xs + net.input_shift)[:, None] - net.biases[None, :]
    a = relu(z)
    r = a @ net.coeffs - data.ys
    h = (z > 0).astype(np.float64)
    grad_b = -net.coeffs * (h.T @ r)
    grad_c = a.T @ r
    return 0.5 * float(r @ r), r, grad_b, grad_c


def _resorted(b, c, *extra):
    order = np.argsort(b, kind="stable")
    return (b[order], c[order]) + tuple(e[order] for e in extra)


def _gd_update(net, gb, gc, lr):
    b, c = _resorted(net.biases - lr * gb, net.coeffs - lr * gc)
    return ReluNetwork(b, c, net.input_shift)


def gd_step(net: ReluNetwork, data: TrainingSet, lr: float) -> ReluNetwork:
    _, _, gb, gc = _loss_and_grads(net, data)
    return _gd_update(net, gb, gc, lr)


@dataclass
class AdamState:
    """Moments over the parameter vector; for full Adam that is [b, c]."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size))

    def update(self, g: np.ndarray, lr: float) -> tuple["AdamState", np.ndarray]:
        """New state and the parameter increment for gradient ``g``."""
        t = self.step + 1
        m = self.beta1 * self.m + (1.0 - self.beta1) * g
        v = self.beta2 * self.v + (1.0 - self.beta2) * g * g
        m_hat = m / (1.0 - self.beta1**t)
        v_hat = v / (1.0 - self.beta2**t)
        delta = -lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return AdamState(m, v, t, self.beta1, self.beta2, self.eps), delta


def adam_step(state: AdamState, net: ReluNetwork, data: TrainingSet, lr: float):
    _, _, gb, gc = _loss_and_grads(net, data)
    return _adam_update(state, net, gb, gc, lr)


def _adam_update(state, net, gb, gc, lr):
    n = net.n
    state, delta = state.update(np.concatenate([gb, gc]), lr)
    b = net.biases + delta[:n]
    c = net.coeffs + delta[n:]
    order = np.argsort(b, kind="stable")
    idx = np.concatenate([order, order + n])
    state = AdamState(state.m[idx], state.v[idx], state.step, state.beta1, state.beta2, state.eps)
    return state, ReluNetwork(b[order], c[order], net.input_shift)


def lsq_fit(net: ReluNetwork, data: TrainingSet) -> ReluNetwork:
    """Keep the biases, replace coeffs by the minimum-norm least-squares solution."""
    coeffs, _ = min_norm_lsq(cod(design_matrix(net, data)), data.ys)
    return net.with_params(coeffs=coeffs)


def hybrid_step(net: ReluNetwork, data: TrainingSet, lr: float, inner: str, state=None):
    """One bias-only GD or Adam step followed by ``lsq_fit``."""
    _, _, gb, _ = _loss_and_grads(net, data)
    return _hybrid_update(net, data, gb, lr, inner, state)


def _hybrid_update(net, data, gb, lr, inner, state):
    if inner == "gd":
        b = net.biases - lr * gb
        c = net.coeffs
        b, c = _resorted(b, c)
    elif inner == "adam":
        if state is None:
            state = AdamState.zeros(net.n)
        state, delta = state.update(gb, lr)
        b, c, m, v = _resorted(net.biases + delta, net.coeffs, state.m, state.v)
        state = AdamState(m, v, state.step, state.beta1, state.beta2, state.eps)
    else:
        raise ConfigError(f"hybrid inner optimizer must be 'gd' or 'adam', got {inner!r}")
    return lsq_fit(ReluNetwork(b, c, net.input_shift), data), state


class TraceRecorder:
    """Shared bookkeeping: stages every iteration, rows every ``record_every``."""

    def __init__(self, data: TrainingSet, config: TrainConfig):
        self.data = data
        self.config = config
        self.tracker = flowdiag.StageTracker()
        self.trace = TrainTrace(extended=config.extended_trace)
        self._last_row_iter = -1

    def observe(self, it: int, net: ReluNetwork, loss_value: float, force_row: bool = False, n_candidates=None, residual=None) -> str | None:
        """Record iteration ``it``; returns a stop reason if a threshold is met."""
        u = np.bincount(active_counts(net, self.data.xs), minlength=net.n + 1)
        stage_id = self.tracker.push(it, u, loss_value, lambda: flowdiag.q_zero(net, self.data, residual))
        self.trace.losses.append(loss_value)
        reason = None
        stat = None
        cfg = self.config
        if cfg.stop_loss is not None and loss_value <= cfg.stop_loss:
            reason = "stop_loss"
        if reason is None and cfg.stop_stationarity is not None:
            stat = flowdiag.stationarity_residual(net, self.data)
            if stat <= cfg.stop_stationarity:
                reason = "stop_stationarity"
        if force_row or reason is not None or it % cfg.record_every == 0:
            self.row(it, net, loss_value, stage_id, stat, n_candidates)
        return reason

    def row(self, it, net, loss_value, stage_id, stat=None, n_candidates=None):
        if it == self._last_row_iter:
            return
        if stat is None:
            stat = flowdiag.stationarity_residual(net, self.data)
        row = (it, loss_value, stat, stage_id, flowdiag.q_zero(net, self.data))
        if self.trace.extended:
            row = row + (-1 if n_candidates is None else int(n_candidates),)
        self.trace.rows.append(row)
        self._last_row_iter = it

    def finish(self, it: int, net: ReluNetwork, reason: str, t0: float) -> TrainTrace:
        if self._last_row_iter != it:
            self.row(it, net, self.trace.losses[-1], len(self.tracker.records))
        self.trace.stages = self.tracker.finish()
        self.trace.network = net
        self.trace.iterations = it
        self.trace.termination = reason
        self.trace.wall_time = time.perf_counter() - t0
        return self.trace


def train(config: TrainConfig, data: TrainingSet) -> TrainTrace:
    """Run ``config.method`` on ``data`` from the He initialization."""
    if config.method == "anls":
        from .anls import anls_train

        return anls_train(config, data)
    t0 = time.perf_counter()
    rec = TraceRecorder(data, config)
    net = he_init(config.width, config.seed)

    if config.method == "lsq":
        rec.observe(0, net, flowdiag.loss(net, data), force_row=True)
        net = lsq_fit(net, data)
        rec.observe(1, net, flowdiag.loss(net, data), force_row=True)
        return rec.finish(1, net, "lsq", t0)

    lr = config.learning_rate
    scale = gradient_scale(config.objective, data.m)
    state = None
    if config.method in ("ls_gd", "ls_adam"):
        net = lsq_fit(net, data)
    if config.method == "adam":
        state = AdamState.zeros(2 * net.n)

    reason = "max_iters"
    it = 0
    while True:
        lv, r, gb, gc = _loss_and_grads(net, data)
        if not np.isfinite(lv):
            raise FloatingPointError(f"loss became non-finite at iteration {it}")
        stop = rec.observe(it, net, lv, residual=r)
        if stop is not None:
            reason = stop
            break
        if it == config.max_iters:
            break
        if scale != 1.0:
            gb, gc = scale * gb, scale * gc
        if config.method == "gd":
            net = _gd_update(net, gb, gc, lr)
        elif config.method == "adam":
            state, net = _adam_update(state, net, gb, gc, lr)
        elif config.method == "ls_gd":
            net, _ = _hybrid_update(net, data, gb, lr, "gd", None)
        else:
            net, state = _hybrid_update(net, data, gb, lr, "adam", state)
        it += 1
    return rec.finish(it, net, reason, t0)
