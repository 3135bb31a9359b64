"""Active Neuron Least Squares (ANLS).

Each iteration moves a single knot across a single data point, chosen
among rule-generated candidates by the least-squares loss it would reach.
Candidate losses come from rank-one COD updates of the current design
matrix, so only the accepted move triggers a refactorization.

Neurons are 0-based here; neuron ``j`` sits between cells ``j`` and
``j + 1`` of the activation pattern.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import flowdiag
from .linalg import CodFactors, cod, cod_update_losses, min_norm_lsq
from .model import ActivationPattern, ReluNetwork, TrainingSet, activation_pattern, design_matrix, relu

LEFT, RIGHT = "left", "right"
MID_DATA_DATA, MID_DATA_BIAS, BELOW_MIN = "mid_data_data", "mid_data_bias", "below_min"
BELOW_MIN_OFFSET = 1e-8


@dataclass(frozen=True)
class CandidateMove:
    neuron: int
    new_bias: float
    crossed_point: int
    direction: str
    placement: str

    def sort_key(self) -> tuple:
        return (self.neuron, 0 if self.direction == LEFT else 1, self.new_bias)


def _shifted_xs(net: ReluNetwork, data: TrainingSet) -> np.ndarray:
    return data.xs + net.input_shift


def _live(net: ReluNetwork, xs: np.ndarray) -> np.ndarray:
    """Neurons with at least one input strictly above their knot."""
    return net.biases < xs[-1]


def _left_move(k, b, xs, pattern):
    lo_cell = pattern.cell(k)  # cell just below knot k
    if lo_cell.stop - lo_cell.start < 1:
        return None
    i = lo_cell.stop - 1  # largest point of that cell
    x_star = xs[i]
    b_prev = b[k - 1] if k > 0 else -np.inf
    if i > 0:
        mid = 0.5 * (xs[i - 1] + x_star)
        if mid > b_prev:
            return CandidateMove(k, float(mid), i, LEFT, MID_DATA_DATA)
        return CandidateMove(k, float(0.5 * (x_star + b_prev)), i, LEFT, MID_DATA_BIAS)
    if k == 0:
        return CandidateMove(k, float(x_star - BELOW_MIN_OFFSET), i, LEFT, BELOW_MIN)
    return CandidateMove(k, float(0.5 * (x_star + b_prev)), i, LEFT, MID_DATA_BIAS)


def _right_move(k, b, xs, pattern, last_active):
    n = b.size
    hi_cell = pattern.cell(k + 1)  # cell just above knot k
    size = hi_cell.stop - hi_cell.start
    if size < 1:
        return None
    if k == last_active and size == 1:
        return None  # would leave the last active neuron without data
    i = hi_cell.start
    x_star = xs[i]
    b_next = b[k + 1] if k + 1 < n else np.inf
    if i + 1 >= xs.size:
        return None
    mid = 0.5 * (x_star + xs[i + 1])
    if mid < b_next:
        return CandidateMove(k, float(mid), i, RIGHT, MID_DATA_DATA)
    return CandidateMove(k, float(0.5 * (x_star + b_next)), i, RIGHT, MID_DATA_BIAS)


def move_is_valid(move: CandidateMove, net: ReluNetwork, data: TrainingSet) -> bool:
    """Ordering stays strict and exactly the crossed point changes cells."""
    b = net.biases
    k = move.neuron
    nb = move.new_bias
    if nb == b[k]:
        return False
    if k > 0 and not nb > b[k - 1]:
        return False
    if k + 1 < b.size and not nb < b[k + 1]:
        return False
    xs = _shifted_xs(net, data)
    before = xs > b[k]
    after = xs > nb
    changed = np.flatnonzero(before != after)
    if changed.size != 1 or changed[0] != move.crossed_point:
        return False
    return bool(after[move.crossed_point]) == (move.direction == LEFT)


def enumerate_candidates(net: ReluNetwork, pattern: ActivationPattern, data: TrainingSet) -> list[CandidateMove]:
    """All single-knot moves allowed by the candidate rules, deterministically ordered."""
    xs = _shifted_xs(net, data)
    b = net.biases
    live = np.flatnonzero(_live(net, xs))
    if live.size == 0:
        return []
    last_active = int(live[-1])
    moves = []
    for k in live:
        k = int(k)
        for mv in (_left_move(k, b, xs, pattern), _right_move(k, b, xs, pattern, last_active)):
            if mv is not None and move_is_valid(mv, net, data):
                moves.append(mv)
    moves.sort(key=CandidateMove.sort_key)
    out = []
    for mv in moves:
        if not out or out[-1].sort_key() != mv.sort_key():
            out.append(mv)
    return out


def apply_move(net: ReluNetwork, move: CandidateMove) -> ReluNetwork:
    b = np.array(net.biases)
    b[move.neuron] = move.new_bias
    return net.with_params(biases=b)


@dataclass(frozen=True, eq=False)
class AnlsState:
    net: ReluNetwork
    factors: CodFactors
    loss: float
    iteration: int = 0


def make_state(net: ReluNetwork, data: TrainingSet, iteration: int = 0) -> AnlsState:
    """Factor the design matrix of ``net`` and attach its minimum-norm coefficients."""
    factors = cod(design_matrix(net, data))
    coeffs, loss_sq = min_norm_lsq(factors, data.ys)
    return AnlsState(net.with_params(coeffs=coeffs), factors, 0.5 * loss_sq, iteration)


def _update_vectors(state: AnlsState, moves, data: TrainingSet) -> np.ndarray:
    xs = _shifted_xs(state.net, data)
    b = state.net.biases
    cols = np.array([mv.neuron for mv in moves], dtype=int)
    new_b = np.array([mv.new_bias for mv in moves])
    return relu(xs[:, None] - new_b[None, :]) - relu(xs[:, None] - b[cols][None, :])


def score_candidates(state: AnlsState, moves, data: TrainingSet) -> np.ndarray:
    """Half squared residual of the least-squares fit after each move."""
    if not moves:
        return np.zeros(0)
    cols = np.array([mv.neuron for mv in moves], dtype=int)
    vs = _update_vectors(state, moves, data)
    return 0.5 * np.maximum(cod_update_losses(state.factors, cols, vs, data.ys), 0.0)


def score_candidate(state: AnlsState, move: CandidateMove, data: TrainingSet) -> float:
    return float(score_candidates(state, [move], data)[0])


def select_best(moves, losses):
    """Index of the lowest loss; ties go to the smaller neuron, then smaller new bias."""
    keys = [(float(l), mv.neuron, mv.new_bias) for mv, l in zip(moves, losses)]
    return min(range(len(keys)), key=keys.__getitem__)


@dataclass(frozen=True)
class IterStep:
    state: AnlsState
    status: str  # "continued" or "terminated"
    reason: str
    n_candidates: int
    best: CandidateMove | None = None
    best_loss: float | None = None


def anls_iterate(state: AnlsState, data: TrainingSet) -> IterStep:
    """One ANLS step: accept the best candidate if it beats the current loss."""
    pattern = activation_pattern(state.net, data)
    moves = enumerate_candidates(state.net, pattern, data)
    if not moves:
        return IterStep(state, "terminated", "no_candidates", 0)
    losses = score_candidates(state, moves, data)
    j = select_best(moves, losses)
    best, best_loss = moves[j], float(losses[j])
    if state.loss <= best_loss:
        return IterStep(state, "terminated", "no_improvement", len(moves), best, best_loss)
    new_state = make_state(apply_move(state.net, best), data, state.iteration + 1)
    if not new_state.loss < state.loss:
        # the refactorized loss disagrees with the cheap score; keep the old iterate
        return IterStep(state, "terminated", "refit_not_better", len(moves), best, best_loss)
    return IterStep(new_state, "continued", "", len(moves), best, best_loss)


def anls_train(config, data: TrainingSet):
    """He initialization, least-squares coefficients, then ANLS iterations."""
    from .trainers import TraceRecorder, he_init

    t0 = time.perf_counter()
    rec = TraceRecorder(data, config)
    state = make_state(he_init(config.width, config.seed), data)
    reason = "max_iters"
    n_cand = None  # candidates scored in the step that produced the current iterate
    while True:
        stop = rec.observe(state.iteration, state.net, state.loss, n_candidates=n_cand)
        if stop is not None:
            reason = stop
            break
        if state.iteration >= config.max_iters:
            break
        step = anls_iterate(state, data)
        n_cand = step.n_candidates
        if step.status == "terminated":
            reason = step.reason
            break
        state = step.state
    return rec.finish(state.iteration, state.net, reason, t0)
