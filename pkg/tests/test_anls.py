import numpy as np
import pytest

from anls_lab import flowdiag as fd
from anls_lab.anls import (
    BELOW_MIN,
    LEFT,
    MID_DATA_BIAS,
    MID_DATA_DATA,
    RIGHT,
    CandidateMove,
    anls_iterate,
    anls_train,
    apply_move,
    enumerate_candidates,
    make_state,
    score_candidate,
    score_candidates,
    select_best,
)
from anls_lab.model import ReluNetwork, TrainingSet, activation_pattern
from anls_lab.trainers import TrainConfig, lsq_fit, train

from rule_oracle import move_ok, oracle_moves, random_state


def moves_for(b, xs, ys=None):
    d = TrainingSet(xs, np.zeros(len(xs)) if ys is None else ys)
    net = ReluNetwork(b, np.ones(len(b)))
    return net, d, enumerate_candidates(net, activation_pattern(net, d), d)


def test_dead_network_has_no_candidates():
    _, _, moves = moves_for([2.0, 3.0], np.array([0.0, 1.0]))
    assert moves == []


def test_single_neuron_four_points():
    xs = np.array([0.0, 1.0, 2.0, 3.0])
    _, _, moves = moves_for([1.5], xs)
    assert [(m.direction, m.crossed_point, m.new_bias, m.placement) for m in moves] == [
        (LEFT, 1, 0.5, MID_DATA_DATA),
        (RIGHT, 2, 2.5, MID_DATA_DATA),
    ]
    # only one point above the last live neuron: no right move
    _, _, moves = moves_for([2.5], xs)
    assert [(m.direction, m.crossed_point) for m in moves] == [(LEFT, 2)]


def test_below_min_and_mid_bias_placements():
    xs = np.array([0.0, 1.0, 2.0])
    _, _, moves = moves_for([0.5, 0.7], xs)
    got = {(m.neuron, m.direction): (m.new_bias, m.placement) for m in moves}
    assert got[(0, LEFT)] == (-1e-8, BELOW_MIN)
    assert got[(1, RIGHT)] == (1.5, MID_DATA_DATA)
    assert (1, LEFT) not in got and (0, RIGHT) not in got  # no point between the two knots
    _, _, moves = moves_for([0.5, 1.2], xs)
    got = {(m.neuron, m.direction): (m.new_bias, m.placement) for m in moves}
    assert got[(0, RIGHT)] == (pytest.approx(1.1), MID_DATA_BIAS)
    assert got[(1, LEFT)] == (pytest.approx(0.75), MID_DATA_BIAS)


def test_knot_on_data_point_boundary():
    xs = np.array([0.0, 1.0, 2.0])
    # x = 1 sits on the knot, so it is below it: the left move crosses x = 1
    _, _, moves = moves_for([1.0], xs)
    assert [(m.direction, m.crossed_point) for m in moves] == [(LEFT, 1)]


def test_rules_against_oracle(rng):
    for _ in range(300):
        xs, b, ys = random_state(rng)
        net, d, moves = moves_for(b, xs, ys)
        got = {(m.neuron, m.direction, m.crossed_point, m.new_bias) for m in moves}
        assert got == oracle_moves(b, xs)
        assert [m.sort_key() for m in moves] == sorted(m.sort_key() for m in moves)
        u = activation_pattern(net, d).u
        for mv in moves:
            assert move_ok(b, xs, mv.neuron, mv.new_bias, mv.crossed_point)
            du = activation_pattern(apply_move(net, mv), d).u - u
            k = mv.neuron
            expect = np.zeros_like(du)
            sign = 1 if mv.direction == LEFT else -1
            expect[k], expect[k + 1] = -sign, sign
            np.testing.assert_array_equal(du, expect)


def test_scoring_matches_full_refit(rng):
    for _ in range(60):
        xs, b, ys = random_state(rng, 8, 40)
        net, d, moves = moves_for(b, xs, ys)
        state = make_state(net, d)
        losses = score_candidates(state, moves, d)
        for mv, l in zip(moves, losses):
            ref = fd.loss(lsq_fit(apply_move(state.net, mv), d), d)
            assert abs(l - ref) <= 1e-9 * max(ref, 1e-12 * float(ys @ ys))
        if moves:
            assert score_candidate(state, moves[0], d) == pytest.approx(losses[0], rel=1e-12, abs=1e-300)


def test_degenerate_move_scores_current_loss(rng):
    xs, b, ys = random_state(rng, 6, 30)
    net, d, _ = moves_for(b, xs, ys)
    state = make_state(net, d)
    same = CandidateMove(0, float(b[0]), 0, LEFT, MID_DATA_DATA)
    assert score_candidate(state, same, d) == pytest.approx(state.loss, rel=1e-12, abs=1e-15)


def test_select_best_tie_break():
    moves = [
        CandidateMove(2, 0.1, 0, LEFT, MID_DATA_DATA),
        CandidateMove(1, 0.5, 0, RIGHT, MID_DATA_DATA),
        CandidateMove(1, 0.3, 0, LEFT, MID_DATA_DATA),
    ]
    assert select_best(moves, [1.0, 1.0, 1.0]) == 2
    assert select_best(moves, [0.5, 1.0, 1.0]) == 0


def test_iterate_terminates_without_candidates():
    d = TrainingSet([0.0, 1.0], [1.0, 2.0])
    state = make_state(ReluNetwork([2.0], [0.0]), d)
    step = anls_iterate(state, d)
    assert step.status == "terminated" and step.reason == "no_candidates" and step.state is state


def test_iterate_terminates_at_local_optimum():
    # every cell already fits exactly: no move can lower a zero loss
    xs = np.linspace(-1, 1, 6)
    d = TrainingSet(xs, 2 * xs + 1)
    state = make_state(ReluNetwork([-3.0, -2.0], [0.0, 0.0]), d)
    assert state.loss < 1e-28
    step = anls_iterate(state, d)
    assert step.status == "terminated" and step.reason == "no_improvement"
    assert step.state.loss == state.loss


def test_iterate_accepts_strict_improvement(rng):
    for _ in range(20):
        xs, b, ys = random_state(rng, 8, 40)
        net, d, _ = moves_for(b, xs, ys)
        state = make_state(net, d)
        step = anls_iterate(state, d)
        if step.status == "continued":
            assert step.state.loss < state.loss and step.state.iteration == state.iteration + 1
            assert step.state.loss == pytest.approx(step.best_loss, rel=1e-9, abs=1e-15)
            np.testing.assert_array_equal(step.state.net.biases, apply_move(state.net, step.best).biases)


def test_anls_train_monotone_and_trace():
    xs = np.linspace(-1, 1, 60)
    d = TrainingSet(xs, np.sin(np.pi * xs))
    for seed in range(3):
        cfg = TrainConfig("anls", 8, max_iters=100, seed=seed, extended_trace=True)
        tr = anls_train(cfg, d)
        assert np.all(np.diff(tr.losses) < 0)
        assert tr.termination in ("no_candidates", "no_improvement", "refit_not_better", "max_iters")
        assert tr.rows[0][-1] == -1 and all(r[-1] >= 0 for r in tr.rows[1:])
        again = train(cfg, d)
        assert again.rows == tr.rows


def test_anls_train_starts_from_lsq():
    xs = np.linspace(-1, 1, 30)
    d = TrainingSet(xs, np.cos(2 * xs))
    tr = train(TrainConfig("anls", 6, max_iters=1, seed=4), d)
    lsq = train(TrainConfig("lsq", 6, seed=4), d)
    assert tr.losses[0] == pytest.approx(lsq.final_loss, rel=1e-12)
