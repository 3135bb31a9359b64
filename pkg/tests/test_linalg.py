import numpy as np
import pytest

from anls_lab.linalg import (
    EPS,
    TILDE_ROW_NONZERO,
    TILDE_ROW_ZERO,
    InvalidInputError,
    cod,
    cod_update_losses,
    cod_update_solve,
    householder_vector,
    min_norm_lsq,
    qr_column_pivot,
    singular_values,
)

from conftest import rel_err


def rank_deficient(rng, m, n, r):
    return rng.normal(size=(m, r)) @ rng.normal(size=(r, n))


def test_householder_vector_maps_to_e1(rng):
    for x in (rng.normal(size=5), np.array([-3.0, 0, 0]), np.array([2.0, 0.0]), np.array([0.0, 1.0])):
        v, tau, beta = householder_vector(x)
        h = np.eye(x.size) - tau * np.outer(v, v)
        np.testing.assert_allclose(h @ x, beta * np.eye(x.size)[0], atol=1e-14)
        np.testing.assert_allclose(h @ h.T, np.eye(x.size), atol=1e-14)
        assert beta >= 0


def test_qr_identity():
    f = qr_column_pivot(np.eye(2))
    assert f.rank == 2
    np.testing.assert_allclose(np.abs(np.diag(f.r)), [1.0, 1.0])


def test_qr_rank_one():
    assert qr_column_pivot([[1, 1], [2, 2], [3, 3]]).rank == 1


def test_qr_duplicated_columns_rank(rng):
    a = rng.normal(size=(20, 8))
    a[:, 5], a[:, 6], a[:, 7] = a[:, 0], a[:, 1], a[:, 2]
    f = qr_column_pivot(a)
    # oracle: numerical rank from the singular values
    assert f.rank == np.linalg.matrix_rank(a) == 5
    np.testing.assert_allclose(f.q @ f.r, a[:, f.perm], atol=1e-12 * np.linalg.norm(a))
    d = np.abs(np.diag(f.r))
    assert np.all(np.diff(d) <= 1e-12)


def test_qr_rejects_nonfinite():
    with pytest.raises(InvalidInputError):
        qr_column_pivot([[1.0, np.nan]])
    with pytest.raises(InvalidInputError):
        cod([[np.inf], [1.0]])


def test_cod_identity():
    f = cod(np.eye(3))
    assert f.rank == 3
    np.testing.assert_allclose(np.abs(f.t), np.eye(3), atol=1e-15)


def test_cod_single_column():
    f = cod([[1.0], [1.0]])
    assert f.rank == 1
    assert abs(abs(f.t[0, 0]) - np.sqrt(2)) < 1e-15


def test_wide_matrices(rng):
    # more columns than rows: factored with zero rows appended
    for _ in range(40):
        m = int(rng.integers(1, 6))
        n = int(rng.integers(m + 1, 10))
        a = rng.normal(size=(m, n))
        y = rng.normal(size=m)
        f = cod(a)
        assert f.shape == (m, n) and f.rank == m
        np.testing.assert_allclose(f.reconstruct(), a, atol=1e-12)
        c, loss = min_norm_lsq(f, y)
        np.testing.assert_allclose(c, np.linalg.pinv(a) @ y, atol=1e-10)
        assert loss < 1e-20
        l = int(rng.integers(0, n))
        v = rng.normal(size=m)
        at = a.copy()
        at[:, l] += v
        u = cod_update_solve(f, l, v, y)
        np.testing.assert_allclose(u.coeffs, np.linalg.pinv(at) @ y, atol=1e-9)
        batch = cod_update_losses(f, [l], v[:, None], y)
        assert abs(batch[0] - u.loss_sq) < 1e-12


@pytest.mark.parametrize("shape", [(30, 10), (64, 64), (12, 5), (5, 5)])
def test_cod_invariants(rng, shape):
    m, n = shape
    for r in sorted({1, n // 2, n}):
        a = rank_deficient(rng, m, n, r)
        a *= 10.0 / np.abs(a).max()
        f = cod(a)
        assert f.rank == r == qr_column_pivot(a).rank
        assert np.abs(f.q.T @ f.q - np.eye(m)).max() < 1e-12
        assert np.abs(f.z.T @ f.z - np.eye(n)).max() < 1e-12
        core = f.q.T @ a @ f.z
        expect = np.zeros((m, n))
        expect[:r, :r] = f.t
        assert np.abs(core - expect).max() < 1e-10 * np.linalg.norm(a, 2)
        assert np.allclose(f.t, np.tril(f.t))
        assert np.all(np.abs(np.diag(f.t)) > f.rank_tol)


def test_min_norm_examples():
    c, loss = min_norm_lsq(cod([[1.0], [1.0]]), [1.0, 3.0])
    np.testing.assert_allclose(c, [2.0])
    assert abs(loss - 2.0) < 1e-14
    c, loss = min_norm_lsq(cod([[1, 1], [2, 2], [3, 3]]), [1, 2, 3])
    np.testing.assert_allclose(c, [0.5, 0.5], atol=1e-15)
    assert loss < 1e-28


def test_min_norm_zero_rhs(rng):
    c, loss = min_norm_lsq(cod(rng.normal(size=(6, 3))), np.zeros(6))
    assert np.all(c == 0) and loss == 0


def test_min_norm_dimension_check():
    with pytest.raises(InvalidInputError):
        min_norm_lsq(cod(np.eye(3)), [1.0, 2.0])


def test_min_norm_matches_oracle_and_is_minimal(rng):
    for _ in range(50):
        m, n = rng.integers(3, 25), rng.integers(1, 10)
        n = min(n, m)
        r = rng.integers(1, n + 1)
        a = rank_deficient(rng, m, n, r)
        y = rng.normal(size=m)
        c, loss = min_norm_lsq(cod(a), y)
        # oracle: normal equations restricted to the row space, via eigh
        w, v = np.linalg.eigh(a.T @ a)
        keep = w > 1e-10 * w.max()
        c_ref = v[:, keep] @ ((v[:, keep].T @ (a.T @ y)) / w[keep])
        assert rel_err(c, c_ref) < 1e-8
        res = a @ c - y
        assert abs(loss - res @ res) <= 1e-9 * max(y @ y, 1e-300)
        assert np.linalg.norm(a.T @ res) < 1e-9 * np.linalg.norm(a) * np.linalg.norm(y)
        for wvec in v[:, ~keep].T:
            assert np.linalg.norm(c + 1e-3 * wvec) > np.linalg.norm(c)


def _random_update_case(rng, full_rank):
    m = int(rng.integers(2, 41))
    n = int(rng.integers(1, min(m, 12) + 1))
    a = rng.normal(size=(m, n))
    if not full_rank:
        n = max(n, 2)
        m = max(m, n)
        a = rank_deficient(rng, m, n, int(rng.integers(1, n)))
    l = int(rng.integers(0, n))
    v = rng.normal(size=m)
    return a, l, v, rng.normal(size=m)


def _refit(a_tilde, y):
    c = np.linalg.pinv(a_tilde, rcond=1e-10) @ y
    res = a_tilde @ c - y
    return c, float(res @ res)


def test_update_zero_vector(rng):
    a = rng.normal(size=(9, 4))
    y = rng.normal(size=9)
    f = cod(a)
    u = cod_update_solve(f, 2, np.zeros(9), y)
    c, loss = min_norm_lsq(f, y)
    assert abs(u.loss_sq - loss) < 1e-12 * loss
    np.testing.assert_allclose(u.coeffs, c, rtol=1e-10)


def test_update_branches_match_refit(rng):
    seen = set()
    for case in range(200):
        a, l, v, y = _random_update_case(rng, full_rank=case % 2 == 0)
        f = cod(a)
        at = a.copy()
        at[:, l] += v
        c_ref, loss_ref = _refit(at, y)
        u = cod_update_solve(f, l, v, y)
        seen.add(u.branch)
        floor = 1e-12 * float(y @ y)
        assert abs(u.loss_sq - loss_ref) <= 1e-9 * max(loss_ref, floor)
        assert rel_err(u.coeffs, c_ref) < 1e-8
        res = at @ u.coeffs - y
        assert abs(res @ res - u.loss_sq) <= 1e-9 * max(u.loss_sq, floor)
        fast = cod_update_solve(f, l, v, y, want_coeffs=False)
        assert fast.coeffs is None and abs(fast.loss_sq - u.loss_sq) <= 1e-9 * max(u.loss_sq, floor)
    assert seen == {TILDE_ROW_NONZERO, TILDE_ROW_ZERO}


def test_update_special_directions(rng):
    # updates in the column space (q2 = 0) and exact cancellation of a column
    for case in range(300):
        a, l, _, y = _random_update_case(rng, full_rank=case % 2 == 0)
        n = a.shape[1]
        v = a @ rng.normal(size=n) if case % 3 else -a[:, l]
        at = a.copy()
        at[:, l] += v
        c_ref, loss_ref = _refit(at, y)
        u = cod_update_solve(cod(a), l, v, y)
        floor = 1e-12 * float(y @ y)
        assert abs(u.loss_sq - loss_ref) <= 1e-9 * max(loss_ref, floor)
        assert rel_err(u.coeffs, c_ref) < 1e-8


def test_batched_losses_match_single(rng):
    for case in range(60):
        a, _, _, y = _random_update_case(rng, full_rank=case % 2 == 0)
        m, n = a.shape
        f = cod(a)
        cols = rng.integers(0, n, size=7)
        vs = rng.normal(size=(m, 7))
        vs[:, 0] = -a[:, cols[0]]
        vs[:, 1] = a @ rng.normal(size=n)
        batch = cod_update_losses(f, cols, vs, y)
        single = [cod_update_solve(f, int(c), vs[:, j], y).loss_sq for j, c in enumerate(cols)]
        floor = 1e-12 * float(y @ y)
        for b_, s_ in zip(batch, single):
            assert abs(b_ - s_) <= 1e-9 * max(s_, floor)


def test_update_errors(rng):
    f = cod(rng.normal(size=(5, 3)))
    with pytest.raises(InvalidInputError):
        cod_update_solve(f, 3, np.zeros(5), np.zeros(5))
    with pytest.raises(InvalidInputError):
        cod_update_solve(f, 0, np.zeros(4), np.zeros(5))


def test_singular_values_examples(rng):
    np.testing.assert_allclose(singular_values(np.eye(3)), [1, 1, 1])
    np.testing.assert_allclose(singular_values(np.diag([3.0, -4.0])), [4, 3])
    a = rng.normal(size=(6, 6))
    ev = np.sort(np.linalg.eigvalsh(a.T @ a))[::-1]
    np.testing.assert_allclose(singular_values(a) ** 2, ev, rtol=1e-10)


def test_singular_values_properties(rng):
    for _ in range(100):
        m, n = rng.integers(1, 20, size=2)
        a = rng.uniform(-10, 10, size=(m, n))
        if n > 1 and rng.random() < 0.3:
            a[:, 0] = a[:, 1]
        s = singular_values(a)
        assert np.all(s >= 0) and np.all(np.diff(s) <= 0)
        assert abs(np.sum(s**2) - np.sum(a**2)) <= 1e-10 * np.sum(a**2)
        ref = np.linalg.svd(a, compute_uv=False)
        assert np.max(np.abs(s[: ref.size] - ref)) <= 1e-12 * ref[0] + 10 * EPS
    with pytest.raises(InvalidInputError):
        singular_values([[np.nan]])


def test_update_inside_weak_column_space(rng):
    # a duplicated column on top of a basis with one weak (1e-6) direction; moving the
    # duplicate inside the column space must not pretend to add a new direction
    for _ in range(50):
        u, _ = np.linalg.qr(rng.normal(size=(20, 5)))
        w, _ = np.linalg.qr(rng.normal(size=(5, 5)))
        b = u @ np.diag([5.0, 2.0, 1.0, 0.5, 1e-6]) @ w.T
        a = np.column_stack([b, b[:, 0]])
        y = rng.normal(size=20)
        v = u @ rng.normal(size=5)  # in span(u), but only via huge weights on the weak column
        loss_ref = float(np.sum((y - u @ (u.T @ y)) ** 2))  # the column space is exactly span(u)
        f = cod(a)
        for got in (cod_update_solve(f, 5, v, y).loss_sq, cod_update_losses(f, [5], v[:, None], y)[0]):
            assert abs(got - loss_ref) <= 1e-9 * loss_ref
