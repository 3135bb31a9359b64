"""Dense linear-algebra kernel.

Column-pivoted Householder QR, complete orthogonal decomposition (COD),
minimum-norm least squares, the single-column COD update solve used to
score ANLS candidates, and one-sided Jacobi singular values.

Everything here works on float64 numpy arrays and returns new arrays;
factorizations are treated as read-only once built.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import solve_triangular

EPS = np.finfo(np.float64).eps

TILDE_ROW_NONZERO = "tilde_row_nonzero"
TILDE_ROW_ZERO = "tilde_row_zero"


class InvalidInputError(ValueError):
    """Raised for non-finite entries or inconsistent dimensions."""


def _as_matrix(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise InvalidInputError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix has non-finite entries")
    return a


def _as_vector(v, length: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape[0] != length:
        raise InvalidInputError(f"{name} has length {v.shape[0]}, expected {length}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return v


def householder_vector(x: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Return ``(v, tau, beta)`` with ``(I - tau v v^T) x = beta e_1`` and ``v[0] = 1``."""
    v = np.array(x, dtype=np.float64, copy=True)
    alpha = v[0]
    sigma = float(v[1:] @ v[1:])
    v[0] = 1.0
    if sigma == 0.0:
        # already a multiple of e_1; reflect only to make beta non-negative
        if alpha >= 0.0:
            return v, 0.0, alpha
        return v, 2.0, -alpha
    norm = np.sqrt(alpha * alpha + sigma)
    # choose the sign that avoids cancellation in v[0]
    v0 = alpha - norm if alpha <= 0.0 else -sigma / (alpha + norm)
    tau = 2.0 * v0 * v0 / (sigma + v0 * v0)
    v[1:] /= v0
    return v, tau, norm


def _householder_qr(a: np.ndarray, pivot: bool):
    """Householder QR (optionally column pivoted) with an explicit full Q."""
    m, n = a.shape
    r = a.copy()
    q = np.eye(m)
    perm = np.arange(n)
    for k in range(min(m, n)):
        if pivot:
            norms = np.einsum("ij,ij->j", r[k:, k:], r[k:, k:])
            j = k + int(np.argmax(norms))
            if j != k:
                r[:, [k, j]] = r[:, [j, k]]
                perm[[k, j]] = perm[[j, k]]
        v, tau, beta = householder_vector(r[k:, k])
        if tau != 0.0:
            r[k:, k:] -= tau * np.outer(v, v @ r[k:, k:])
            q[:, k:] -= tau * np.outer(q[:, k:] @ v, v)
        r[k, k] = beta
        r[k + 1:, k] = 0.0
    return q, r, perm


@dataclass(frozen=True)
class PivotedQR:
    """``a[:, perm] = q @ r`` with ``|r[0,0]| >= |r[1,1]| >= ...``."""

    q: np.ndarray
    r: np.ndarray
    perm: np.ndarray
    rank: int
    rank_tol: float


def qr_column_pivot(a, abs_tol: float = 0.0) -> PivotedQR:
    """Column-pivoted Householder QR with numerical rank.

    The rank counts diagonal entries of ``r`` above
    ``max(max(m, n) * eps * |r[0, 0]|, abs_tol)``.
    """
    a = _as_matrix(a)
    m, n = a.shape
    q, r, perm = _householder_qr(a, pivot=True)
    diag = np.abs(np.diag(r))
    tol = max(max(m, n) * EPS * (diag[0] if diag.size else 0.0), abs_tol)
    rank = int(np.count_nonzero(diag > tol)) if diag.size and diag[0] > 0.0 else 0
    return PivotedQR(q=q, r=r, perm=perm, rank=rank, rank_tol=float(tol))


@dataclass(frozen=True)
class CodFactors:
    """Complete orthogonal decomposition ``q.T @ a @ z = [[t, 0], [0, 0]]``.

    ``t`` is ``rank x rank`` lower triangular. ``z[:, :rank]`` spans the row
    space of ``a`` and ``z[:, rank:]`` its null space. A wide ``a`` is
    factored with zero rows appended, so ``q`` may have more rows than
    ``a``; ``rows`` keeps the original count.
    """

    q: np.ndarray
    z: np.ndarray
    t: np.ndarray
    rank: int
    rank_tol: float
    rows: int | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.q.shape[0] if self.rows is None else self.rows), self.z.shape[0]

    def pad(self, v: np.ndarray) -> np.ndarray:
        """Extend length-``rows`` vectors (or ``rows x k`` blocks) to ``q``'s row count."""
        extra = self.q.shape[0] - v.shape[0]
        if extra == 0:
            return v
        return np.concatenate([v, np.zeros((extra,) + v.shape[1:])])

    @property
    def z_hat(self) -> np.ndarray:
        return self.z[:, : self.rank]

    @property
    def z_tilde(self) -> np.ndarray:
        return self.z[:, self.rank:]

    @cached_property
    def tilde_row_norms(self) -> np.ndarray:
        return np.linalg.norm(self.z_tilde, axis=1)

    @cached_property
    def tilde_row_threshold(self) -> float:
        # z_tilde has orthonormal columns, so its 2-norm is 1 when non-empty
        return 1e-12 if self.rank < self.z.shape[0] else 0.0

    @cached_property
    def cond_estimate(self) -> float:
        """``max |t_ii| / min |t_ii|``, a cheap estimate of the condition of ``t``."""
        if self.rank == 0:
            return 1.0
        d = np.abs(np.diag(self.t))
        return float(d.max() / d.min())

    def q2_tol(self, vnorm):
        """Size below which the part of ``v`` outside the column space is noise.

        The computed column space of ``a`` is only accurate to an angle of
        about ``eps * cond``, so anything inside it can leak that much out.
        """
        m, n = self.shape
        return max(m, n) * EPS * np.maximum(vnorm, 1.0) * self.cond_estimate

    @cached_property
    def g(self) -> np.ndarray:
        """``T^{-T} Zhat^T``; column ``l`` feeds the rank-one update of row ``l``."""
        if self.rank == 0:
            return np.zeros((0, self.z.shape[0]))
        return solve_triangular(self.t, self.z_hat.T, trans="T", lower=True)

    def solve_t(self, rhs: np.ndarray) -> np.ndarray:
        if self.rank == 0:
            return np.zeros((0,) + rhs.shape[1:])
        return solve_triangular(self.t, rhs, lower=True)

    def reconstruct(self) -> np.ndarray:
        r = self.rank
        return (self.q[:, :r] @ self.t @ self.z_hat.T)[: self.shape[0]]


def cod(a, abs_tol: float = 0.0) -> CodFactors:
    """Complete orthogonal decomposition of an ``m x n`` matrix.

    Pivoted QR gives ``a P = Q [[R11, R12], [0, ~0]]``; a second QR of
    ``[R11 R12]^T`` (right-side reflections that annihilate ``R12``) turns
    the leading block into the lower-triangular ``T``. ``abs_tol`` is a
    floor for the rank threshold, for matrices known to be perturbations
    of something larger. For ``m < n`` zero rows are appended first; they
    change neither the solution nor the residual.
    """
    a = _as_matrix(a)
    m, n = a.shape
    if m < n:
        a = np.vstack([a, np.zeros((n - m, n))])
    pqr = qr_column_pivot(a, abs_tol)
    r = pqr.rank
    if r == 0:
        w = np.eye(n)
        t = np.zeros((0, 0))
    else:
        w, s, _ = _householder_qr(pqr.r[:r, :].T, pivot=False)
        t = np.tril(s[:r, :r].T)
    z = np.empty((n, n))
    z[pqr.perm, :] = w
    return CodFactors(q=pqr.q, z=z, t=t, rank=r, rank_tol=pqr.rank_tol, rows=m)


def min_norm_lsq(factors: CodFactors, y) -> tuple[np.ndarray, float]:
    """Minimum-norm least-squares solution and its squared residual norm."""
    m, _ = factors.shape
    y = factors.pad(_as_vector(y, m, "y"))
    r = factors.rank
    p = factors.q.T @ y
    x1 = factors.solve_t(p[:r])
    coeffs = factors.z_hat @ x1
    p2 = p[r:]
    return coeffs, float(p2 @ p2)


@dataclass(frozen=True)
class UpdateSolve:
    loss_sq: float
    coeffs: np.ndarray | None
    branch: str


def cod_update_solve(factors: CodFactors, col_index: int, v, y, want_coeffs: bool = True) -> UpdateSolve:
    """Least squares for ``A + v e_l^T`` reusing the COD of ``A``.

    The branch is decided by the norm of row ``l`` of the null-space block
    ``Z~``. With ``want_coeffs=False`` only the squared residual is formed.
    """
    m, n = factors.shape
    if not 0 <= col_index < n:
        raise InvalidInputError(f"column index {col_index} out of range [0, {n})")
    v = factors.pad(_as_vector(v, m, "v"))
    y = factors.pad(_as_vector(y, m, "y"))
    r = factors.rank
    l = col_index

    p = factors.q.T @ y
    q = factors.q.T @ v
    p1, p2 = p[:r], p[r:]
    q1, q2 = q[:r], q[r:]
    q2_sq = float(q2 @ q2)
    q2_zero = np.sqrt(q2_sq) <= factors.q2_tol(float(np.linalg.norm(v)))
    zhat_l = factors.z_hat[l]

    if factors.tilde_row_norms[l] > factors.tilde_row_threshold:
        ztil_l = factors.z_tilde[l]
        zeta = float(ztil_l @ ztil_l)
        if not q2_zero:
            d = float(p2 @ q2) / q2_sq
            res2 = p2 - d * q2
            loss_sq = float(res2 @ res2)
            if not want_coeffs:
                return UpdateSolve(loss_sq, None, TILDE_ROW_NONZERO)
            x1 = factors.solve_t(p1 - d * q1)
        else:
            # c_l is free; pick it so that the full coefficient vector has minimal norm
            loss_sq = float(p2 @ p2)
            if not want_coeffs:
                return UpdateSolve(loss_sq, None, TILDE_ROW_NONZERO)
            a = factors.solve_t(p1)
            g = factors.solve_t(q1)
            h = float(zhat_l @ g)
            alpha = float(zhat_l @ a)
            d = (float(a @ g) + (1.0 + h) * alpha / zeta) / (float(g @ g) + (1.0 + h) ** 2 / zeta)
            x1 = a - d * g
        x2 = (d - float(zhat_l @ x1)) / zeta * ztil_l
        coeffs = factors.z_hat @ x1 + factors.z_tilde @ x2
        return UpdateSolve(loss_sq, coeffs, TILDE_ROW_NONZERO)

    # ||Z~_l|| = 0: c_l = Zhat_l x1, minimise ||T~ x1 - p1||^2 + ||(Zhat_l x1) q2 - p2||^2
    nu = np.sqrt(q2_sq)
    beta = float(p2 @ q2) / nu if not q2_zero else 0.0
    d_perp = float(p2 @ q2) / q2_sq if not q2_zero else 0.0
    res2 = p2 - d_perp * q2
    base = float(res2 @ res2)
    # rank 0 never lands here: every row of Z~ = Z is a unit vector
    t_tilde = factors.t + np.outer(q1, zhat_l)
    k = np.vstack([t_tilde, (nu if not q2_zero else 0.0) * zhat_l[None, :]])
    rhs = np.concatenate([p1, [beta]])
    # measure rank against the scale of A + v e_l^T, not of K, which can be pure cancellation noise
    small = cod(k, abs_tol=max(factors.rank_tol, factors.q2_tol(float(np.linalg.norm(v)))))
    x1, small_res = min_norm_lsq(small, rhs)
    loss_sq = base + small_res
    coeffs = factors.z_hat @ x1 if want_coeffs else None
    return UpdateSolve(loss_sq, coeffs, TILDE_ROW_ZERO)


def cod_update_losses(factors: CodFactors, cols, vs, y) -> np.ndarray:
    """Squared residuals of many single-column updates at once.

    ``vs`` holds one update vector per column (shape ``m x K``). Uses the
    rank-one structure of ``T + q1 Zhat_l`` to stay ``O(r)`` per
    candidate after the projections; near-singular cases defer to
    :func:`cod_update_solve`.
    """
    m, n = factors.shape
    cols = np.asarray(cols, dtype=int)
    vs = np.asarray(vs, dtype=np.float64).reshape(m, -1)
    y = _as_vector(y, m, "y")
    vs_raw, y_raw = vs, y
    vs, y = factors.pad(vs), factors.pad(y)
    if cols.shape[0] != vs.shape[1]:
        raise InvalidInputError("need one column index per update vector")
    if cols.size and (cols.min() < 0 or cols.max() >= n):
        raise InvalidInputError("column index out of range")
    r = factors.rank

    p = factors.q.T @ y
    qv = factors.q.T @ vs
    p1, p2 = p[:r], p[r:]
    q1, q2 = qv[:r], qv[r:]
    q2_sq = np.einsum("ij,ij->j", q2, q2)
    nu = np.sqrt(q2_sq)
    q2_zero = nu <= factors.q2_tol(np.linalg.norm(vs, axis=0))
    pq = p2 @ q2
    d = np.where(q2_zero, 0.0, pq / np.where(q2_zero, 1.0, q2_sq))
    res2 = p2[:, None] - q2 * d[None, :]
    base = np.einsum("ij,ij->j", res2, res2)

    out = base.copy()
    zero_rows = factors.tilde_row_norms[cols] <= factors.tilde_row_threshold
    if np.any(zero_rows):
        idx = np.flatnonzero(zero_rows)
        g = factors.g[:, cols[idx]]
        gamma = 1.0 + np.einsum("ij,ij->j", g, q1[:, idx])
        beta = np.where(q2_zero[idx], 0.0, pq[idx] / np.where(q2_zero[idx], 1.0, nu[idx]))
        nu_eff = np.where(q2_zero[idx], 0.0, nu[idx])
        ok = np.abs(gamma) > 1e-8
        h = g * (nu_eff / np.where(ok, gamma, 1.0))[None, :]
        e = beta - p1 @ h
        extra = e * e / (1.0 + np.einsum("ij,ij->j", h, h))
        out[idx] = np.where(ok, base[idx] + extra, out[idx])
        for j in idx[~ok]:
            out[j] = cod_update_solve(factors, int(cols[j]), vs_raw[:, j], y_raw, want_coeffs=False).loss_sq
    return out


def _round_robin(n: int) -> list[list[tuple[int, int]]]:
    """Rounds of disjoint column pairs covering every pair once (circle method)."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    k = len(players)
    rounds = []
    for _ in range(k - 1):
        pairs = []
        for i in range(k // 2):
            a, b = players[i], players[k - 1 - i]
            if a >= 0 and b >= 0:
                pairs.append((min(a, b), max(a, b)))
        rounds.append(pairs)
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def singular_values(a, max_sweeps: int = 60) -> np.ndarray:
    """Singular values in descending order via one-sided (Hestenes) Jacobi.

    Meant for the small matrices of the plateau diagnostics; disjoint
    column pairs of each round are rotated together.
    """
    u = _as_matrix(a)
    if u.shape[0] < u.shape[1]:
        u = u.T.copy()
    n = u.shape[1]
    rounds = [r for r in _round_robin(n) if r]
    index_rounds = [(np.array([i for i, _ in r]), np.array([j for _, j in r])) for r in rounds]
    tol = u.shape[0] * EPS
    # columns at rounding level relative to the whole matrix carry no information
    floor = (EPS * np.linalg.norm(u)) ** 2
    for _ in range(max_sweeps):
        rotated = False
        for ii, jj in index_rounds:
            ui, uj = u[:, ii], u[:, jj]
            alpha = np.einsum("ij,ij->j", ui, ui)
            beta = np.einsum("ij,ij->j", uj, uj)
            gamma = np.einsum("ij,ij->j", ui, uj)
            active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            active &= (alpha > floor) & (beta > floor)
            if not np.any(active):
                continue
            rotated = True
            g = np.where(active, gamma, 1.0)
            zeta = (beta - alpha) / (2.0 * g)
            t = np.sign(zeta) / (np.abs(zeta) + np.hypot(1.0, zeta))
            t = np.where(zeta == 0.0, 1.0, t)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            c = np.where(active, c, 1.0)
            s = np.where(active, s, 0.0)
            u[:, ii] = c * ui - s * uj
            u[:, jj] = s * ui + c * uj
        if not rotated:
            break
    return np.sort(np.linalg.norm(u, axis=0))[::-1]
