"""Independent reference computations used by the tests."""
import itertools

import numpy as np
import scipy.sparse as sp

from fluxpot.limiters import GlobalBox, local_bounds
from fluxpot.mesh import EdgeGraph
from fluxpot.obpp import Variant, build_qp


def equality_qp(H, c, A_eq, b_eq, tol=1e-10):
    """Minimizer of ``1/2 x^T H x - c^T x`` on ``A_eq x = b_eq`` (None if inconsistent)."""
    n = H.shape[0]
    k = A_eq.shape[0]
    if k == 0:
        return np.linalg.solve(H, c)
    kkt = np.block([[H, A_eq.T], [A_eq, np.zeros((k, k))]])
    rhs = np.concatenate([c, b_eq])
    try:
        sol = np.linalg.solve(kkt, rhs)
        if np.all(np.isfinite(sol)) and np.abs(kkt @ sol - rhs).max() <= tol * max(1.0, np.abs(rhs).max()):
            return sol[:n]
    except np.linalg.LinAlgError:
        pass
    # dependent constraint rows: least-squares KKT solution, rejected if inconsistent
    sol, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    if np.abs(kkt @ sol - rhs).max() > tol * max(1.0, np.abs(rhs).max()):
        return None
    return sol[:n]


def box_active_set_oracle(H, c, L, lower, upper):
    """Brute force ``min 1/2 x^T H x - c^T x`` s.t. ``lower <= L x <= upper``.

    Every row is free, at its lower or at its upper bound (3^n active sets);
    the feasible equality-constrained minimizer of least objective wins.
    """
    n = L.shape[0]
    best_x, best_f = None, np.inf
    scale = max(1.0, np.abs(lower).max(), np.abs(upper).max())
    for pattern in itertools.product((0, 1, 2), repeat=n):
        pattern = np.array(pattern)
        rows = np.flatnonzero(pattern)
        rhs = np.where(pattern[rows] == 1, lower[rows], upper[rows])
        x = equality_qp(H, c, L[rows], rhs)
        if x is None:
            continue
        z = L @ x
        if np.any(z < lower - 1e-9 * scale) or np.any(z > upper + 1e-9 * scale):
            continue
        f = 0.5 * x @ H @ x - c @ x
        if f < best_f:
            best_x, best_f = x, f
    return best_x, best_f


def random_mass_system(rng, n):
    """Random symmetric ``M_C`` with positive off-diagonal entries on a connected graph and its lumping."""
    pattern = np.eye(n, dtype=bool)
    for i in range(n - 1):
        pattern[i, i + 1] = pattern[i + 1, i] = True
    extra = rng.random((n, n)) < 0.3
    pattern |= extra | extra.T
    weights = rng.uniform(0.05, 0.3, (n, n))
    off = np.triu(np.where(pattern, weights, 0.0), 1)
    off = off + off.T
    diag = off.sum(axis=1) + rng.uniform(0.5, 1.5, n)
    M_C = sp.csr_matrix(off + np.diag(diag))
    return M_C, np.asarray(M_C.sum(axis=1)).ravel()


def random_qp(rng, n, pinned=False, mu=0.01):
    """Random fully discrete potential QP with a strictly feasible box."""
    while True:
        M_C, m = random_mass_system(rng, n)
        dt = rng.uniform(0.05, 0.5)
        u = rng.uniform(0.0, 1.0, n)
        r = rng.normal(0.0, 1.0, n) * m / dt * rng.uniform(0.1, 1.0)
        target = rng.normal(0.0, 3.0, n)
        pins = np.array([int(rng.integers(n))]) if pinned else None
        graph = EdgeGraph.from_matrix(M_C)
        qp = build_qp(
            Variant.FULLY_DISCRETE, M_C, m, u, r, local_bounds(u, graph, GlobalBox(0.0, 1.0)),
            target, mu=mu, dt=dt, pinned=pins, min_width=0.0,
        )
        lo, hi = qp.lower, qp.upper
        if np.any(hi - lo <= 0):
            continue
        if not pinned and not (lo.sum() < -1e-3 * np.abs(lo).sum() and hi.sum() > 1e-3 * np.abs(hi).sum()):
            continue
        return qp


def qp_oracle(qp):
    L = qp.ops.L.toarray()
    H = qp.ops.H.toarray()
    return box_active_set_oracle(H, qp.linear_term, L, qp.lower, qp.upper)
