"""Sparse linear algebra used throughout the solver.

Matrices are ``scipy.sparse.csr_matrix`` instances.  The functions here add
the contracts the rest of the package relies on: dimension checks, explicit
singularity detection for the direct solver, and the zero-mean solve for
singular graph Laplacians.
"""
from __future__ import annotations

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SingularMatrix(ArithmeticError):
    """Raised when a pivot of the LU factorization is numerically zero."""


class InconsistentRHS(ValueError):
    """Raised when a singular Laplacian system has no solution."""


def as_csr(A) -> sp.csr_matrix:
    A = sp.csr_matrix(A)
    A.sort_indices()
    return A


def spmv(A: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or A.shape[1] != x.shape[0]:
        raise ValueError(f"cannot multiply {A.shape} matrix by vector of shape {x.shape}")
    return A @ x


class LUFactor:
    """Sparse LU factorization with the pivot check of :func:`lu_solve`, reusable for many right-hand sides."""

    def __init__(self, A):
        A = sp.csc_matrix(A)
        n, m = A.shape
        if n != m:
            raise ValueError(f"matrix must be square, got {A.shape}")
        amax = abs(A).max() if A.nnz else 0.0
        if amax == 0.0:
            raise SingularMatrix("zero matrix")
        try:
            self._lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=1.0)
        except RuntimeError as exc:
            raise SingularMatrix(str(exc)) from exc
        pivots = np.abs(self._lu.U.diagonal())
        if pivots.min() < 1e-14 * amax:
            raise SingularMatrix(f"pivot {pivots.min():.3e} below threshold (max|a| = {amax:.3e})")
        self.shape = A.shape

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape != (self.shape[0],):
            raise ValueError(f"right-hand side of shape {b.shape} does not match {self.shape}")
        return self._lu.solve(b)


def lu_solve(A, b: np.ndarray) -> np.ndarray:
    """Solve ``A x = b`` by sparse LU with partial pivoting.

    Raises :class:`SingularMatrix` if a pivot falls below ``1e-14 max|a|``.
    """
    b = np.asarray(b, dtype=float)
    if b.shape != (A.shape[0],):
        raise ValueError(f"right-hand side of shape {b.shape} does not match {A.shape}")
    return LUFactor(A).solve(b)


class NeumannSolver:
    """Zero-mean solutions of ``L x = rhs`` for a connected graph Laplacian.

    The mean constraint is enforced with a Lagrange multiplier, i.e. the
    bordered system ``[[L, 1], [1^T, 0]]`` is factorized once.
    """

    def __init__(self, L):
        L = as_csr(L)
        self.n = L.shape[0]
        ones = np.ones((self.n, 1))
        self._lu = LUFactor(sp.bmat([[L, ones], [ones.T, None]], format="csc"))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape != (self.n,):
            raise ValueError(f"right-hand side of shape {rhs.shape}, expected ({self.n},)")
        total = rhs.sum()
        if abs(total) > 1e-10 * np.abs(rhs).sum():
            raise InconsistentRHS(f"right-hand side sums to {total:.3e}, expected zero")
        if not np.any(rhs):
            return np.zeros(self.n)
        return self._lu.solve(np.append(rhs, 0.0))[: self.n]


def neumann_solve(L, rhs: np.ndarray) -> np.ndarray:
    """Zero-mean solution of ``L x = rhs`` for a connected graph Laplacian."""
    return NeumannSolver(L).solve(rhs)


def is_graph_laplacian(A, rtol: float = 1e-13, n_probe: int = 8, seed: int = 0) -> bool:
    """Check symmetry, zero row sums, sign pattern and positive semidefiniteness."""
    A = as_csr(A)
    if A.shape[0] != A.shape[1]:
        return False
    amax = abs(A).max() if A.nnz else 0.0
    if amax == 0.0:
        return True
    if abs(A - A.T).max() > rtol * amax:
        return False
    if np.abs(np.asarray(A.sum(axis=1)).ravel()).max() > rtol * amax:
        return False
    off = A - sp.diags(A.diagonal())
    if off.nnz and off.data.max() > 0.0:
        return False
    rng = np.random.default_rng(seed)
    for _ in range(n_probe):
        x = rng.standard_normal(A.shape[0])
        if x @ (A @ x) < -1e-12 * amax * (x @ x):
            return False
    return True


def banded_lower(A, bandwidth: int) -> np.ndarray:
    """Lower banded storage of a symmetric matrix, as used by LAPACK ``pbtrf``."""
    A = sp.coo_matrix(A)
    keep = A.row >= A.col
    ab = np.zeros((bandwidth + 1, A.shape[0]))
    np.add.at(ab, (A.row[keep] - A.col[keep], A.col[keep]), A.data[keep])
    return ab


def bandwidth(A) -> int:
    A = sp.coo_matrix(A)
    if A.nnz == 0:
        return 0
    return int(np.abs(A.row - A.col).max())


def solve_banded_spd(ab: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Cholesky solve with a symmetric positive definite banded matrix.

    Raises :class:`numpy.linalg.LinAlgError` if the matrix is not positive definite.
    """
    return scipy.linalg.solveh_banded(ab, rhs, lower=True, check_finite=False)


def write_matrix_market(A, path) -> None:
    """Export ``A`` as a general real coordinate MatrixMarket file."""
    scipy.io.mmwrite(path, sp.coo_matrix(A), field="real", symmetry="general")
