import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from fluxpot import linalg
from fluxpot.assembly import ConsistentMass, assemble, lump
from fluxpot.mesh import build_unit_square


def path_laplacian(n, weights=None):
    w = np.ones(n - 1) if weights is None else np.asarray(weights)
    d = np.zeros(n)
    d[:-1] += w
    d[1:] += w
    return sp.diags([-w, d, -w], [-1, 0, 1], format="csr")


def test_spmv_matches_dense():
    rng = np.random.default_rng(1)
    A = sp.random(7, 5, density=0.4, random_state=2, format="csr")
    x = rng.standard_normal(5)
    assert np.allclose(linalg.spmv(A, x), A.toarray() @ x, rtol=0, atol=1e-14)


def test_spmv_dimension_mismatch():
    with pytest.raises(ValueError):
        linalg.spmv(sp.eye(3, format="csr"), np.ones(4))


def test_lu_solve_small_system():
    A = sp.csr_matrix([[4.0, 1.0], [2.0, 3.0]])
    x = linalg.lu_solve(A, np.array([1.0, 2.0]))
    assert np.allclose(A @ x, [1.0, 2.0], atol=1e-14)


def test_lu_solve_singular_raises():
    with pytest.raises(linalg.SingularMatrix):
        linalg.lu_solve(sp.csr_matrix([[1.0, 1.0], [1.0, 1.0]]), np.ones(2))


def test_lu_solve_zero_matrix_raises():
    with pytest.raises(linalg.SingularMatrix):
        linalg.lu_solve(sp.csr_matrix((3, 3)), np.ones(3))


def test_lu_factor_reuse_and_shape_check():
    M = assemble(build_unit_square(6), ConsistentMass())
    fac = linalg.LUFactor(M)
    rng = np.random.default_rng(0)
    for _ in range(3):
        b = rng.standard_normal(M.shape[0])
        assert np.linalg.norm(M @ fac.solve(b) - b) <= 1e-12 * np.linalg.norm(b)
    with pytest.raises(ValueError):
        fac.solve(np.ones(3))


def test_neumann_solve_path_graph():
    L = path_laplacian(3)
    x = linalg.neumann_solve(L, np.array([1.0, 0.0, -1.0]))
    assert np.allclose(x, [1.0, 0.0, -1.0], atol=1e-14)
    assert abs(x.sum()) < 1e-14


def test_neumann_solve_zero_rhs():
    assert np.array_equal(linalg.neumann_solve(path_laplacian(5), np.zeros(5)), np.zeros(5))


def test_neumann_solve_inconsistent_rhs():
    with pytest.raises(linalg.InconsistentRHS):
        linalg.neumann_solve(path_laplacian(4), np.array([1.0, 0.0, 0.0, 0.0]))


@settings(max_examples=40, deadline=None)
@given(
    st.integers(min_value=2, max_value=12).flatmap(
        lambda n: st.tuples(
            st.just(n),
            st.lists(st.floats(0.1, 10.0), min_size=n - 1, max_size=n - 1),
            st.lists(st.floats(-5.0, 5.0), min_size=n, max_size=n),
        )
    )
)
def test_neumann_solve_property(data):
    n, weights, rhs = data
    L = path_laplacian(n, weights)
    rhs = np.asarray(rhs) - np.mean(rhs)
    x = linalg.neumann_solve(L, rhs)
    scale = max(1.0, np.abs(rhs).sum())
    assert np.abs(L @ x - rhs).max() <= 1e-9 * scale
    assert abs(x.sum()) <= 1e-9 * max(1.0, np.abs(x).sum())


def test_mass_difference_is_graph_laplacian():
    M_C = assemble(build_unit_square(5), ConsistentMass())
    L = lump(M_C) - M_C
    assert linalg.is_graph_laplacian(L)


@pytest.mark.parametrize(
    "A",
    [
        sp.csr_matrix([[1.0, -1.0], [-0.5, 0.5]]),  # not symmetric
        sp.csr_matrix([[2.0, -1.0], [-1.0, 2.0]]),  # nonzero row sums
        sp.csr_matrix([[-1.0, 1.0], [1.0, -1.0]]),  # positive off-diagonal
    ],
)
def test_is_graph_laplacian_rejects(A):
    assert not linalg.is_graph_laplacian(A)


def test_banded_cholesky_matches_dense():
    M_C = assemble(build_unit_square(4), ConsistentMass())
    A = M_C + sp.eye(M_C.shape[0])
    bw = linalg.bandwidth(A)
    assert bw == 4 + 2  # node (i, j) couples to (i+1, j+1)
    rhs = np.arange(A.shape[0], dtype=float)
    x = linalg.solve_banded_spd(linalg.banded_lower(A, bw), rhs)
    assert np.allclose(x, np.linalg.solve(A.toarray(), rhs), rtol=1e-12, atol=1e-12)


def test_write_matrix_market_roundtrip(tmp_path):
    import scipy.io

    A = path_laplacian(4)
    path = tmp_path / "L.mtx"
    linalg.write_matrix_market(A, path)
    B = scipy.io.mmread(path)
    assert np.allclose(B.toarray(), A.toarray())
