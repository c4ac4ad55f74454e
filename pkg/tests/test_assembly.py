import numpy as np
import pytest
import scipy.sparse as sp

from fluxpot import linalg
from fluxpot.assembly import (
    Advection, AnisotropicStiffness, BoundaryOperator, ConsistentMass, LinearVelocity,
    StreamlineDiffusion, assemble, boundary_terms, lump, rotated_tensor,
)
from fluxpot.mesh import BoundaryTag, build_punched_square, build_unit_square, classify_inflow
from fluxpot.problems import CIRCULAR_VELOCITY, ROTATION_VELOCITY

MESHES = [build_unit_square(4), build_unit_square(7), build_punched_square(9)]


def test_single_cell_mass_block():
    M = assemble(build_unit_square(2), ConsistentMass())
    h = 0.5
    block = h * h / 36 * np.array([[4, 2, 1, 2], [2, 4, 2, 1], [1, 2, 4, 2], [2, 1, 2, 4]])
    # the lower-left cell has nodes 0, 1, 4, 3 in CCW order
    cell = [0, 1, 4, 3]
    # node 0 belongs to this cell only, so its row entries are unshared
    corner_only = M.toarray()[np.ix_(cell, cell)]
    assert corner_only[0, 0] == pytest.approx(block[0, 0])
    assert corner_only[0, 1] == pytest.approx(block[0, 1])
    assert corner_only[0, 2] == pytest.approx(block[0, 2])


@pytest.mark.parametrize("mesh", MESHES)
def test_mass_total_and_symmetry(mesh):
    M = assemble(mesh, ConsistentMass())
    assert M.sum() == pytest.approx(mesh.n_cells * mesh.h**2, rel=1e-13)
    assert abs(M - M.T).max() < 1e-16
    m = lump(M).diagonal()
    assert np.all(m > 0)
    assert linalg.is_graph_laplacian(lump(M) - M)


@pytest.mark.parametrize("mesh", MESHES)
@pytest.mark.parametrize("velocity", [ROTATION_VELOCITY, CIRCULAR_VELOCITY])
def test_advection_row_sums_vanish_for_divergence_free(mesh, velocity):
    K = assemble(mesh, Advection(velocity))
    assert np.abs(np.asarray(K.sum(axis=1))).max() < 1e-14


@pytest.mark.parametrize("velocity", [ROTATION_VELOCITY, CIRCULAR_VELOCITY])
def test_advection_integration_by_parts(velocity):
    # k_ij + k_ji = -int_boundary phi_i phi_j v.n for divergence-free v
    mesh = classify_inflow(build_unit_square(6), velocity)
    K = assemble(mesh, Advection(velocity))
    B_in = BoundaryOperator(mesh, velocity, 0.0, tags=(BoundaryTag.INFLOW,)).B
    B_out = BoundaryOperator(mesh, velocity, 0.0, tags=(BoundaryTag.NONINFLOW,)).B
    assert abs((K + K.T) - (B_in - B_out)).max() < 1e-14


def test_advection_with_divergence():
    # v = (x, 0): k_ij = -int phi_i d/dx(x phi_j); constants give -int phi_i
    v = LinearVelocity(((1.0, 0.0), (0.0, 0.0)))
    mesh = build_unit_square(3)
    K = assemble(mesh, Advection(v))
    m = lump(assemble(mesh, ConsistentMass())).diagonal()
    assert np.allclose(np.asarray(K.sum(axis=1)).ravel(), -m, atol=1e-14)


@pytest.mark.parametrize("mesh", MESHES)
def test_streamline_diffusion_is_negative_laplacian(mesh):
    S = assemble(mesh, StreamlineDiffusion(ROTATION_VELOCITY))
    assert abs(S - S.T).max() < 1e-14
    assert np.abs(np.asarray(S.sum(axis=1))).max() < 1e-13
    rng = np.random.default_rng(0)
    x = rng.standard_normal(mesh.n_nodes)
    assert x @ (S @ x) <= 1e-12


def test_rotated_tensor():
    T = rotated_tensor(np.pi / 6)
    assert np.allclose(T, T.T)
    assert np.allclose(np.sort(np.linalg.eigvalsh(T)), [1.0, 100.0])
    # leading direction (cos, sin) of the angle
    d = np.array([np.cos(np.pi / 6), np.sin(np.pi / 6)])
    assert d @ T @ d == pytest.approx(100.0)


@pytest.mark.parametrize("mesh", MESHES)
def test_stiffness_properties(mesh):
    K = assemble(mesh, AnisotropicStiffness(rotated_tensor(np.pi / 6)))
    assert abs(K - K.T).max() < 1e-12
    assert np.abs(np.asarray(K.sum(axis=1))).max() < 1e-12
    # -K is positive semidefinite; a linear field has energy |T grad| integrated
    x, y = mesh.nodes.T
    u = 2.0 * x - y
    g = np.array([2.0, -1.0])
    area = mesh.n_cells * mesh.h**2
    assert -(u @ (K @ u)) == pytest.approx(area * g @ rotated_tensor(np.pi / 6) @ g, rel=1e-12)


def test_isotropic_stiffness_five_point_like_stencil():
    K = assemble(build_unit_square(4), AnisotropicStiffness(np.eye(2))).toarray()
    # Q1 Laplacian on squares: diagonal -8/3, neighbours 1/3 at an interior node
    i = 6
    assert K[i, i] == pytest.approx(-8.0 / 3.0)
    assert K[i, i + 1] == pytest.approx(1.0 / 3.0)
    assert K[i, i + 6] == pytest.approx(1.0 / 3.0)


def test_boundary_terms_consistency():
    mesh = classify_inflow(build_unit_square(5), CIRCULAR_VELOCITY)
    rng = np.random.default_rng(2)
    u = rng.uniform(0, 1, mesh.n_nodes)
    u_D = lambda x, y: np.cos(x) * y  # noqa: E731
    terms = boundary_terms(mesh, u, u_D, CIRCULAR_VELOCITY)
    # b = b_tilde + sum_j f^b_ij, and the boundary fluxes are antisymmetric
    g = mesh.graph
    assert np.allclose(terms.b, terms.b_tilde + g.scatter(terms.f_b.values), atol=1e-15)
    assert terms.f_b.antisymmetry_defect() < 1e-14


def test_boundary_term_vanishes_at_boundary_data():
    mesh = classify_inflow(build_unit_square(5), CIRCULAR_VELOCITY)
    op = BoundaryOperator(mesh, CIRCULAR_VELOCITY, 0.7)
    assert np.abs(op.b(np.full(mesh.n_nodes, 0.7))).max() < 1e-15
    # total inflow of u_D = 1: int |v.n| over the inflow boundary
    # (y, -x) enters through x=0 (|v.n| = y) and y=1 (|v.n| = x): 1/2 + 1/2
    op1 = BoundaryOperator(mesh, CIRCULAR_VELOCITY, 1.0)
    assert op1.load.sum() == pytest.approx(1.0, rel=1e-13)
    assert sp.issparse(op1.B) and np.all(op1.beta >= 0)


def test_inflow_values_reproduce_constant_data():
    mesh = classify_inflow(build_unit_square(5), CIRCULAR_VELOCITY)
    op = BoundaryOperator(mesh, CIRCULAR_VELOCITY, 0.7)
    assert op.inflow_nodes.size > 0
    assert np.allclose(op.inflow_values, 0.7, rtol=0, atol=1e-15)
    u = np.random.default_rng(4).uniform(size=mesh.n_nodes)
    nodes = op.inflow_nodes
    assert np.allclose(op.b_tilde(u)[nodes], op.beta[nodes] * (op.inflow_values - u[nodes]), atol=1e-15)
