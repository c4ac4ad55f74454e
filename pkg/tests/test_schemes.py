import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluxpot import linalg, schemes
from fluxpot.assembly import ConsistentMass, assemble, lump
from fluxpot.limiters import GlobalBox
from fluxpot.mesh import build_unit_square, classify_inflow
from fluxpot.problems import (
    CIRCULAR_VELOCITY, ROTATION_VELOCITY, ProblemKind, anisotropic_diffusion, make_problem,
    solid_body_rotation, steady_advection,
)
from fluxpot.schemes import (
    AdvectionSystem, Scheme, SchemeConfig, deferred_correction_solve, lw_pseudo_step, ttg4a_step,
)

ALL_SCHEMES = list(Scheme)
BP_SCHEMES = [s for s in Scheme if s.bound_preserving]


def rotation_system(n=8, inflow=None):
    mesh = classify_inflow(build_unit_square(n), ROTATION_VELOCITY)
    return AdvectionSystem(mesh, ROTATION_VELOCITY, inflow or (lambda x, y: np.zeros_like(x)))


def test_scheme_config_validation():
    with pytest.raises(ValueError):
        SchemeConfig(Scheme.FCT, dt=0.0)
    with pytest.raises(ValueError):
        SchemeConfig(Scheme.FCT, dc_sweeps=0)
    with pytest.raises(ValueError):
        SchemeConfig("upwind")


def test_courant_number_of_steady_run():
    # h = 1/64, dt = 1e-3, |v| = sqrt(2) over the unit square
    assert schemes.courant_number(1e-3, 1 / 64, np.sqrt(2)) == pytest.approx(0.0905, abs=1e-4)


def test_deferred_correction_first_sweep_is_lumped():
    mesh = build_unit_square(6)
    M_C = assemble(mesh, ConsistentMass())
    m = lump(M_C).diagonal()
    rng = np.random.default_rng(0)
    u_n, rhs = rng.normal(size=(2, mesh.n_nodes))
    assert np.allclose(deferred_correction_solve(M_C, m, rhs, u_n, 1), u_n + rhs / m)
    with pytest.raises(ValueError):
        deferred_correction_solve(M_C, m, rhs, u_n, 0)


def test_deferred_correction_contracts_geometrically():
    mesh = build_unit_square(8)
    M_C = assemble(mesh, ConsistentMass())
    m = lump(M_C)
    rng = np.random.default_rng(1)
    u_n, rhs = rng.normal(size=(2, mesh.n_nodes))
    exact = u_n + linalg.lu_solve(M_C, rhs)
    errors = [np.abs(deferred_correction_solve(M_C, m, rhs, u_n, k) - exact).max() for k in range(1, 12)]
    ratios = np.array(errors[1:]) / np.array(errors[:-1])
    # I - M_L^{-1} M_C has spectral radius 8/9 on Q1 meshes, attained at the corner rows
    M = M_C.toarray()
    radius = np.abs(np.linalg.eigvals(np.eye(len(M)) - M / M.sum(axis=1)[:, None])).max()
    assert radius == pytest.approx(8 / 9, abs=1e-12)
    assert np.all(ratios < radius + 1e-3)
    assert np.abs(deferred_correction_solve(M_C, m, rhs, u_n, 200) - exact).max() < 1e-8 * np.abs(exact).max()


def dense_ttg_galerkin(system, u, dt, steps):
    """Dense reimplementation of the unlimited two-stage Taylor-Galerkin scheme."""
    M_C = system.M_C.toarray()
    K = system.K.toarray()
    S = system.S.toarray()
    B = system.boundary.B.toarray()
    load = system.boundary.load
    out = []
    for _ in range(steps):
        b = load - B @ u
        u13 = u + np.linalg.solve(M_C, dt / 3 * (K @ u + b) + dt**2 / 12 * (S @ u))
        u = u + np.linalg.solve(M_C, dt * (K @ u + b) + dt**2 / 2 * (S @ u13))
        out.append(u.copy())
    return out


def test_galerkin_matches_dense_reimplementation():
    system = rotation_system(4, inflow=lambda x, y: 0.5 + 0 * x)
    cfg = SchemeConfig(Scheme.GALERKIN, dt=0.01, dc_sweeps=None)
    rng = np.random.default_rng(2)
    u = rng.uniform(0, 1, system.mesh.n_nodes)
    ref = dense_ttg_galerkin(system, u.copy(), cfg.dt, 10)
    for k in range(10):
        u, _ = ttg4a_step(system, u, cfg.dt, cfg)
        assert np.abs(u - ref[k]).max() <= 1e-12


@pytest.mark.parametrize("scheme", ALL_SCHEMES)
def test_constancy_preserved(scheme):
    system = rotation_system(8, inflow=lambda x, y: np.full_like(x, 0.7))
    cfg = SchemeConfig(scheme, dt=2e-3)
    u = np.full(system.mesh.n_nodes, 0.7)
    for k in range(3):
        u, info = ttg4a_step(system, u, cfg.dt, cfg, step=k)
        assert np.abs(u - 0.7).max() < 1e-14


@pytest.mark.parametrize("scheme", ALL_SCHEMES)
def test_transient_conservation_and_bounds(scheme):
    problem = solid_body_rotation(16, dt=5e-3)
    cfg = SchemeConfig(scheme, dt=5e-3, t_final=0.1)
    u, history = schemes.run(problem, cfg)
    assert len(history) == 20
    assert max(s.mass_defect for s in history.steps) < 1e-10
    assert max(s.correction_defect for s in history.steps) < 1e-12
    if scheme.bound_preserving:
        assert u.min() >= -1e-8 and u.max() <= 1 + 1e-8


def test_mcl_local_bounds_with_inflow_data():
    # inflow data 1 outside the range of a zero state: boundary nodes may rise towards it
    system = rotation_system(16, inflow=lambda x, y: np.ones_like(x))
    cfg = SchemeConfig(Scheme.MCL, dt=2e-3)
    u = np.zeros(system.mesh.n_nodes)
    for k in range(20):
        u_next, info = ttg4a_step(system, u, cfg.dt, cfg, step=k)
        assert info.bound_violation <= 1e-14
        u = u_next
    assert u.min() >= -1e-15 and u.max() <= 1.0 + 1e-15
    assert u[system.boundary.inflow_nodes].max() > 0.0


def test_transient_final_step_is_shortened():
    problem = solid_body_rotation(8, dt=0.03)
    u, history = schemes.run(problem, SchemeConfig(Scheme.FCT, dt=0.03, t_final=0.1))
    assert len(history) == 4
    assert history.steps[-1].dt == pytest.approx(0.01)
    assert history.steps[-1].time == pytest.approx(0.1)


def test_obpp_step_bounds_small_mesh():
    problem = solid_body_rotation(8, dt=1e-2)
    system = schemes.build_system(problem)
    cfg = SchemeConfig(Scheme.OBPP_FULLY_DISCRETE, dt=1e-2)
    u_next, info = ttg4a_step(system, problem.initial_state(), cfg.dt, cfg)
    assert u_next.min() >= -1e-9 and u_next.max() <= 1 + 1e-9
    assert info.f_final <= info.f_init + 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.2, 1.0))
def test_semi_discrete_forward_euler_is_convex_combination(seed, courant):
    mesh = classify_inflow(build_unit_square(6), CIRCULAR_VELOCITY)
    system = AdvectionSystem(mesh, CIRCULAR_VELOCITY, lambda x, y: np.zeros_like(x))
    rng = np.random.default_rng(seed)
    u = rng.uniform(0, 1, mesh.n_nodes)
    # dt c_i <= m_i with c_i = sum_j d_ij
    dt = courant * np.min(system.m / system.c_mcl)
    cfg = SchemeConfig(Scheme.OBPP_SEMI_DISCRETE, dt=dt)
    u_next, info = lw_pseudo_step(system, u, dt, cfg)
    assert u_next.min() >= -1e-9 and u_next.max() <= 1 + 1e-9


@pytest.mark.parametrize("scheme", BP_SCHEMES)
def test_steady_pseudo_steps_bounded(scheme):
    problem = steady_advection(16, dt=4e-3)
    u, history = schemes.run(problem, SchemeConfig(scheme, dt=4e-3, t_final=0.2))
    assert u.min() >= -1e-8 and u.max() <= 1 + 1e-8
    assert history.steps[-1].residual_norm < history.steps[0].residual_norm


def test_already_steady_state_stops_immediately():
    problem = steady_advection(8)
    system = schemes.build_system(problem)
    u0 = np.zeros(problem.mesh.n_nodes)
    # with zero inflow data the zero state is the steady solution
    zero_problem = steady_advection(8)
    object.__setattr__(zero_problem, "inflow", lambda x, y: np.zeros_like(x))
    system = schemes.build_system(zero_problem)
    u, history = schemes.march_to_steady(zero_problem, SchemeConfig(Scheme.MCL, t_final=1.0), system, u0=u0)
    assert len(history) == 1
    assert np.array_equal(u, u0)


def test_diffusion_rejects_closed_form_limiters():
    problem = anisotropic_diffusion(9)
    for scheme in (Scheme.FCT, Scheme.MCL):
        with pytest.raises(ValueError):
            schemes.run(problem, SchemeConfig(scheme, dt=1e-6, t_final=1e-5))


def test_diffusion_explicit_march_diverges_for_large_step():
    problem = anisotropic_diffusion(9)
    with pytest.raises(schemes.Diverged):
        schemes.run(problem, SchemeConfig(Scheme.GALERKIN, dt=1e-3, t_final=1.0))


def test_diffusion_obpp_respects_box_and_dirichlet_data():
    problem = anisotropic_diffusion(9, dt=1e-5)
    cfg = SchemeConfig(Scheme.OBPP_FULLY_DISCRETE, dt=1e-5, t_final=2e-4)
    u, history = schemes.run(problem, cfg)
    assert u.min() >= -1 - 1e-9 and u.max() <= 1 + 1e-9
    assert np.array_equal(u[problem.dirichlet_nodes], problem.dirichlet_values)


def test_diffusion_galerkin_steady_state_undershoots():
    problem = anisotropic_diffusion(18)
    system = schemes.build_system(problem)
    u = system.steady_solve()
    assert u.min() < -1.0
    assert np.abs(system.residual(u)).max() < 1e-10


def test_make_problem_defaults():
    assert make_problem("solid-body-rotation").mesh.n == 128
    assert make_problem(ProblemKind.STEADY_ADVECTION).t_final == 9.5
    p = make_problem("anisotropic-diffusion")
    assert p.mesh.n == 18 and p.dt == 1e-6 and p.box == GlobalBox(-1.0, 1.0)
    with pytest.raises(ValueError):
        make_problem("anisotropic-diffusion", n=20)


def test_rotation_initial_data_shapes():
    from fluxpot.problems import circular_profile, rotation_initial

    x = np.array([0.25, 0.5, 0.5, 0.56, 0.9])
    y = np.array([0.5, 0.25, 0.75, 0.8, 0.9])
    u = rotation_initial(x, y)
    assert u[0] == pytest.approx(0.5)  # hump peak 0.25 + 0.25
    assert u[1] == pytest.approx(1.0)  # cone tip
    assert u[2] == 0.0  # inside the slot
    assert u[3] == 1.0 and u[4] == 0.0
    r = np.array([0.1, 0.3, 0.5, 0.7, 0.9])
    assert np.allclose(circular_profile(r, 0 * r), [0, 1, 0, 1, 0])
