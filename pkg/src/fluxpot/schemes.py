"""Time stepping: TTG-4A for transient advection, lumped Lax-Wendroff and
forward-Euler pseudo-time marching for steady problems, each combined with
one of the flux-correction strategies.

Every step is written as ``m_i (u_next_i - u_i) / dt = R_i + sum_j g_ij`` where
``R`` is the target residual and ``g`` the (limited or optimal) correction
fluxes.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from . import linalg, obpp
from .assembly import (
    Advection, AnisotropicStiffness, BoundaryOperator, ConsistentMass,
    StreamlineDiffusion, assemble, lump,
)
from .limiters import (
    LOCAL, FluxSet, GlobalBox, apply_fluxes, artificial_diffusion, fct_bounds,
    fct_limit, local_bounds, mcl_diffusion, mcl_limit,
)
from .problems import Problem, ProblemKind


class Scheme(enum.Enum):
    GALERKIN = "galerkin"
    FCT = "fct"
    MCL = "mcl"
    OBPP_FULLY_DISCRETE = "obpp-fd"
    OBPP_SEMI_DISCRETE = "obpp-sd"

    @property
    def is_obpp(self) -> bool:
        return self in (Scheme.OBPP_FULLY_DISCRETE, Scheme.OBPP_SEMI_DISCRETE)

    @property
    def bound_preserving(self) -> bool:
        return self is not Scheme.GALERKIN


class Diverged(RuntimeError):
    pass


@dataclass
class SchemeConfig:
    """Run settings.  ``dc_sweeps=None`` replaces deferred correction by exact mass solves.

    ``bounds=None`` selects the default per scheme: the problem's global box
    for OB-PP, stencil bounds for FCT and MCL.
    """

    scheme: Scheme = Scheme.GALERKIN
    dt: float = 1e-3
    t_final: float = 1.0
    dc_sweeps: int | None = 3
    steady_residual_tol: float = 1e-12
    mu: float = 0.01
    bounds: GlobalBox | str | None = None
    barrier: obpp.BarrierConfig = field(default_factory=obpp.BarrierConfig)
    divergence_factor: float = 1e6

    def __post_init__(self):
        self.scheme = Scheme(self.scheme)
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_final < 0:
            raise ValueError(f"t_final must be nonnegative, got {self.t_final}")
        if self.dc_sweeps is not None and self.dc_sweeps < 1:
            raise ValueError("at least one deferred correction sweep is required")


def courant_number(dt: float, h: float, v_max: float) -> float:
    return dt * v_max / h


def deferred_correction_solve(M_C, M_L, rhs: np.ndarray, u_n: np.ndarray, sweeps: int) -> np.ndarray:
    """Approximate ``M_C u = M_C u_n + rhs`` by lumped-mass sweeps.

    ``u^(0) = u_n + rhs / m`` and
    ``M_L u^(k) = M_L u_n + rhs - (M_C - M_L)(u^(k-1) - u_n)``.
    ``sweeps`` counts lumped solves including the initial guess, so
    ``sweeps=1`` returns ``u^(0)``.
    """
    if sweeps < 1:
        raise ValueError("sweeps must be >= 1")
    m = np.asarray(M_L.diagonal() if sp.issparse(M_L) else M_L, dtype=float).ravel()
    u = u_n + rhs / m
    for _ in range(sweeps - 1):
        du = u - u_n
        u = u_n + (rhs - (M_C @ du - m * du)) / m
    return u


@dataclass
class StepInfo:
    step: int = 0
    time: float = 0.0
    dt: float = 0.0
    u_min: float = float("nan")
    u_max: float = float("nan")
    residual_norm: float = float("nan")
    mass_change: float = 0.0
    boundary_term: float = 0.0
    mass_scale: float = 1.0
    correction_sum: float = 0.0
    correction_scale: float = 0.0
    bound_violation: float = 0.0
    f_warm: float = float("nan")
    f_init: float = float("nan")
    f_final: float = float("nan")
    newton_iterations: int = 0
    solver_status: str = ""
    cfl_ok: bool = True

    @property
    def mass_defect(self) -> float:
        """Mass balance error relative to the total mass."""
        return abs(self.mass_change - self.boundary_term) / self.mass_scale

    @property
    def correction_defect(self) -> float:
        """``|sum_i g_i|`` relative to ``sum |g_ij|``."""
        if self.correction_scale == 0.0:
            return 0.0
        return self.correction_sum / self.correction_scale


class AdvectionSystem:
    """Matrices of a Q1 advection problem with weak inflow boundary conditions."""

    def __init__(self, mesh, velocity, inflow, mu: float = 0.01):
        self.mesh = mesh
        self.graph = mesh.graph
        self.velocity = velocity
        self.mu = mu
        self.M_C = assemble(mesh, ConsistentMass())
        self.m = lump(self.M_C).diagonal()
        self.K = assemble(mesh, Advection(velocity))
        self.S = assemble(mesh, StreamlineDiffusion(velocity))
        self.D = artificial_diffusion(self.K)
        g = self.graph
        self.m_e = g.gather(self.M_C)
        self.k_e = g.gather(self.K)
        self.s_e = g.gather(self.S)
        self.d_e = g.gather(self.D)
        self.d_mcl = mcl_diffusion(self.K)
        self.c_mcl = g.scatter(self.d_e)
        self.boundary = BoundaryOperator(mesh, velocity, inflow)

    @cached_property
    def mass_factor(self) -> linalg.LUFactor:
        return linalg.LUFactor(self.M_C)

    @cached_property
    def potentials(self) -> obpp.PotentialOperators:
        return obpp.PotentialOperators(self.M_C, self.m, self.mu)

    def mass_solve(self, rhs: np.ndarray, u_n: np.ndarray, sweeps: int | None) -> np.ndarray:
        """``M_C u = M_C u_n + rhs``."""
        if sweeps is None:
            return u_n + self.mass_factor.solve(rhs)
        return deferred_correction_solve(self.M_C, self.m, rhs, u_n, sweeps)


class DiffusionSystem:
    """Stiffness and mass matrices with strongly imposed Dirichlet nodes."""

    def __init__(self, mesh, tensor, dirichlet_nodes, dirichlet_values, mu: float = 0.01):
        self.mesh = mesh
        self.graph = mesh.graph
        self.mu = mu
        self.M_C = assemble(mesh, ConsistentMass())
        self.m = lump(self.M_C).diagonal()
        self.K = assemble(mesh, AnisotropicStiffness(tensor))
        self.k_e = self.graph.gather(self.K)
        self.c_abs = self.graph.scatter(np.abs(self.k_e))
        self.pinned = np.asarray(dirichlet_nodes, dtype=np.int64)
        self.pinned_values = np.asarray(dirichlet_values, dtype=float)
        self.free = np.setdiff1d(np.arange(mesh.n_nodes), self.pinned)

    @cached_property
    def potentials(self) -> obpp.PotentialOperators:
        return obpp.PotentialOperators(self.M_C, self.m, self.mu, pinned=self.pinned)

    def residual(self, u: np.ndarray) -> np.ndarray:
        r = self.K @ u
        r[self.pinned] = 0.0
        return r

    def steady_solve(self) -> np.ndarray:
        """Unlimited Galerkin steady state by a direct solve."""
        u = np.zeros(self.mesh.n_nodes)
        u[self.pinned] = self.pinned_values
        free = self.free
        K_ff = self.K[free][:, free]
        u[free] = linalg.lu_solve(K_ff, -(self.K[free][:, self.pinned] @ self.pinned_values))
        return u


def build_system(problem: Problem, mu: float = 0.01):
    if problem.kind is ProblemKind.ANISOTROPIC_DIFFUSION:
        return DiffusionSystem(problem.mesh, problem.tensor, problem.dirichlet_nodes, problem.dirichlet_values, mu)
    return AdvectionSystem(problem.mesh, problem.velocity, problem.inflow, mu)


def _finish(system, u, u_next, R, g: FluxSet, dt, info: StepInfo, bounds=None) -> StepInfo:
    m = system.m
    gi = apply_fluxes(g)
    info.dt = dt
    info.u_min = float(u_next.min())
    info.u_max = float(u_next.max())
    info.residual_norm = float(np.sqrt(np.sum(m * ((u_next - u) / dt) ** 2)))
    info.mass_change = float(np.sum(m * (u_next - u)))
    info.boundary_term = float(dt * R.sum())
    info.mass_scale = float(max(np.sum(m * np.abs(u)), np.sum(m * np.abs(u_next)), np.finfo(float).tiny))
    info.correction_sum = float(abs(gi.sum()))
    info.correction_scale = float(np.abs(g.values).sum())
    if bounds is not None:
        info.bound_violation = bounds.violation(u_next)
    return info


def _bounds_for(cfg: SchemeConfig, default_box: GlobalBox, u, graph):
    mode = cfg.bounds
    if mode is None:
        mode = default_box if cfg.scheme.is_obpp else LOCAL
    return local_bounds(u, graph, mode)


def _solve_obpp(qp, warm_rhs, cfg: SchemeConfig, info: StepInfo):
    """Backup, warm start and barrier solve; fills ``info`` and returns the potentials."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", obpp.CFLViolation)
        backup = obpp.backup_potential(qp)
    for w in caught:
        if not issubclass(w.category, obpp.CFLViolation):
            warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
    info.cfl_ok = backup.cfl_ok
    if warm_rhs is None:
        x0 = np.zeros(qp.n)
    else:
        x0 = qp.ops.laplacian_solve(qp.ops.restrict(warm_rhs))
    info.f_warm = qp.value(x0)
    anchor = backup.udot_backup if backup.cfl_ok else None
    warm = obpp.ensure_interior(qp, x0, anchor, cfg.barrier.interior_margin)
    try:
        x, report = obpp.solve_potentials(qp, warm, cfg.barrier)
        info.solver_status = report.status
    except obpp.NotConverged as exc:
        x, report = exc.iterate, exc.report
        info.solver_status = "not-converged"
    except obpp.SolverBreakdown:
        # the repaired warm start is feasible, so the step stays bound preserving
        x = warm
        f = qp.value(warm)
        report = obpp.SolverReport(f_init=f, f_final=f, status="breakdown")
        info.solver_status = "breakdown"
    info.f_init = report.f_init if report.status != "unconstrained" else qp.value(warm)
    info.f_final = report.f_final
    info.newton_iterations = report.iterations
    return qp.ops.expand(x), report


def _advection_correction(system: AdvectionSystem, u, u_aux, R, target, dt, cfg: SchemeConfig, info: StepInfo):
    """Correction fluxes shared by the TTG-4A and Lax-Wendroff steps.

    ``u_aux`` is the state the streamline term acts on and ``target`` the
    target potential (``None`` meaning zero).
    """
    g = system.graph
    i, j = g.rows, g.cols
    fb = system.boundary.fluxes(u).values
    low_part = system.d_e * (u[j] - u[i]) - 0.5 * dt * system.s_e * (u_aux[j] - u_aux[i]) - fb
    target_f = np.zeros(g.n_edges) if target is None else system.m_e * (target[i] - target[j])
    raw = FluxSet(g, target_f - low_part)
    scheme = cfg.scheme
    box = cfg.bounds if isinstance(cfg.bounds, GlobalBox) else None

    if scheme is Scheme.GALERKIN:
        return FluxSet(g, target_f), None
    if scheme is Scheme.MCL:
        bounds = _bounds_for(cfg, None, u, g)
        if box is None:
            # the weak inflow term pulls boundary nodes towards the data
            bounds = bounds.including(system.boundary.inflow_nodes, system.boundary.inflow_values)
        low_part = low_part + (system.d_mcl - system.d_e) * (u[j] - u[i])
        raw = FluxSet(g, target_f - low_part)
        limited = mcl_limit(raw, u, system.d_mcl, bounds, K=system.k_e)
        return FluxSet(g, limited.values + low_part), bounds

    u_low = u + dt / system.m * (R + g.scatter(low_part))
    fct_b = local_bounds(u, g, box) if box is not None else fct_bounds(u, u_low, g)
    fct = fct_limit(raw, u_low, fct_b, system.m, dt)
    if scheme is Scheme.FCT:
        return FluxSet(g, fct.values + low_part), fct_b

    bounds = _bounds_for(cfg, GlobalBox(0.0, 1.0), u, g)
    variant, extra = (
        (obpp.Variant.FULLY_DISCRETE, {"dt": dt})
        if scheme is Scheme.OBPP_FULLY_DISCRETE
        else (obpp.Variant.SEMI_DISCRETE, {"c": system.c_mcl})
    )
    qp = obpp.build_qp(
        variant, system.M_C, system.m, u, R, bounds,
        np.zeros(g.n) if target is None else target, mu=cfg.mu, ops=system.potentials, **extra,
    )
    # warm start: L x0 = D u + sum_j f*_ij with Zalesak fluxes
    warm_rhs = g.scatter(fct.values + system.d_e * (u[j] - u[i]))
    x, _ = _solve_obpp(qp, warm_rhs, cfg, info)
    return FluxSet(g, system.m_e * (x[i] - x[j])), bounds


def ttg4a_step(system: AdvectionSystem, u: np.ndarray, dt: float, cfg: SchemeConfig, step: int = 0):
    """One two-stage Taylor-Galerkin step with flux correction; returns ``(u_next, StepInfo)``."""
    b = system.boundary.b(u)
    Ku_b = system.K @ u + b
    u13 = system.mass_solve(dt / 3.0 * Ku_b + dt * dt / 12.0 * (system.S @ u), u, cfg.dc_sweeps)
    R = Ku_b + 0.5 * dt * (system.S @ u13)
    target = system.mass_factor.solve(R)
    info = StepInfo(step=step)
    g, bounds = _advection_correction(system, u, u13, R, target, dt, cfg, info)
    u_next = u + dt / system.m * (R + apply_fluxes(g))
    return u_next, _finish(system, u, u_next, R, g, dt, info, bounds)


def lw_pseudo_step(system: AdvectionSystem, u: np.ndarray, dt: float, cfg: SchemeConfig, step: int = 0):
    """One lumped Lax-Wendroff pseudo-time step towards the steady state (target potential 0)."""
    R = system.K @ u + system.boundary.b(u) + 0.5 * dt * (system.S @ u)
    info = StepInfo(step=step)
    g, bounds = _advection_correction(system, u, u, R, None, dt, cfg, info)
    u_next = u + dt / system.m * (R + apply_fluxes(g))
    return u_next, _finish(system, u, u_next, R, g, dt, info, bounds)


def diffusion_pseudo_step(system: DiffusionSystem, u: np.ndarray, dt: float, cfg: SchemeConfig, step: int = 0):
    """Forward-Euler pseudo-time step ``m_i (u_next_i - u_i) / dt = r_i + g_i`` with frozen Dirichlet nodes."""
    scheme = cfg.scheme
    if scheme in (Scheme.FCT, Scheme.MCL):
        raise ValueError(f"{scheme.value} limiting is only defined for advection problems")
    g = system.graph
    R = system.residual(u)
    info = StepInfo(step=step)
    bounds = None
    if scheme is Scheme.GALERKIN:
        flux = FluxSet.zeros(g)
    else:
        bounds = _bounds_for(cfg, GlobalBox(-1.0, 1.0), u, g)
        variant, extra = (
            (obpp.Variant.FULLY_DISCRETE, {"dt": dt})
            if scheme is Scheme.OBPP_FULLY_DISCRETE
            else (obpp.Variant.SEMI_DISCRETE, {"c": system.c_abs})
        )
        qp = obpp.build_qp(
            variant, system.M_C, system.m, u, R, bounds, np.zeros(g.n), mu=cfg.mu,
            ops=system.potentials, **extra,
        )
        x, _ = _solve_obpp(qp, None, cfg, info)
        flux = FluxSet(g, system.graph.gather(system.M_C) * (x[g.rows] - x[g.cols]))
    gi = apply_fluxes(flux)
    gi[system.pinned] = 0.0
    u_next = u + dt / system.m * (R + gi)
    return u_next, _finish(system, u, u_next, R, flux, dt, info, bounds)


@dataclass
class History:
    steps: list = field(default_factory=list)

    def append(self, info: StepInfo):
        self.steps.append(info)

    def __len__(self):
        return len(self.steps)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.steps])

    def rows(self) -> list[dict]:
        return [asdict(s) for s in self.steps]


def _step_fn(problem: Problem):
    if problem.kind is ProblemKind.SOLID_BODY_ROTATION:
        return ttg4a_step
    if problem.kind is ProblemKind.STEADY_ADVECTION:
        return lw_pseudo_step
    return diffusion_pseudo_step


def _n_steps(t_final: float, dt: float) -> int:
    return max(0, math.ceil(t_final / dt - 1e-9))


def run_transient(problem: Problem, cfg: SchemeConfig, system=None, callback=None):
    """March to ``cfg.t_final`` exactly (the last step is shortened if needed)."""
    system = system or build_system(problem, cfg.mu)
    u = problem.initial_state()
    history = History()
    t = 0.0
    step_fn = _step_fn(problem)
    for k in range(_n_steps(cfg.t_final, cfg.dt)):
        dt = min(cfg.dt, cfg.t_final - t)
        u, info = step_fn(system, u, dt, cfg, step=k + 1)
        t = (k + 1) * cfg.dt if dt == cfg.dt else cfg.t_final
        info.time = t
        history.append(info)
        if callback is not None:
            callback(u, info)
        if not np.all(np.isfinite(u)):
            raise Diverged(f"non-finite state at step {k + 1}")
    return u, history


def march_to_steady(problem: Problem, cfg: SchemeConfig, system=None, u0=None, callback=None):
    """Pseudo-time marching until ``t >= t_final`` or the residual drops below the tolerance."""
    system = system or build_system(problem, cfg.mu)
    u = problem.initial_state() if u0 is None else np.array(u0, dtype=float)
    history = History()
    step_fn = _step_fn(problem)
    first = None
    for k in range(_n_steps(cfg.t_final, cfg.dt)):
        u_next, info = step_fn(system, u, cfg.dt, cfg, step=k + 1)
        info.time = (k + 1) * cfg.dt
        res = info.residual_norm
        if first is None:
            first = res
            if res <= cfg.steady_residual_tol:
                # already steady: keep the initial state
                history.append(info)
                break
        if not np.isfinite(res) or res > cfg.divergence_factor * max(first, np.finfo(float).tiny):
            raise Diverged(f"pseudo-time residual {res:.3e} at step {k + 1} (initial {first:.3e})")
        u = u_next
        history.append(info)
        if callback is not None:
            callback(u, info)
        if res <= cfg.steady_residual_tol:
            break
    return u, history


def run(problem: Problem, cfg: SchemeConfig, system=None, callback=None):
    if problem.steady:
        return march_to_steady(problem, cfg, system, callback=callback)
    return run_transient(problem, cfg, system, callback=callback)
