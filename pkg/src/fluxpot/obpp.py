"""Optimal flux potentials: problem setup, feasibility backup and barrier solver.

The control variables are nodal potentials ``x``; the fluxes they generate are
``g_ij = m_ij (x_i - x_j)``, so ``g = L x`` with the graph Laplacian
``L = M_L - M_C``.  Bounds on the corrected state become the two-sided
constraint ``lower <= L x <= upper``, written as ``A x <= b`` with
``A = [L; -L]``.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import linalg
from .limiters import FluxSet, NodalBounds, apply_fluxes
from .mesh import EdgeGraph


class InfeasibleBackup(RuntimeError):
    """The bounds leave no room to distribute the global residual."""


class CFLViolation(UserWarning):
    """The backup state is only bound preserving for a smaller time step."""


class SolverBreakdown(RuntimeError):
    def __init__(self, message, sigma=None, iterate=None):
        super().__init__(message)
        self.sigma = sigma
        self.iterate = iterate


class NotConverged(RuntimeError):
    def __init__(self, message, iterate=None, report=None):
        super().__init__(message)
        self.iterate = iterate
        self.report = report


class Variant(enum.Enum):
    FULLY_DISCRETE = "fully-discrete"
    SEMI_DISCRETE = "semi-discrete"


class PotentialOperators:
    """Matrices shared by all optimization problems on one mesh.

    Nodes listed in ``pinned`` carry a fixed zero potential and are removed
    from the problem; the remaining Laplacian block is then nonsingular.
    The Newton matrix ``H + L W L`` is built directly in LAPACK banded
    storage, which is cheap for lexicographically ordered grids.
    """

    def __init__(self, M_C, M_L, mu: float = 0.01, pinned=None):
        if mu < 0:
            raise ValueError(f"mu must be nonnegative, got {mu}")
        M_C = linalg.as_csr(M_C)
        m_full = np.asarray(M_L.diagonal() if sp.issparse(M_L) else M_L, dtype=float).ravel()
        n_full = M_C.shape[0]
        pinned = np.zeros(0, dtype=np.int64) if pinned is None else np.asarray(pinned, dtype=np.int64)
        free = np.setdiff1d(np.arange(n_full), pinned)
        self.n_full = n_full
        self.free = free
        self.pinned = pinned
        self.singular = pinned.size == 0
        self.mu = float(mu)
        self.M_C_full = M_C
        self.graph = EdgeGraph.from_matrix(M_C)
        self.M_C = linalg.as_csr(M_C[free][:, free])
        self.m = m_full[free]
        self.L = linalg.as_csr(sp.diags(self.m) - self.M_C)
        self.H = linalg.as_csr(self.M_C + self.mu * self.L)
        self._setup_banded()

    @property
    def n(self) -> int:
        return self.free.size

    def _setup_banded(self):
        L = sp.csc_matrix(self.L)
        n = self.n
        # (i, j, k) triples with i, k in the column pattern of j
        j_idx, i_list, k_list, coef = [], [], [], []
        for j in range(n):
            rows = L.indices[L.indptr[j]:L.indptr[j + 1]]
            vals = L.data[L.indptr[j]:L.indptr[j + 1]]
            ii, kk = np.meshgrid(rows, rows, indexing="ij")
            keep = ii >= kk
            vi, vk = np.meshgrid(vals, vals, indexing="ij")
            i_list.append(ii[keep])
            k_list.append(kk[keep])
            coef.append((vi * vk)[keep])
            j_idx.append(np.full(keep.sum(), j))
        i_arr = np.concatenate(i_list)
        k_arr = np.concatenate(k_list)
        self.bandwidth = int(max((i_arr - k_arr).max(initial=0), linalg.bandwidth(self.H)))
        # each band slot of L W L is a fixed linear combination of the weights
        slots, inverse = np.unique((i_arr - k_arr) * n + k_arr, return_inverse=True)
        self._slot_pos = slots
        self._slot_weights = sp.csr_matrix(
            (np.concatenate(coef), (inverse.ravel(), np.concatenate(j_idx))), shape=(slots.size, n)
        )
        self._H_banded = linalg.banded_lower(self.H, self.bandwidth)
        self.weight_cap = 1e13 * self.H.diagonal() / np.maximum(self.L.diagonal(), np.finfo(float).tiny) ** 2

    def newton_matrix(self, w: np.ndarray) -> np.ndarray:
        """Banded storage of ``H + L diag(w) L``."""
        ab = self._H_banded.copy()
        ab.ravel()[self._slot_pos] += self._slot_weights @ w
        return ab

    def hessian_solve(self, rhs: np.ndarray) -> np.ndarray:
        return linalg.solve_banded_spd(self._H_banded, rhs)

    @cached_property
    def _laplacian_factor(self):
        return linalg.NeumannSolver(self.L) if self.singular else linalg.LUFactor(self.L)

    def laplacian_solve(self, rhs: np.ndarray) -> np.ndarray:
        """``L x = rhs``; zero-mean solution when no node is pinned."""
        return self._laplacian_factor.solve(rhs)

    def restrict(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v, dtype=float)[self.free]

    def expand(self, x: np.ndarray) -> np.ndarray:
        full = np.zeros(self.n_full)
        full[self.free] = x
        return full


@dataclass(eq=False)
class QPInstance:
    """``min f_mu(x)`` subject to ``A x <= b`` for the flux potentials ``x``.

    ``scale`` is ``m_i / dt`` (fully discrete) or ``c_i`` (semi-discrete).
    All vectors live on the free nodes of ``ops``.
    """

    ops: PotentialOperators
    target: np.ndarray
    b: np.ndarray
    variant: Variant
    u_n: np.ndarray
    r: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray
    scale: np.ndarray
    dt: float | None = None

    @property
    def n(self) -> int:
        return self.ops.n

    @property
    def mu(self) -> float:
        return self.ops.mu

    @property
    def M_C(self):
        return self.ops.M_C

    @property
    def laplacian(self):
        return self.ops.L

    @property
    def A(self) -> sp.csr_matrix:
        return sp.vstack([self.ops.L, -self.ops.L], format="csr")

    @property
    def upper(self) -> np.ndarray:
        return self.b[: self.n]

    @property
    def lower(self) -> np.ndarray:
        return -self.b[self.n:]

    def constraint_values(self, x: np.ndarray) -> np.ndarray:
        z = self.ops.L @ x
        return np.concatenate([z, -z])

    def slack(self, x: np.ndarray) -> np.ndarray:
        return self.b - self.constraint_values(x)

    def is_feasible(self, x: np.ndarray, tol: float = 0.0) -> bool:
        return bool(self.slack(x).min() >= -tol)

    def corrected_state(self, x: np.ndarray) -> np.ndarray:
        """Corrected state ``u_n + (r + L x) / scale`` on the free nodes."""
        return self.u_n + (self.r + self.ops.L @ x) / self.scale

    def lumped_target_state(self) -> np.ndarray:
        return self.u_n + self.r / self.scale

    # interface used by the barrier solver
    @property
    def n_constraints(self) -> int:
        return 2 * self.n

    def apply_A(self, x: np.ndarray) -> np.ndarray:
        return self.constraint_values(x)

    def apply_AT(self, y: np.ndarray) -> np.ndarray:
        return self.ops.L @ (y[: self.n] - y[self.n:])

    def hessian_apply(self, x: np.ndarray) -> np.ndarray:
        return self.ops.H @ x

    @property
    def linear_term(self) -> np.ndarray:
        return self.ops.M_C @ self.target

    def value(self, x: np.ndarray) -> float:
        e = x - self.target
        return float(0.5 * e @ (self.ops.M_C @ e) + 0.5 * self.mu * x @ (self.ops.L @ x))

    def newton_solve(self, w: np.ndarray, rhs: np.ndarray) -> np.ndarray:
        """Solve ``(H + A^T diag(w) A) dx = rhs``.

        Row weights are capped so that no term exceeds ``1e13`` times the
        Hessian diagonal; beyond that the factorization loses definiteness.
        """
        weights = np.minimum(w[: self.n] + w[self.n:], self.ops.weight_cap)
        return linalg.solve_banded_spd(self.ops.newton_matrix(weights), rhs)

    def unconstrained_minimizer(self) -> np.ndarray:
        return self.ops.hessian_solve(self.linear_term)

    def interior_point(self, x: np.ndarray, margin: float) -> np.ndarray:
        return ensure_interior(self, x, margin=margin)


class DenseQP:
    """``min 1/2 x^T H x - c^T x  s.t.  A x <= b`` with small dense data.

    Shares the solver interface of :class:`QPInstance`; used for generic
    problems and for testing.
    """

    def __init__(self, H, c, A, b):
        self.H = np.atleast_2d(np.asarray(H, dtype=float))
        self.c = np.atleast_1d(np.asarray(c, dtype=float))
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.atleast_1d(np.asarray(b, dtype=float))
        self.n = self.H.shape[0]
        self.n_constraints = self.A.shape[0]
        self.linear_term = self.c

    def apply_A(self, x):
        return self.A @ x

    def apply_AT(self, y):
        return self.A.T @ y

    def hessian_apply(self, x):
        return self.H @ x

    def slack(self, x):
        return self.b - self.A @ x

    def is_feasible(self, x, tol: float = 0.0) -> bool:
        return bool(self.slack(x).min() >= -tol)

    def value(self, x) -> float:
        return float(0.5 * x @ (self.H @ x) - self.c @ x)

    def newton_solve(self, w, rhs):
        factor = scipy.linalg.cho_factor(self.H + self.A.T @ (w[:, None] * self.A))
        return scipy.linalg.cho_solve(factor, rhs)

    def unconstrained_minimizer(self):
        return np.linalg.solve(self.H, self.c)

    def interior_point(self, x, margin: float):
        if np.any(self.slack(x) <= 0.0):
            raise InfeasibleBackup("initial point of a dense QP must be strictly feasible")
        return x


def build_qp(
    variant: Variant,
    M_C,
    M_L,
    u_n: np.ndarray,
    r: np.ndarray,
    bounds: NodalBounds,
    target: np.ndarray,
    mu: float = 0.01,
    dt: float | None = None,
    c: np.ndarray | None = None,
    pinned=None,
    ops: PotentialOperators | None = None,
    min_width: float = 1e-9,
) -> QPInstance:
    """Set up the potential optimization problem for one (pseudo-)time step.

    Fully discrete: ``m_i/dt (u_min - u~_i) <= (L x)_i <= m_i/dt (u_max - u~_i)``
    with ``u~ = u_n + dt r / m``.  Semi-discrete: the same with ``m_i / dt``
    replaced by ``c_i``.  Vector arguments are full-length; pinned entries
    are dropped.

    Constraint boxes narrower than ``min_width * max(scale) * (bound range)``
    (flat stencils, vanishing ``c_i``) are widened symmetrically to that
    width so that a strictly interior point exists.
    """
    if mu < 0:
        raise ValueError(f"mu must be nonnegative, got {mu}")
    if ops is None:
        ops = PotentialOperators(M_C, M_L, mu, pinned)
    elif ops.mu != mu:
        raise ValueError(f"operators were built for mu={ops.mu}, got mu={mu}")
    variant = Variant(variant)
    if variant is Variant.FULLY_DISCRETE:
        if dt is None or dt <= 0:
            raise ValueError("fully discrete problems need dt > 0")
        scale = ops.m / dt
    else:
        if c is None:
            raise ValueError("semi-discrete problems need the coefficients c")
        scale = ops.restrict(c)
    u = ops.restrict(u_n)
    rr = ops.restrict(r)
    lo = ops.restrict(bounds.u_min)
    hi = ops.restrict(bounds.u_max)
    upper = scale * (hi - u) - rr
    lower = scale * (lo - u) - rr
    if min_width > 0:
        span = max(float(np.max(hi) - np.min(lo)), np.finfo(float).eps)
        pad = 0.5 * np.maximum(min_width * float(scale.max()) * span - (upper - lower), 0.0)
        upper, lower = upper + pad, lower - pad
    b = np.concatenate([upper, -lower])
    return QPInstance(ops, ops.restrict(target), b, variant, u, rr, lo, hi, scale, dt)


def objective(qp: QPInstance, x: np.ndarray):
    """Value, gradient and Hessian of ``f_mu``."""
    e = x - qp.target
    Lx = qp.ops.L @ x
    Me = qp.ops.M_C @ e
    value = 0.5 * e @ Me + 0.5 * qp.mu * x @ Lx
    return value, Me + qp.mu * Lx, qp.ops.H


@dataclass
class BackupResult:
    r_backup: np.ndarray
    rho: float
    omega: np.ndarray
    c_backup: float
    udot_backup: np.ndarray
    cfl_ok: bool = True


def backup_potential(qp: QPInstance) -> BackupResult:
    """Feasible potentials from distributing the total residual over the nodes.

    The residual sum ``rho`` is redistributed proportionally to the distance
    from each node to the bound it moves towards.  The resulting state is
    within bounds whenever ``c_backup <= scale_i`` (``dt c_B <= m_i``).
    """
    r = qp.r
    rho = float(r.sum())
    if abs(rho) <= 1e-14 * np.abs(r).sum():
        rho = 0.0
    if rho > 0:
        omega = qp.u_max - qp.u_n
    elif rho < 0:
        omega = qp.u_min - qp.u_n
    else:
        omega = np.zeros_like(r)
    total = omega.sum()
    if rho != 0.0 and total == 0.0:
        raise InfeasibleBackup(f"residual sum {rho:.3e} but every node sits at its bound")
    r_backup = omega * (rho / total) if rho != 0.0 else np.zeros_like(r)
    c_backup = rho / total if rho != 0.0 else 0.0
    rhs = r_backup - r
    if qp.ops.singular:
        rhs = rhs - rhs.mean()  # removes round-off only
    udot = qp.ops.laplacian_solve(rhs)
    cfl_ok = bool(np.all(c_backup <= qp.scale * (1 + 1e-12)))
    if not cfl_ok:
        warnings.warn(
            f"backup state violates the CFL-like condition (c_B = {c_backup:.3e}, "
            f"min scale = {qp.scale.min():.3e})",
            CFLViolation,
            stacklevel=2,
        )
    return BackupResult(r_backup, rho, omega, c_backup, udot, cfl_ok)


def centered_potential(qp: QPInstance) -> np.ndarray:
    """Potentials placing every ``(L x)_i`` at the same relative position in its box."""
    lo, hi = qp.lower, qp.upper
    width = hi - lo
    if np.any(width <= 0.0):
        raise InfeasibleBackup("constraint box with empty interior")
    if qp.ops.singular:
        t = -lo.sum() / width.sum()
        if not 0.0 < t < 1.0:
            raise InfeasibleBackup(f"no strictly feasible point (t = {t:.3e})")
    else:
        t = 0.5
    z = lo + t * width
    if qp.ops.singular:
        z -= z.mean()
    return qp.ops.laplacian_solve(z)


def ensure_interior(qp: QPInstance, x: np.ndarray, anchor: np.ndarray | None = None, margin: float = 1e-6) -> np.ndarray:
    """Blend ``x`` towards a strictly feasible anchor until every slack is at
    least ``margin`` times the width of its constraint box.

    Slacks are affine in the blending weight, so the largest admissible
    weight is computed directly.
    """
    width = np.tile(qp.upper - qp.lower, 2)
    floor = margin * width
    s_x = qp.slack(x)
    if np.all(s_x >= floor):
        return x
    if anchor is None or np.any(qp.slack(anchor) < 2 * floor):
        anchor = centered_potential(qp)
    s_a = qp.slack(anchor)
    if np.any(s_a < floor):
        raise InfeasibleBackup("anchor point is not strictly feasible")
    # theta s_x + (1 - theta) s_a >= floor
    diff = s_x - s_a
    with np.errstate(divide="ignore", invalid="ignore"):
        limits = np.where(diff < 0.0, (floor - s_a) / diff, np.inf)
    theta = float(np.clip(limits.min(), 0.0, 1.0))
    return theta * x + (1.0 - theta) * anchor


def warm_start(qp: QPInstance, correction: FluxSet | np.ndarray | None, backup: BackupResult | None = None,
               margin: float = 1e-6) -> np.ndarray:
    """Potentials reproducing a closed-form flux correction, made strictly feasible.

    ``correction`` holds the flux-corrected AFC fluxes (or their nodal sums);
    the potentials solve ``L x = sum_j g_ij`` with zero mean.
    """
    if correction is None:
        x0 = np.zeros(qp.n)
    else:
        rhs = apply_fluxes(correction) if isinstance(correction, FluxSet) else np.asarray(correction, float)
        x0 = qp.ops.laplacian_solve(qp.ops.restrict(rhs))
    anchor = backup.udot_backup if backup is not None else None
    return ensure_interior(qp, x0, anchor, margin)


def potentials_to_fluxes(M_C, udot: np.ndarray, graph: EdgeGraph | None = None) -> FluxSet:
    """``g_ij = m_ij (udot_i - udot_j)``."""
    graph = graph or EdgeGraph.from_matrix(M_C)
    m = graph.gather(M_C)
    return FluxSet(graph, m * (udot[graph.rows] - udot[graph.cols]))


@dataclass
class BarrierConfig:
    sigma0: float | None = None
    sigma_min: float = 1e-8
    sigma_shrink: float = 0.1
    max_newton_iters: int = 400
    improvement_threshold: float = 0.999
    fraction_to_boundary: float = 0.995
    dual_tol: float = 1e-10
    interior_margin: float = 1e-6
    reject_uphill: bool = True
    # at sigma_min also require |s_i lam_i - sigma| <= centering_tol * sigma
    centering_tol: float = float("inf")


@dataclass
class SolverReport:
    iterations: int = 0
    rejected: int = 0
    sigma: float = float("nan")
    f_init: float = float("nan")
    f_final: float = float("nan")
    max_complementarity: float = float("nan")
    dual_residual: float = float("nan")
    status: str = "barrier"
    trace: list = field(default_factory=list)

    TRACE_COLUMNS = ("iteration", "sigma", "f_mu", "kkt_residual", "min_slack")


def _step_length(v: np.ndarray, dv: np.ndarray, tau: float) -> float:
    neg = dv < 0.0
    if not np.any(neg):
        return 1.0
    return min(1.0, tau * float(np.min(-v[neg] / dv[neg])))


def barrier_newton_solve(qp, init: np.ndarray, cfg: BarrierConfig | None = None):
    """Primal-dual barrier Newton iteration for ``min f  s.t.  A x + s = b, s >= 0``.

    Each Newton system is reduced to ``(H + A^T (lam / s) A) dx = rhs`` by
    eliminating the multiplier step.  ``sigma`` is divided by
    ``cfg.sigma_shrink`` whenever the objective stalls, the iterate is
    centered, or a step would increase the objective.

    Returns the best iterate and a :class:`SolverReport`.
    """
    cfg = cfg or BarrierConfig()
    c = qp.linear_term

    x = qp.interior_point(np.asarray(init, dtype=float), cfg.interior_margin)
    s = qp.b - qp.apply_A(x)
    # round-off can flip the sign on boxes narrower than the accuracy of A x
    s = np.maximum(s, np.finfo(float).eps * np.abs(qp.b) + np.finfo(float).tiny)
    f = f_init = qp.value(x)
    sigma = cfg.sigma0 if cfg.sigma0 is not None else max(1.0, f_init)
    sigma = max(sigma, cfg.sigma_min)
    lam = sigma / s
    report = SolverReport(f_init=f_init)
    best_x, best_f = x.copy(), f_init
    grad_scale = 1.0 + np.abs(c).max(initial=0.0) + np.abs(qp.hessian_apply(x)).max(initial=0.0)
    dual_res = np.inf

    for it in range(1, cfg.max_newton_iters + 1):
        r_dual = qp.hessian_apply(x) - c + qp.apply_AT(lam)
        r_prim = s - sigma / lam
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            w = lam / s
            rhs = -r_dual + qp.apply_AT(w * r_prim)
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(rhs))):
                raise SolverBreakdown("Newton weights overflow", sigma, x)
            try:
                dx = qp.newton_solve(w, rhs)
            except np.linalg.LinAlgError as exc:
                raise SolverBreakdown(f"Newton matrix not positive definite: {exc}", sigma, x) from exc
            if not np.all(np.isfinite(dx)):
                raise SolverBreakdown("non-finite Newton direction", sigma, x)
            Adx = qp.apply_A(dx)
            dlam = w * (Adx - r_prim)
            if not np.all(np.isfinite(dlam)):
                raise SolverBreakdown("non-finite multiplier step", sigma, x)
        ds = -Adx
        alpha = _step_length(s, ds, cfg.fraction_to_boundary)
        beta = _step_length(lam, dlam, cfg.fraction_to_boundary)
        x_new = x + alpha * dx
        f_new = qp.value(x_new)

        if cfg.reject_uphill and f_new > f + 1e-14 * abs(f) and sigma > cfg.sigma_min:
            # the barrier pulls away from the optimum: lower sigma and retry
            report.rejected += 1
            sigma = max(sigma * cfg.sigma_shrink, cfg.sigma_min)
            continue

        improvement = f_new / f if f > 0.0 else (0.0 if f_new < f else 1.0)
        # slacks follow their own update: b - A x loses accuracy on narrow boxes
        x, s, lam, f = x_new, s + alpha * ds, lam + beta * dlam, f_new
        report.iterations = it

        comp = s * lam
        dual_res = float(np.abs(qp.hessian_apply(x) - c + qp.apply_AT(lam)).max())
        centrality = float(np.abs(comp - sigma).max()) / sigma
        report.trace.append((it, sigma, f, max(dual_res / grad_scale, centrality), float(s.min())))
        if f <= best_f:
            best_x, best_f = x.copy(), f

        small_dual = dual_res <= cfg.dual_tol * grad_scale
        if sigma > cfg.sigma_min:
            if improvement >= cfg.improvement_threshold or (small_dual and centrality <= 0.5):
                sigma = max(sigma * cfg.sigma_shrink, cfg.sigma_min)
        elif small_dual and comp.max() <= 10.0 * cfg.sigma_min and centrality <= cfg.centering_tol:
            break
    else:
        report.sigma = sigma
        report.f_final = best_f
        report.status = "not-converged"
        raise NotConverged(f"no convergence in {cfg.max_newton_iters} Newton iterations", best_x, report)

    report.sigma = sigma
    report.max_complementarity = float((s * lam).max(initial=0.0))
    report.dual_residual = dual_res
    if f > best_f:
        x, f = best_x, best_f
    report.f_final = f
    return x, report


def solve_potentials(qp, warm: np.ndarray | None = None, cfg: BarrierConfig | None = None):
    """Optimal potentials; skips the barrier iteration when the unconstrained minimizer is feasible."""
    cfg = cfg or BarrierConfig()
    x_free = qp.unconstrained_minimizer()
    if qp.is_feasible(x_free):
        f = qp.value(x_free)
        return x_free, SolverReport(f_init=f, f_final=f, status="unconstrained", sigma=0.0)
    if warm is None:
        warm = x_free
    return barrier_newton_solve(qp, warm, cfg)
