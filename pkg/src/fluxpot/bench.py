"""Benchmark harness: run one problem/scheme pair, error norms, convergence tables, field output."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np

from . import obpp
from .assembly import ETA, PHI, WEIGHTS, XI
from .limiters import GlobalBox, parse_bounds
from .mesh import Mesh
from .problems import Problem, ProblemKind, make_problem
from .schemes import DiffusionSystem, History, Scheme, SchemeConfig, build_system, run

# resolution of the unlimited Galerkin solution used as diffusion reference
REFERENCE_N = 576


@dataclass
class ProblemSpec:
    problem: ProblemKind | str
    scheme: Scheme | str = Scheme.GALERKIN
    n: int | None = None
    dt: float | None = None
    t_final: float | None = None
    bounds: GlobalBox | str | None = None
    mu: float = 0.01
    sigma_min: float = 1e-8
    dc_sweeps: int | None = 3
    reference_n: int = REFERENCE_N

    def __post_init__(self):
        self.problem = ProblemKind(self.problem)
        self.scheme = Scheme(self.scheme)
        if isinstance(self.bounds, str):
            self.bounds = parse_bounds(self.bounds)
        if self.problem is ProblemKind.ANISOTROPIC_DIFFUSION and self.n is not None and self.n % 9:
            raise ValueError(f"the punched square needs n divisible by 9, got {self.n}")

    def build(self) -> tuple[Problem, SchemeConfig]:
        problem = make_problem(self.problem, self.n, self.dt)
        cfg = SchemeConfig(
            self.scheme,
            dt=problem.dt,
            t_final=problem.t_final if self.t_final is None else self.t_final,
            dc_sweeps=self.dc_sweeps,
            mu=self.mu,
            bounds=self.bounds,
            barrier=obpp.BarrierConfig(sigma_min=self.sigma_min),
        )
        return problem, cfg


@dataclass
class RunReport:
    problem: str
    scheme: str
    n: int
    dt: float
    t_final: float
    steps: int
    time_reached: float
    u_min: float
    u_max: float
    bound_lo: float
    bound_hi: float
    max_bound_violation: float
    max_mass_defect: float
    max_correction_defect: float
    final_residual: float
    l1_error: float | None
    l2_error: float | None
    reference: str
    wall_time: float
    newton_iterations: int
    solver_status: dict = field(default_factory=dict)
    cfl_violations: int = 0

    def range_ok(self, tol: float = 1e-8) -> bool:
        return self.u_min >= self.bound_lo - tol and self.u_max <= self.bound_hi + tol

    def to_json(self) -> str:
        return json.dumps(asdict(self))


def _quadrature_points(mesh: Mesh):
    origin = mesh.nodes[mesh.cells[:, 0]]
    x = origin[:, 0, None] + mesh.h * XI
    y = origin[:, 1, None] + mesh.h * ETA
    return x, y, WEIGHTS * mesh.h**2


def error_norms(u_h: np.ndarray, mesh: Mesh, reference) -> tuple[float, float]:
    """L1 and L2 norms of ``u_h - reference`` by 3x3 Gauss quadrature.

    ``reference`` is either a callable ``f(x, y)`` integrated on the cells of
    ``mesh`` or a pair ``(fine_mesh, u_fine)`` on a uniform refinement of
    ``mesh``, in which case the integration runs over the fine cells.
    """
    if callable(reference):
        x, y, w = _quadrature_points(mesh)
        diff = u_h[mesh.cells] @ PHI.T - reference(x, y)
    else:
        fine, u_fine = reference
        ratio = fine.n / mesh.n
        if fine.n < mesh.n or not float(ratio).is_integer():
            raise ValueError(f"reference mesh n={fine.n} is not a refinement of n={mesh.n}")
        x, y, w = _quadrature_points(fine)
        if fine.n == mesh.n:
            diff = (u_h - u_fine)[fine.cells] @ PHI.T
        else:
            diff = mesh.evaluate(u_h, x, y) - u_fine[fine.cells] @ PHI.T
    return float(np.sum(np.abs(diff) * w)), float(np.sqrt(np.sum(diff**2 * w)))


@lru_cache(maxsize=4)
def galerkin_reference(n: int = REFERENCE_N) -> tuple[Mesh, np.ndarray]:
    """Unlimited Galerkin steady state of the anisotropic diffusion problem at resolution ``n``."""
    problem = make_problem(ProblemKind.ANISOTROPIC_DIFFUSION, n)
    system = build_system(problem)
    assert isinstance(system, DiffusionSystem)
    return problem.mesh, system.steady_solve()


def convergence_rates(errors) -> list[float]:
    """``p = log2(e_h / e_{h/2})`` between consecutive entries (NaN for the first)."""
    errors = list(errors)
    return [math.nan] + [math.log2(a / b) for a, b in zip(errors[:-1], errors[1:])]


def convergence_table(
    problem: ProblemKind | str,
    resolutions,
    scheme: Scheme | str = Scheme.GALERKIN,
    path: str | Path | None = None,
    **spec_kwargs,
) -> list[dict]:
    """Rows ``{inv_h, l1_error, rate}``; written as CSV when ``path`` is given."""
    resolutions = list(resolutions)
    if len(resolutions) < 2:
        raise ValueError("a convergence table needs at least two resolutions")
    errors = []
    for n in resolutions:
        report, _ = run_benchmark(ProblemSpec(problem, scheme, n=n, **spec_kwargs))
        errors.append(report.l1_error)
    rows = [
        {"inv_h": n, "l1_error": e, "rate": p}
        for n, e, p in zip(resolutions, errors, convergence_rates(errors))
    ]
    if path is not None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["inv_h", "l1_error", "rate"])
            writer.writeheader()
            writer.writerows(rows)
    return rows


def _reference_for(problem: Problem, spec: ProblemSpec):
    if problem.kind is ProblemKind.ANISOTROPIC_DIFFUSION:
        if spec.reference_n % problem.mesh.n:
            return None, "none"
        return galerkin_reference(spec.reference_n), f"galerkin n={spec.reference_n}"
    if problem.kind is ProblemKind.SOLID_BODY_ROTATION:
        return problem.exact, "initial data (exact after full revolutions)"
    return problem.exact, "exact steady profile"


def summarize(spec: ProblemSpec, problem: Problem, cfg: SchemeConfig, u: np.ndarray,
              history: History, wall: float) -> RunReport:
    statuses = {}
    for s in history.column("solver_status"):
        if s:
            statuses[str(s)] = statuses.get(str(s), 0) + 1
    reference, label = _reference_for(problem, spec)
    l1 = l2 = None
    if reference is not None:
        l1, l2 = error_norms(u, problem.mesh, reference)
    box = cfg.bounds if isinstance(cfg.bounds, GlobalBox) else problem.box
    n_steps = len(history)
    return RunReport(
        problem=problem.kind.value,
        scheme=cfg.scheme.value,
        n=problem.mesh.n,
        dt=cfg.dt,
        t_final=cfg.t_final,
        steps=n_steps,
        time_reached=float(history.steps[-1].time) if n_steps else 0.0,
        u_min=float(u.min()),
        u_max=float(u.max()),
        bound_lo=box.lo,
        bound_hi=box.hi,
        max_bound_violation=float(history.column("bound_violation").max(initial=0.0)),
        max_mass_defect=float(max((s.mass_defect for s in history.steps), default=0.0)),
        max_correction_defect=float(max((s.correction_defect for s in history.steps), default=0.0)),
        final_residual=float(history.steps[-1].residual_norm) if n_steps else math.nan,
        l1_error=l1,
        l2_error=l2,
        reference=label,
        wall_time=wall,
        newton_iterations=int(history.column("newton_iterations").sum()) if n_steps else 0,
        solver_status=statuses,
        cfl_violations=int(sum(not s.cfl_ok for s in history.steps)),
    )


def run_benchmark(spec: ProblemSpec, callback: Callable | None = None) -> tuple[RunReport, dict]:
    """Run one benchmark; returns the report and ``{"u", "mesh", "history"}``."""
    problem, cfg = spec.build()
    start = time.perf_counter()
    u, history = run(problem, cfg, callback=callback)
    wall = time.perf_counter() - start
    report = summarize(spec, problem, cfg, u, history, wall)
    return report, {"u": u, "mesh": problem.mesh, "history": history, "problem": problem}


def write_field(u: np.ndarray, mesh: Mesh, path: str | Path, fmt: str | None = None) -> Path:
    """Nodal field as legacy ASCII VTK (quad cells) or CSV rows ``x,y,u``."""
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    try:
        if fmt == "csv":
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["x", "y", "u"])
                for (x, y), val in zip(mesh.nodes, u):
                    writer.writerow([repr(float(x)), repr(float(y)), repr(float(val))])
        elif fmt == "vtk":
            lines = [
                "# vtk DataFile Version 3.0",
                "fluxpot field",
                "ASCII",
                "DATASET UNSTRUCTURED_GRID",
                f"POINTS {mesh.n_nodes} double",
            ]
            lines += [f"{x!r} {y!r} 0.0" for x, y in mesh.nodes.tolist()]
            lines.append(f"CELLS {mesh.n_cells} {5 * mesh.n_cells}")
            lines += ["4 " + " ".join(map(str, c)) for c in mesh.cells.tolist()]
            lines.append(f"CELL_TYPES {mesh.n_cells}")
            lines += ["9"] * mesh.n_cells
            lines += [f"POINT_DATA {mesh.n_nodes}", "SCALARS u double 1", "LOOKUP_TABLE default"]
            lines += [repr(v) for v in np.asarray(u, dtype=float).tolist()]
            path.write_text("\n".join(lines) + "\n")
        else:
            raise ValueError(f"unknown field format {fmt!r}")
    except OSError as exc:
        raise OSError(f"cannot write field to {path}: {exc}") from exc
    return path


def read_field_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, :2], data[:, 2]


def write_history(history: History, path: str | Path) -> Path:
    rows = history.rows()
    path = Path(path)
    with open(path, "w", newline="") as fh:
        if rows:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    return path
