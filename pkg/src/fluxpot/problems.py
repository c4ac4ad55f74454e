"""Benchmark problems: solid body rotation, steady circular advection, anisotropic diffusion."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .assembly import LinearVelocity, rotated_tensor
from .limiters import GlobalBox
from .mesh import BoundaryTag, Mesh, build_punched_square, build_unit_square, classify_inflow


class ProblemKind(enum.Enum):
    SOLID_BODY_ROTATION = "solid-body-rotation"
    STEADY_ADVECTION = "steady-advection"
    ANISOTROPIC_DIFFUSION = "anisotropic-diffusion"


# v = (0.5 - y, x - 0.5)
ROTATION_VELOCITY = LinearVelocity(((0.0, -1.0), (1.0, 0.0)), (0.5, -0.5))
# v = (y, -x)
CIRCULAR_VELOCITY = LinearVelocity(((0.0, 1.0), (-1.0, 0.0)))
DIFFUSION_ANGLE = np.pi / 6


def rotation_initial(x, y):
    """Hump, cone and slotted cylinder."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r_hump = np.hypot(x - 0.25, y - 0.5) / 0.15
    r_cone = np.hypot(x - 0.5, y - 0.25) / 0.15
    r_cyl = np.hypot(x - 0.5, y - 0.75) / 0.15
    u = np.zeros(np.broadcast(x, y).shape)
    slot = (np.abs(x - 0.5) >= 0.025) | (y >= 0.85)
    u = np.where((r_cyl <= 1.0) & slot, 1.0, u)
    u = np.where(r_cone <= 1.0, 1.0 - r_cone, u)
    u = np.where(r_hump <= 1.0, 0.25 + 0.25 * np.cos(np.pi * r_hump), u)
    return u


def circular_profile(x, y):
    """Exact steady solution: a unit ring and a cos^2 ring around the origin."""
    r = np.hypot(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    u = np.zeros_like(r)
    u = np.where((r >= 0.15) & (r <= 0.45), 1.0, u)
    ring = (r >= 0.55) & (r <= 0.85)
    return np.where(ring, np.cos(10.0 * np.pi * (r - 0.7) / 3.0) ** 2, u)


def zero(x, y):
    return np.zeros(np.broadcast(np.asarray(x), np.asarray(y)).shape)


@dataclass(frozen=True)
class Problem:
    """Mesh and data of one benchmark at one resolution, with the default run settings."""

    kind: ProblemKind
    mesh: Mesh
    initial: Callable
    exact: Callable | None
    velocity: LinearVelocity | None = None
    inflow: Callable | None = None
    tensor: np.ndarray | None = None
    dirichlet_nodes: np.ndarray | None = None
    dirichlet_values: np.ndarray | None = None
    dt: float = 1e-3
    t_final: float = 1.0
    box: GlobalBox = GlobalBox(0.0, 1.0)

    @property
    def steady(self) -> bool:
        return self.kind is not ProblemKind.SOLID_BODY_ROTATION

    def initial_state(self) -> np.ndarray:
        u = np.asarray(self.initial(self.mesh.nodes[:, 0], self.mesh.nodes[:, 1]), dtype=float)
        if self.dirichlet_nodes is not None:
            u = u.copy()
            u[self.dirichlet_nodes] = self.dirichlet_values
        return u


def solid_body_rotation(n: int = 128, dt: float = 1e-3) -> Problem:
    mesh = classify_inflow(build_unit_square(n), ROTATION_VELOCITY)
    return Problem(
        ProblemKind.SOLID_BODY_ROTATION, mesh, rotation_initial, rotation_initial,
        velocity=ROTATION_VELOCITY, inflow=zero, dt=dt, t_final=2.0 * np.pi,
    )


def steady_advection(n: int = 64, dt: float = 1e-3) -> Problem:
    mesh = classify_inflow(build_unit_square(n), CIRCULAR_VELOCITY)
    return Problem(
        ProblemKind.STEADY_ADVECTION, mesh, zero, circular_profile,
        velocity=CIRCULAR_VELOCITY, inflow=circular_profile, dt=dt, t_final=9.5,
    )


def anisotropic_diffusion(n: int = 18, dt: float = 1e-6) -> Problem:
    """Punched square, ``u = -1`` on the outer and ``u = 1`` on the inner boundary."""
    mesh = build_punched_square(n)
    faces = mesh.boundary_faces
    outer = np.unique(faces[mesh.face_tags == BoundaryTag.OUTER])
    inner = np.unique(faces[mesh.face_tags == BoundaryTag.INNER])
    nodes = np.concatenate([outer, inner])
    values = np.concatenate([-np.ones(outer.size), np.ones(inner.size)])
    order = np.argsort(nodes)
    return Problem(
        ProblemKind.ANISOTROPIC_DIFFUSION, mesh, zero, None,
        tensor=rotated_tensor(DIFFUSION_ANGLE), dirichlet_nodes=nodes[order],
        dirichlet_values=values[order], dt=dt, t_final=2e-2, box=GlobalBox(-1.0, 1.0),
    )


def make_problem(kind: ProblemKind | str, n: int | None = None, dt: float | None = None) -> Problem:
    kind = ProblemKind(kind)
    builder = {
        ProblemKind.SOLID_BODY_ROTATION: (solid_body_rotation, 128),
        ProblemKind.STEADY_ADVECTION: (steady_advection, 64),
        ProblemKind.ANISOTROPIC_DIFFUSION: (anisotropic_diffusion, 18),
    }[kind]
    fn, n_default = builder
    kwargs = {"n": n if n is not None else n_default}
    if dt is not None:
        kwargs["dt"] = dt
    return fn(**kwargs)
