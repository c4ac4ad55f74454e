"""Galerkin Q1 matrices, lumping, and weakly imposed inflow boundary terms."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .limiters import FluxSet
from .mesh import BoundaryTag, Mesh

# 3-point Gauss rule on [0, 1]
GAUSS_POINTS = 0.5 + 0.5 * np.sqrt(0.6) * np.array([-1.0, 0.0, 1.0])
GAUSS_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 18.0


class AssemblyError(RuntimeError):
    pass


def _reference_q1():
    """Basis values and reference gradients at the 3x3 tensor Gauss points."""
    xi, eta = np.meshgrid(GAUSS_POINTS, GAUSS_POINTS, indexing="xy")
    xi, eta = xi.ravel(), eta.ravel()
    w = np.outer(GAUSS_WEIGHTS, GAUSS_WEIGHTS).ravel()
    phi = np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta], axis=1)
    dxi = np.stack([-(1 - eta), 1 - eta, eta, -eta], axis=1)
    deta = np.stack([-(1 - xi), -xi, xi, 1 - xi], axis=1)
    return xi, eta, w, phi, np.stack([dxi, deta], axis=-1)


XI, ETA, WEIGHTS, PHI, DPHI = _reference_q1()  # PHI: (9, 4), DPHI: (9, 4, 2)


@dataclass(frozen=True)
class LinearVelocity:
    """Affine velocity field ``v(x) = A x + c``."""

    matrix: tuple[tuple[float, float], tuple[float, float]]
    offset: tuple[float, float] = (0.0, 0.0)

    def __call__(self, x, y):
        (a, b), (c, d) = self.matrix
        return a * x + b * y + self.offset[0], c * x + d * y + self.offset[1]

    def divergence(self, x, y):
        return np.full(np.shape(x), self.matrix[0][0] + self.matrix[1][1])

    def max_norm(self, mesh: Mesh) -> float:
        vx, vy = self(mesh.nodes[:, 0], mesh.nodes[:, 1])
        return float(np.sqrt(vx**2 + vy**2).max())


def _divergence(velocity, x, y, eps=1e-6):
    if hasattr(velocity, "divergence"):
        return velocity.divergence(x, y)
    return (
        (velocity(x + eps, y)[0] - velocity(x - eps, y)[0])
        + (velocity(x, y + eps)[1] - velocity(x, y - eps)[1])
    ) / (2 * eps)


@dataclass(frozen=True)
class ConsistentMass:
    pass


@dataclass(frozen=True)
class Advection:
    velocity: Callable


@dataclass(frozen=True)
class StreamlineDiffusion:
    velocity: Callable


@dataclass(frozen=True)
class AnisotropicStiffness:
    tensor: np.ndarray


OperatorKind = ConsistentMass | Advection | StreamlineDiffusion | AnisotropicStiffness


def rotated_tensor(theta: float, eigenvalues=(100.0, 1.0)) -> np.ndarray:
    """``R(-theta) diag(eigenvalues) R(theta)`` with ``R`` the rotation used for the anisotropic test."""
    c, s = np.cos(theta), np.sin(theta)
    R = np.array([[c, s], [-s, c]])
    return R.T @ np.diag(eigenvalues) @ R


def _local_matrices(mesh: Mesh, kind) -> np.ndarray:
    h = mesh.h
    origin = mesh.nodes[mesh.cells[:, 0]]
    jac = h * h
    w = WEIGHTS * jac
    grad = DPHI / h  # (9, 4, 2)
    if isinstance(kind, ConsistentMass):
        local = np.einsum("q,qa,qb->ab", w, PHI, PHI)
        return np.broadcast_to(local, (mesh.n_cells, 4, 4)).copy()
    if isinstance(kind, AnisotropicStiffness):
        Dt = np.asarray(kind.tensor, dtype=float)
        local = -np.einsum("q,qak,kl,qbl->ab", w, grad, Dt, grad)
        return np.broadcast_to(local, (mesh.n_cells, 4, 4)).copy()
    x = origin[:, 0, None] + h * XI[None, :]
    y = origin[:, 1, None] + h * ETA[None, :]
    vx, vy = kind.velocity(x, y)
    v = np.stack(np.broadcast_arrays(vx, vy), axis=-1)  # (E, 9, 2)
    v_grad = np.einsum("eqk,qak->eqa", v, grad)  # v . grad(phi_a)
    if isinstance(kind, Advection):
        div = np.broadcast_to(_divergence(kind.velocity, x, y), x.shape)
        # -phi_a div(v phi_b) = -phi_a (v . grad phi_b + phi_b div v)
        return -np.einsum("q,qa,eqb->eab", w, PHI, v_grad) - np.einsum(
            "q,eq,qa,qb->eab", w, div, PHI, PHI
        )
    if isinstance(kind, StreamlineDiffusion):
        return -np.einsum("q,eqa,eqb->eab", w, v_grad, v_grad)
    raise TypeError(f"unknown operator kind {kind!r}")


def assemble(mesh: Mesh, kind) -> sp.csr_matrix:
    """Global matrix on the shared-cell pattern (explicit zeros kept)."""
    local = _local_matrices(mesh, kind)
    P = mesh.pattern
    data = np.bincount(mesh.scatter_index.ravel(), weights=local.ravel(), minlength=P.nnz)
    return sp.csr_matrix((data, P.indices.copy(), P.indptr.copy()), shape=P.shape)


def lump(M_C) -> sp.csr_matrix:
    m = np.asarray(M_C.sum(axis=1)).ravel()
    if np.any(m <= 0.0):
        raise AssemblyError(f"nonpositive lumped mass at nodes {np.flatnonzero(m <= 0.0)[:5]}")
    return sp.diags(m, format="csr")


@dataclass(frozen=True)
class BoundaryTerms:
    b: np.ndarray
    b_tilde: np.ndarray
    f_b: FluxSet


class BoundaryOperator:
    """Face integrals over the Dirichlet part of an advection boundary.

    Holds the boundary mass ``B_ij = int phi_i phi_j |v.n| ds`` and the load
    ``l_i = int phi_i u_D |v.n| ds`` so that ``b(u) = l - B u``.
    """

    def __init__(self, mesh: Mesh, velocity, u_D, tags=(BoundaryTag.INFLOW,)):
        self.mesh = mesh
        faces = mesh.boundary_faces[np.isin(mesh.face_tags, np.asarray(tags, dtype=np.int64))]
        normals = mesh.face_normals[np.isin(mesh.face_tags, np.asarray(tags, dtype=np.int64))]
        a, b = mesh.nodes[faces[:, 0]], mesh.nodes[faces[:, 1]]
        length = np.linalg.norm(b - a, axis=1)
        t = GAUSS_POINTS
        px = a[:, 0, None] + t[None, :] * (b[:, 0] - a[:, 0])[:, None]
        py = a[:, 1, None] + t[None, :] * (b[:, 1] - a[:, 1])[:, None]
        vx, vy = velocity(px, py)
        vn = np.abs(vx * normals[:, 0, None] + vy * normals[:, 1, None])
        gd = np.broadcast_to(u_D(px, py) if callable(u_D) else u_D, px.shape)
        w = GAUSS_WEIGHTS[None, :] * vn * length[:, None]
        phi = np.stack([1 - t, t])  # (2, 3)
        local = np.einsum("fq,aq,bq->fab", w, phi, phi)
        load = np.einsum("fq,aq,fq->fa", w, phi, gd)
        n = mesh.n_nodes
        rows = np.repeat(faces, 2, axis=1).ravel()
        cols = np.tile(faces, (1, 2)).ravel()
        B = sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))
        B.sum_duplicates()
        self.B = B
        self.load = np.bincount(faces.ravel(), weights=load.ravel(), minlength=n)
        self.beta = np.asarray(B.sum(axis=1)).ravel()
        self.edge_weights = mesh.graph.gather(B)

    def b(self, u: np.ndarray) -> np.ndarray:
        return self.load - self.B @ u

    def b_tilde(self, u: np.ndarray) -> np.ndarray:
        return self.load - self.beta * u

    @property
    def inflow_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.beta > 0.0)

    @property
    def inflow_values(self) -> np.ndarray:
        """Weighted boundary data ``l_i / beta_i`` with ``b~_i = beta_i (value_i - u_i)`` at inflow nodes."""
        nodes = self.inflow_nodes
        return self.load[nodes] / self.beta[nodes]

    def fluxes(self, u: np.ndarray) -> FluxSet:
        g = self.mesh.graph
        return FluxSet(g, self.edge_weights * (u[g.rows] - u[g.cols]))

    def terms(self, u: np.ndarray) -> BoundaryTerms:
        return BoundaryTerms(self.b(u), self.b_tilde(u), self.fluxes(u))


def boundary_terms(mesh: Mesh, u: np.ndarray, u_D, velocity) -> BoundaryTerms:
    return BoundaryOperator(mesh, velocity, u_D).terms(u)
