"""Edge fluxes, nodal bounds and the closed-form limiters (Zalesak FCT, MCL)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import EdgeGraph


@dataclass(frozen=True, eq=False)
class FluxSet:
    """One real value per directed off-diagonal edge of ``graph``."""

    graph: EdgeGraph
    values: np.ndarray

    @classmethod
    def zeros(cls, graph: EdgeGraph) -> "FluxSet":
        return cls(graph, np.zeros(graph.n_edges))

    def __add__(self, other: "FluxSet") -> "FluxSet":
        return FluxSet(self.graph, self.values + other.values)

    def __sub__(self, other: "FluxSet") -> "FluxSet":
        return FluxSet(self.graph, self.values - other.values)

    def __neg__(self) -> "FluxSet":
        return FluxSet(self.graph, -self.values)

    def antisymmetry_defect(self) -> float:
        """``max |f_ij + f_ji|`` relative to ``max |f|``."""
        scale = np.abs(self.values).max(initial=0.0)
        if scale == 0.0:
            return 0.0
        return float(np.abs(self.values + self.values[self.graph.rev]).max() / scale)


@dataclass(frozen=True)
class GlobalBox:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"empty box [{self.lo}, {self.hi}]")


LOCAL = "local"


@dataclass(frozen=True, eq=False)
class NodalBounds:
    u_min: np.ndarray
    u_max: np.ndarray
    mode: GlobalBox | str

    def contains(self, u: np.ndarray, tol: float = 0.0) -> bool:
        return bool(np.all(u >= self.u_min - tol) and np.all(u <= self.u_max + tol))

    def violation(self, u: np.ndarray) -> float:
        return float(max(np.max(self.u_min - u, initial=0.0), np.max(u - self.u_max, initial=0.0)))

    def including(self, nodes: np.ndarray, values: np.ndarray) -> "NodalBounds":
        """Bounds widened so that ``values`` lie within them at ``nodes``."""
        u_min, u_max = self.u_min.copy(), self.u_max.copy()
        u_min[nodes] = np.minimum(u_min[nodes], values)
        u_max[nodes] = np.maximum(u_max[nodes], values)
        return NodalBounds(u_min, u_max, self.mode)


def parse_bounds(text: str) -> GlobalBox | str:
    """``"local"`` or ``"global:lo:hi"``."""
    if text == LOCAL:
        return LOCAL
    kind, lo, hi = text.split(":")
    if kind != "global":
        raise ValueError(f"unknown bounds mode {text!r}")
    return GlobalBox(float(lo), float(hi))


def local_bounds(u: np.ndarray, graph: EdgeGraph, mode: GlobalBox | str = LOCAL) -> NodalBounds:
    if isinstance(mode, GlobalBox):
        return NodalBounds(np.full(graph.n, mode.lo), np.full(graph.n, mode.hi), mode)
    if mode != LOCAL:
        raise ValueError(f"unknown bounds mode {mode!r}")
    return NodalBounds(graph.stencil_min(u), graph.stencil_max(u), LOCAL)


def fct_bounds(u: np.ndarray, u_low: np.ndarray, graph: EdgeGraph) -> NodalBounds:
    """Zalesak bounds from the stencil extrema of ``u`` and the low-order predictor."""
    return NodalBounds(
        graph.stencil_min(np.minimum(u, u_low)), graph.stencil_max(np.maximum(u, u_low)), LOCAL
    )


def artificial_diffusion(K) -> sp.csr_matrix:
    """``d_ij = max(-k_ij, 0, -k_ji)`` off the diagonal, zero row sums."""
    graph = EdgeGraph.from_matrix(K)
    k = graph.gather(K)
    d = np.maximum(np.maximum(-k, 0.0), -k[graph.rev])
    return graph.to_matrix(d, diagonal=-graph.scatter(d))


def mcl_diffusion(K) -> np.ndarray:
    """Edge coefficients ``max(|k_ij|, |k_ji|)`` for MCL bar states.

    They agree with :func:`artificial_diffusion` wherever ``K`` is
    antisymmetric and keep every bar state between ``u_i`` and ``u_j``
    on boundary edges, where it is not.
    """
    graph = EdgeGraph.from_matrix(K)
    k = graph.gather(K)
    return np.maximum(np.abs(k), np.abs(k[graph.rev]))


def low_order_fluxes(d: np.ndarray, u: np.ndarray, graph: EdgeGraph) -> FluxSet:
    """Diffusive fluxes ``d_ij (u_j - u_i)`` for edge coefficients ``d``."""
    return FluxSet(graph, d * (u[graph.cols] - u[graph.rows]))


def apply_fluxes(f: FluxSet) -> np.ndarray:
    return f.graph.scatter(f.values)


def fct_limit(f: FluxSet, u_low: np.ndarray, bounds: NodalBounds, m_lumped: np.ndarray, dt: float) -> FluxSet:
    """Zalesak's multidimensional limiter applied to raw antidiffusive fluxes.

    Fluxes are rates, i.e. the corrected solution is
    ``u_low + dt / m * apply_fluxes(result)``.
    """
    g = f.graph
    fv = f.values
    p_plus = g.scatter(np.maximum(fv, 0.0))
    p_minus = g.scatter(np.minimum(fv, 0.0))
    q_plus = np.maximum(m_lumped / dt * (bounds.u_max - u_low), 0.0)
    q_minus = np.minimum(m_lumped / dt * (bounds.u_min - u_low), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r_plus = np.where(p_plus > 0.0, np.minimum(1.0, q_plus / p_plus), 1.0)
        r_minus = np.where(p_minus < 0.0, np.minimum(1.0, q_minus / p_minus), 1.0)
    i, j = g.rows, g.cols
    alpha = np.where(
        fv > 0.0,
        np.minimum(r_plus[i], r_minus[j]),
        np.minimum(r_minus[i], r_plus[j]),
    )
    return FluxSet(g, alpha * fv)


def bar_states(u: np.ndarray, d: np.ndarray, graph: EdgeGraph, k: np.ndarray | None = None) -> np.ndarray:
    """Edge bar states of the low-order operator ``D`` (+ ``K`` if given).

    With ``k`` the low-order part is ``sum_j (d_ij + k_ij)(u_j - u_i)``, which
    requires ``K`` to have zero row sums; the states lie between ``u_i`` and
    ``u_j`` when ``d_ij >= max(|k_ij|, |k_ji|)``.
    """
    ui, uj = u[graph.rows], u[graph.cols]
    ubar = 0.5 * (ui + uj)
    if k is not None:
        with np.errstate(divide="ignore", invalid="ignore"):
            ubar = ubar + np.where(d > 0.0, k * (uj - ui) / (2.0 * d), 0.0)
    return ubar


def _edge_values(graph: EdgeGraph, A) -> np.ndarray:
    if isinstance(A, np.ndarray) and A.ndim == 1:
        return A
    return graph.gather(A)


def mcl_limit(
    f: FluxSet,
    u: np.ndarray,
    D,
    bounds: NodalBounds,
    K=None,
) -> FluxSet:
    """Monolithic convex limiting of raw antidiffusive fluxes.

    Each limited flux keeps both bar states ``ubar_ij + f*_ij / (2 d_ij)``
    and ``ubar_ji - f*_ij / (2 d_ij)`` inside the bounds of their nodes.
    Edges with ``d_ij = 0`` get a zero flux.  ``D`` and ``K`` may be given
    as matrices or as edge arrays already gathered on ``f.graph``.
    """
    g = f.graph
    d = _edge_values(g, D)
    k = _edge_values(g, K) if K is not None else None
    ubar = bar_states(u, d, g, k)
    ubar_rev = ubar[g.rev]
    i, j = g.rows, g.cols
    fv = f.values
    two_d = 2.0 * d
    up = np.minimum(fv, np.minimum(two_d * (bounds.u_max[i] - ubar), two_d * (ubar_rev - bounds.u_min[j])))
    dn = np.maximum(fv, np.maximum(two_d * (bounds.u_min[i] - ubar), two_d * (ubar_rev - bounds.u_max[j])))
    limited = np.where(fv > 0.0, np.maximum(up, 0.0), np.minimum(dn, 0.0))
    limited[d <= 0.0] = 0.0
    return FluxSet(g, limited)
