"""Structured Q1 meshes of the unit square and the punched unit square."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class BoundaryTag(enum.IntEnum):
    OUTER = 0
    INNER = 1
    INFLOW = 2
    NONINFLOW = 3


# local (CCW) corner offsets of a cell in grid units
_CORNERS = np.array([[0, 0], [1, 0], [1, 1], [0, 1]])


@dataclass(frozen=True, eq=False)
class EdgeGraph:
    """Directed off-diagonal edges of a structurally symmetric sparsity pattern.

    Edges are stored in CSR order (sorted by row, then column), so per-edge
    arrays line up with the off-diagonal entries of every matrix assembled on
    the pattern.  ``rev[e]`` is the index of the reversed edge.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    rev: np.ndarray
    offsets: np.ndarray
    edge_pos: np.ndarray
    diag_pos: np.ndarray

    @classmethod
    def from_matrix(cls, A) -> "EdgeGraph":
        A = sp.csr_matrix(A)
        A.sort_indices()
        n = A.shape[0]
        rows = np.repeat(np.arange(n), np.diff(A.indptr))
        cols = A.indices.copy()
        off = rows != cols
        diag_pos = np.full(n, -1, dtype=np.int64)
        diag_pos[rows[~off]] = np.flatnonzero(~off)
        if np.any(diag_pos < 0):
            raise ValueError("sparsity pattern must contain the diagonal")
        edge_pos = np.flatnonzero(off)
        rows, cols = rows[off], cols[off]
        offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n), out=offsets[1:])
        # (i, j) and (j, i) occupy the same slot when sorted by (max, min)
        key = np.minimum(rows, cols) * n + np.maximum(rows, cols)
        order = np.lexsort((rows, key))
        rev = np.empty_like(order)
        first, second = order[0::2], order[1::2]
        if not np.array_equal(key[first], key[second]):
            raise ValueError("sparsity pattern is not structurally symmetric")
        rev[first], rev[second] = second, first
        return cls(n, A.indptr.copy(), A.indices.copy(), rows, cols, rev, offsets, edge_pos, diag_pos)

    @property
    def n_edges(self) -> int:
        return self.rows.size

    def gather(self, A) -> np.ndarray:
        """Values ``a_ij`` of ``A`` on the directed edges."""
        A = sp.csr_matrix(A)
        if self.same_pattern(A):
            return A.data[self.edge_pos].copy()
        return np.asarray(A[self.rows, self.cols]).ravel()

    def same_pattern(self, A) -> bool:
        return (
            A.shape == (self.n, self.n)
            and np.array_equal(A.indptr, self.indptr)
            and np.array_equal(A.indices, self.indices)
        )

    def scatter(self, values: np.ndarray) -> np.ndarray:
        """Row sums of an edge field: ``sum_j values_ij``."""
        return np.bincount(self.rows, weights=values, minlength=self.n)

    def stencil_max(self, u: np.ndarray) -> np.ndarray:
        return np.maximum(u, np.maximum.reduceat(u[self.cols], self.offsets[:-1]))

    def stencil_min(self, u: np.ndarray) -> np.ndarray:
        return np.minimum(u, np.minimum.reduceat(u[self.cols], self.offsets[:-1]))

    def stencil_sizes(self) -> np.ndarray:
        return np.diff(self.offsets) + 1

    def to_matrix(self, values: np.ndarray, diagonal: np.ndarray | None = None) -> sp.csr_matrix:
        """Matrix on exactly this pattern from edge and diagonal values."""
        data = np.zeros(self.indices.size)
        data[self.edge_pos] = values
        if diagonal is not None:
            data[self.diag_pos] = diagonal
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=(self.n, self.n))


@dataclass(frozen=True, eq=False)
class Mesh:
    """Axis-aligned square Q1 cells on a uniform ``n x n`` background grid.

    ``boundary_faces`` are stored as CCW cell edges ``(a, b)``, so the outward
    unit normal is ``(b - a)`` rotated clockwise by 90 degrees.
    """

    nodes: np.ndarray
    cells: np.ndarray
    boundary_faces: np.ndarray
    face_tags: np.ndarray
    h: float
    grid_index: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n(self) -> int:
        return self.grid_index.shape[0] - 1

    @property
    def faces(self) -> list[tuple[int, int, BoundaryTag]]:
        return [(int(a), int(b), BoundaryTag(t)) for (a, b), t in zip(self.boundary_faces, self.face_tags)]

    @cached_property
    def face_normals(self) -> np.ndarray:
        d = self.nodes[self.boundary_faces[:, 1]] - self.nodes[self.boundary_faces[:, 0]]
        return np.column_stack([d[:, 1], -d[:, 0]]) / np.linalg.norm(d, axis=1)[:, None]

    @cached_property
    def face_lengths(self) -> np.ndarray:
        d = self.nodes[self.boundary_faces[:, 1]] - self.nodes[self.boundary_faces[:, 0]]
        return np.linalg.norm(d, axis=1)

    @cached_property
    def pattern(self) -> sp.csr_matrix:
        """Shared-cell adjacency as a CSR pattern of ones (diagonal included)."""
        r = np.repeat(self.cells, 4, axis=1).ravel()
        c = np.tile(self.cells, (1, 4)).ravel()
        P = sp.csr_matrix((np.ones(r.size), (r, c)), shape=(self.n_nodes, self.n_nodes))
        P.sum_duplicates()
        P.sort_indices()
        P.data[:] = 1.0
        return P

    @cached_property
    def graph(self) -> EdgeGraph:
        return EdgeGraph.from_matrix(self.pattern)

    @cached_property
    def scatter_index(self) -> np.ndarray:
        """Position in the CSR data array of every local (cell, a, b) entry."""
        P = self.pattern
        N = self.n_nodes
        keys = np.repeat(np.arange(N), np.diff(P.indptr)) * N + P.indices
        local = np.repeat(self.cells, 4, axis=1) * N + np.tile(self.cells, (1, 4))
        return np.searchsorted(keys, local).reshape(-1, 4, 4)

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary_faces)

    @cached_property
    def node_tags(self) -> np.ndarray:
        """Per-node boundary tag, ``-1`` for interior nodes (last face wins)."""
        tags = np.full(self.n_nodes, -1)
        tags[self.boundary_faces[:, 0]] = self.face_tags
        tags[self.boundary_faces[:, 1]] = self.face_tags
        return tags

    @cached_property
    def cell_grid(self) -> np.ndarray:
        """``cell_grid[j, i]``: index of the cell with lower-left grid corner ``(i, j)``, or ``-1``."""
        n = self.n
        grid = np.full((n, n), -1, dtype=np.int64)
        ij = np.rint(self.nodes[self.cells[:, 0]] / self.h).astype(np.int64)
        grid[ij[:, 1], ij[:, 0]] = np.arange(self.n_cells)
        return grid

    def cell_area(self) -> np.ndarray:
        return np.full(self.n_cells, self.h * self.h)

    def with_tags(self, tags) -> "Mesh":
        return replace(self, face_tags=np.asarray(tags, dtype=np.int64))

    def evaluate(self, u: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Evaluate the bilinear interpolant of nodal values ``u`` at points."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        n = self.n
        i = np.clip(np.floor(x / self.h).astype(int), 0, n - 1)
        j = np.clip(np.floor(y / self.h).astype(int), 0, n - 1)
        if np.any((x < -1e-12) | (x > 1 + 1e-12) | (y < -1e-12) | (y > 1 + 1e-12)):
            raise ValueError("evaluation point outside the unit square")
        cell = self.cell_grid[j, i]
        # points on the left/bottom edge of a missing cell belong to the neighbour
        for shift_i, shift_j in ((1, 0), (0, 1), (1, 1)):
            retry = (cell < 0) & (i >= shift_i) & (j >= shift_j)
            retry &= ((shift_i == 0) | (x / self.h - i < 1e-12)) & ((shift_j == 0) | (y / self.h - j < 1e-12))
            if np.any(retry):
                i = np.where(retry, i - shift_i, i)
                j = np.where(retry, j - shift_j, j)
                cell = self.cell_grid[j, i]
        if np.any(cell < 0):
            raise ValueError("evaluation point outside the meshed domain")
        xi = x / self.h - i
        eta = y / self.h - j
        corners = np.moveaxis(self.cells[cell], -1, 0)
        w = np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta])
        return np.sum(w * u[corners], axis=0)


def _build(n: int, keep) -> Mesh:
    # keep[j, i]: cell with lower-left grid corner (i, j) is present
    used = np.zeros((n + 1, n + 1), dtype=bool)
    jj, ii = np.nonzero(keep)
    for di, dj in _CORNERS:
        used[jj + dj, ii + di] = True
    grid_index = np.full((n + 1, n + 1), -1, dtype=np.int64)
    grid_index[used] = np.arange(used.sum())
    gj, gi = np.nonzero(used)
    h = 1.0 / n
    nodes = np.column_stack([gi * h, gj * h])
    cells = np.column_stack([grid_index[jj + dj, ii + di] for di, dj in _CORNERS])

    edges = np.stack([cells, np.roll(cells, -1, axis=1)], axis=-1).reshape(-1, 2)
    key = np.minimum(edges[:, 0], edges[:, 1]) * nodes.shape[0] + np.maximum(edges[:, 0], edges[:, 1])
    _, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
    faces = edges[counts[inverse] == 1]
    mid = nodes[faces].mean(axis=1)
    on_outer = (
        np.isclose(mid[:, 0], 0.0) | np.isclose(mid[:, 0], 1.0)
        | np.isclose(mid[:, 1], 0.0) | np.isclose(mid[:, 1], 1.0)
    )
    tags = np.where(on_outer, BoundaryTag.OUTER, BoundaryTag.INNER).astype(np.int64)
    return Mesh(nodes, cells, faces, tags, h, grid_index)


def build_unit_square(n: int) -> Mesh:
    if n < 1:
        raise ValueError(f"need n >= 1 cells per direction, got {n}")
    return _build(n, np.ones((n, n), dtype=bool))


def build_punched_square(n: int) -> Mesh:
    """Unit square with the hole [4/9, 5/9]^2 removed; ``n`` must be a multiple of 9."""
    if n < 9 or n % 9:
        raise ValueError(f"hole [4/9, 5/9]^2 is not aligned with a grid of {n} cells")
    keep = np.ones((n, n), dtype=bool)
    lo, hi = 4 * n // 9, 5 * n // 9
    keep[lo:hi, lo:hi] = False
    return _build(n, keep)


def classify_inflow(mesh: Mesh, velocity) -> Mesh:
    """Tag outer faces by the sign of ``v . n`` at the face midpoint."""
    mid = mesh.nodes[mesh.boundary_faces].mean(axis=1)
    vx, vy = velocity(mid[:, 0], mid[:, 1])
    vn = np.asarray(vx) * mesh.face_normals[:, 0] + np.asarray(vy) * mesh.face_normals[:, 1]
    tags = mesh.face_tags.copy()
    outer = (tags == BoundaryTag.OUTER) | (tags == BoundaryTag.INFLOW) | (tags == BoundaryTag.NONINFLOW)
    tags[outer] = np.where(vn[outer] < 0.0, BoundaryTag.INFLOW, BoundaryTag.NONINFLOW)
    return mesh.with_tags(tags)
