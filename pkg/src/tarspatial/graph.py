"""Areal adjacency structures: proximity matrix W, degrees D_w, row-normalized A.

Also hosts the directed nearest-neighbor sets used by the NNGP-flavoured
TAR variant on point-referenced coordinates.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .errors import (
    InvalidDimensionError,
    InvalidEdgeError,
    InvalidInputError,
    IsolatedRegionError,
    NumericalFailureError,
)

# Dense eigendecomposition up to this size; ARPACK beyond.
_DENSE_EIG_LIMIT = 600


class DisconnectedGraphWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class AdjacencyGraph:
    """Symmetric binary proximity structure over ``n`` regions.

    Build through :func:`build_grid_graph` or :func:`build_graph_from_edges`;
    the constructor trusts its inputs. ``W`` and ``A`` are CSR matrices and
    must not be mutated.
    """

    n: int
    W: sp.csr_matrix
    degrees: np.ndarray
    A: sp.csr_matrix
    n_components: int = 1
    diagnostics: tuple[str, ...] = field(default=())
    shape: tuple[int, int] | None = None  # (rows, cols) for lattice graphs

    @property
    def D(self) -> sp.csr_matrix:
        return sp.diags(self.degrees.astype(float), format="csr")

    @property
    def n_edges(self) -> int:
        return int(self.W.nnz // 2)

    @property
    def connected(self) -> bool:
        return self.n_components == 1

    def neighbors(self, i: int) -> np.ndarray:
        return self.W.indices[self.W.indptr[i]:self.W.indptr[i + 1]]

    def edges(self) -> list[tuple[int, int]]:
        upper = sp.triu(self.W, k=1).tocoo()
        return sorted(zip(upper.row.tolist(), upper.col.tolist()))


def _from_symmetric_pattern(n: int, rows: np.ndarray, cols: np.ndarray,
                            shape: tuple[int, int] | None = None) -> AdjacencyGraph:
    rr = np.concatenate([rows, cols])
    cc = np.concatenate([cols, rows])
    W = sp.coo_matrix((np.ones(rr.size), (rr, cc)), shape=(n, n)).tocsr()
    W.sum_duplicates()
    W.data[:] = 1.0  # duplicates summed, then clamped back to {0, 1}
    W.sort_indices()
    degrees = np.asarray(W.sum(axis=1)).ravel().astype(np.int64)
    isolated = np.flatnonzero(degrees == 0)
    if isolated.size:
        raise IsolatedRegionError(f"isolated regions (degree 0): {isolated[:10].tolist()}")
    A = sp.diags(1.0 / degrees) @ W
    A = sp.csr_matrix(A)
    A.sort_indices()
    n_comp, _ = connected_components(W, directed=False)
    diagnostics: tuple[str, ...] = ()
    if n_comp > 1:
        msg = f"graph has {n_comp} connected components"
        warnings.warn(msg, DisconnectedGraphWarning, stacklevel=3)
        diagnostics = (msg,)
    return AdjacencyGraph(n=n, W=W, degrees=degrees, A=A, n_components=int(n_comp),
                          diagnostics=diagnostics, shape=shape)


def build_grid_graph(rows: int, cols: int) -> AdjacencyGraph:
    """Rook (4-neighbour) adjacency on a ``rows x cols`` lattice, row-major ids."""
    if int(rows) != rows or int(cols) != cols or rows < 2 or cols < 2:
        raise InvalidDimensionError(f"grid dimensions must be >= 2, got ({rows}, {cols})")
    rows, cols = int(rows), int(cols)
    idx = np.arange(rows * cols).reshape(rows, cols)
    horiz = (idx[:, :-1].ravel(), idx[:, 1:].ravel())
    vert = (idx[:-1, :].ravel(), idx[1:, :].ravel())
    r = np.concatenate([horiz[0], vert[0]])
    c = np.concatenate([horiz[1], vert[1]])
    return _from_symmetric_pattern(rows * cols, r, c, shape=(rows, cols))


def build_graph_from_edges(n: int, edges: Iterable[Sequence[int]]) -> AdjacencyGraph:
    """Symmetric closure of an undirected edge list; duplicates are dropped."""
    if n < 1:
        raise InvalidDimensionError("n must be positive")
    e = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= n):
        raise InvalidEdgeError(f"edge endpoint outside [0, {n})")
    loops = e[:, 0] == e[:, 1]
    if np.any(loops):
        raise InvalidEdgeError(f"self-loop at region {int(e[loops][0, 0])}")
    return _from_symmetric_pattern(n, e[:, 0], e[:, 1])


def grid_coordinates(rows: int, cols: int) -> np.ndarray:
    """Cell centres of a ``rows x cols`` lattice on the unit square, row-major."""
    yy, xx = np.meshgrid((np.arange(rows) + 0.5) / rows, (np.arange(cols) + 0.5) / cols,
                         indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


def car_rho_range(g: AdjacencyGraph) -> tuple[float, float]:
    """Admissible CAR interval ``(1/lambda_min, 1/lambda_max)`` of ``D^-1/2 W D^-1/2``."""
    s = 1.0 / np.sqrt(g.degrees.astype(float))
    S = sp.diags(s) @ g.W @ sp.diags(s)
    try:
        if g.n <= _DENSE_EIG_LIMIT:
            lam = np.linalg.eigvalsh(S.toarray())
            lo, hi = lam[0], lam[-1]
        else:
            lam = eigsh(S.tocsc(), k=2, which="BE", return_eigenvectors=False, tol=1e-12)
            lo, hi = float(np.min(lam)), float(np.max(lam))
    except (np.linalg.LinAlgError, ArpackNoConvergence) as exc:
        raise NumericalFailureError(f"eigen-solver failed: {exc}") from exc
    if not (lo < 0 < hi):
        raise NumericalFailureError(f"unexpected spectrum endpoints ({lo}, {hi})")
    return 1.0 / lo, 1.0 / hi


@dataclass(frozen=True, eq=False)
class DirectedNeighborSets:
    """Directed acyclic nearest-neighbour sets.

    ``order[k]`` is the region visited k-th; ``rank`` is its inverse.
    ``neighbors[i]`` lists (original) indices of earlier-ordered points,
    nearest first.
    """

    order: np.ndarray
    rank: np.ndarray
    neighbors: tuple[tuple[int, ...], ...]
    m: int

    @property
    def n(self) -> int:
        return len(self.order)


def build_neighbor_sets(coords, m: int, ordering="sort-by-first-coordinate") -> DirectedNeighborSets:
    """Up to ``m`` nearest predecessors of each point under an ordering.

    ``ordering`` is ``"sort-by-first-coordinate"`` (stable, ties by index) or
    an explicit permutation of ``range(n)``. Distance ties go to the lower
    original index.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[0] < 2:
        raise InvalidInputError("need at least 2 points as an (n, d) array")
    if m < 1:
        raise InvalidInputError("neighbour cap m must be >= 1")
    n = coords.shape[0]
    if isinstance(ordering, str):
        if ordering != "sort-by-first-coordinate":
            raise InvalidInputError(f"unknown ordering strategy {ordering!r}")
        order = np.argsort(coords[:, 0], kind="stable")
    else:
        order = np.asarray(ordering, dtype=np.intp)
        if order.shape != (n,) or not np.array_equal(np.sort(order), np.arange(n)):
            raise InvalidInputError("ordering must be a permutation of range(n)")
    rank = np.empty(n, dtype=np.intp)
    rank[order] = np.arange(n)
    neighbors: list[tuple[int, ...]] = [()] * n
    for k in range(1, n):
        i = order[k]
        prev = order[:k]
        d = np.linalg.norm(coords[prev] - coords[i], axis=1)
        take = np.lexsort((prev, d))[:m]
        neighbors[i] = tuple(int(j) for j in prev[take])
    return DirectedNeighborSets(order=order, rank=rank, neighbors=tuple(neighbors), m=int(m))
