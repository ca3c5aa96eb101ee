"""Reverse Cuthill-McKee reordering and bandwidth diagnostics."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .sparse import Permutation, SparseMatrix, apply_permutation, permute_vector

MAX_PERIPHERAL_SWEEPS = 10


def _require_square(A: SparseMatrix):
    if A.nrows != A.ncols:
        raise ValueError(f"square matrix required, got {A.nrows}x{A.ncols}")


@dataclass(frozen=True, eq=False)
class AdjacencyGraph:
    """Undirected graph on the pattern of ``A + A^T`` without self loops."""

    indptr: np.ndarray
    indices: np.ndarray
    degree: np.ndarray

    @classmethod
    def from_matrix(cls, A: SparseMatrix) -> "AdjacencyGraph":
        _require_square(A)
        pattern = A.csr.copy()
        pattern.data = np.ones_like(pattern.data)
        sym = (pattern + pattern.T).tocsr()
        sym.setdiag(0)
        sym.eliminate_zeros()
        sym.sort_indices()
        indptr = sym.indptr.astype(np.int64)
        return cls(indptr, sym.indices.astype(np.int64), np.diff(indptr))

    @property
    def n(self) -> int:
        return int(self.degree.size)

    def neighbors(self, v: int) -> np.ndarray:
        return self.indices[self.indptr[v] : self.indptr[v + 1]]


def bandwidth(A: SparseMatrix) -> int:
    """Largest ``|i - j|`` over the stored nonzeros (0 for empty matrices)."""
    _require_square(A)
    if A.nnz == 0:
        return 0
    rows, cols, _ = A.coo()
    return int(np.max(np.abs(rows - cols)))


class _Traversal:
    # adjacency as Python lists: BFS is interpreter-bound, list access is
    # several times faster than numpy scalar indexing
    def __init__(self, g: AdjacencyGraph):
        ptr = g.indptr.tolist()
        idx = g.indices.tolist()
        self.deg = g.degree.tolist()
        self.adj = [idx[ptr[v] : ptr[v + 1]] for v in range(g.n)]

    def component(self, root: int, seen: list) -> list:
        comp = [root]
        seen[root] = True
        q = deque(comp)
        while q:
            v = q.popleft()
            for w in self.adj[v]:
                if not seen[w]:
                    seen[w] = True
                    comp.append(w)
                    q.append(w)
        return comp

    def levels(self, root: int) -> list:
        depth = {root: 0}
        structure = [[root]]
        while True:
            nxt = []
            for v in structure[-1]:
                for w in self.adj[v]:
                    if w not in depth:
                        depth[w] = len(structure)
                        nxt.append(w)
            if not nxt:
                return structure
            structure.append(nxt)

    def pseudo_peripheral(self, comp: list) -> int:
        deg = self.deg
        start = min(comp, key=lambda v: (deg[v], v))
        ecc = len(self.levels(start))
        for _ in range(MAX_PERIPHERAL_SWEEPS):
            last = self.levels(start)[-1]
            cand = min(last, key=lambda v: (deg[v], v))
            cand_ecc = len(self.levels(cand))
            if cand_ecc <= ecc:
                break
            start, ecc = cand, cand_ecc
        return start

    def cuthill_mckee(self, start: int, seen: list) -> list:
        deg = self.deg
        order = [start]
        seen[start] = True
        head = 0
        while head < len(order):
            v = order[head]
            head += 1
            fresh = [w for w in self.adj[v] if not seen[w]]
            fresh.sort(key=lambda w: (deg[w], w))
            for w in fresh:
                seen[w] = True
            order.extend(fresh)
        return order


def rcm_order(A: SparseMatrix) -> Permutation:
    """Reverse Cuthill-McKee permutation of a square matrix.

    Asymmetric patterns are symmetrised first. Components are handled in
    order of their smallest original index, each starting from a
    pseudo-peripheral node; all ties break on the smaller original index,
    so the result is fully deterministic.
    """
    g = AdjacencyGraph.from_matrix(A)
    t = _Traversal(g)
    in_comp = [False] * g.n
    placed = [False] * g.n
    order = []
    for root in range(g.n):
        if in_comp[root]:
            continue
        comp = t.component(root, in_comp)
        order.extend(t.cuthill_mckee(t.pseudo_peripheral(comp), placed))
    order.reverse()
    return Permutation.from_order(order)


class Preprocessed(NamedTuple):
    matrix: SparseMatrix
    rhs: np.ndarray
    perm: Permutation


def preprocess_system(A: SparseMatrix, f) -> Preprocessed:
    """RCM-reorder ``Ax = f`` into ``(PAP^T, Pf, P)``."""
    _require_square(A)
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (A.nrows,):
        raise ValueError(f"rhs has shape {f.shape}, expected ({A.nrows},)")
    p = rcm_order(A)
    return Preprocessed(apply_permutation(A, p, "both"), permute_vector(f, p), p)


def scipy_rcm_bandwidth(A: SparseMatrix) -> int:
    """Bandwidth after scipy's own RCM, for cross-checking only."""
    from scipy.sparse.csgraph import reverse_cuthill_mckee

    pattern = A.csr.copy()
    pattern.data = np.ones_like(pattern.data)
    sym = sp.csr_matrix(pattern + pattern.T)
    order = reverse_cuthill_mckee(sym, symmetric_mode=True)
    return bandwidth(apply_permutation(A, Permutation.from_order(order), "both"))
