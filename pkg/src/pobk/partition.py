"""Row partitions, block centroids, the centroid cosine table and the
orthogonal-pair classification driving the block solvers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .sparse import SparseMatrix, spmv

DEFAULT_THR = 0.05
ZERO_EPS = 1e-12
KMEANS_MAX_ROUNDS = 300


def uniform_partition(m: int, k: int) -> list[range]:
    """Split ``0..m-1`` into ``k`` consecutive blocks.

    The first ``k - 1`` blocks hold ``m // k`` rows each and the last block
    takes whatever remains.
    """
    if not 1 <= k <= m:
        raise ValueError(f"need 1 <= k <= m, got k={k}, m={m}")
    size = m // k
    bounds = [i * size for i in range(k)] + [m]
    return [range(bounds[i], bounds[i + 1]) for i in range(k)]


def random_partition(m: int, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Uniform shuffle of the rows cut into ``uniform_partition`` sizes."""
    perm = rng.permutation(m)
    return [np.sort(perm[r.start : r.stop]) for r in uniform_partition(m, k)]


def _as_index_blocks(blocks, m: int) -> list[np.ndarray]:
    out = [np.asarray(b, dtype=np.int64) for b in blocks]
    seen = np.zeros(m, dtype=np.int64)
    for i, b in enumerate(out):
        if b.size == 0:
            raise ValueError(f"block {i} is empty")
        np.add.at(seen, b, 1)
    if np.any(seen != 1):
        raise ValueError("blocks must be disjoint and cover every row")
    return out


@dataclass(frozen=True, eq=False)
class BlockPartition:
    blocks: list  # index arrays (or ranges) into the rows
    centroids: np.ndarray  # (k, ncols), row i is the mean row of block i
    centroid_rhs: np.ndarray  # (k,)
    row_norms_sq: np.ndarray  # (nrows,)

    @property
    def k(self) -> int:
        return len(self.blocks)


def compute_centroids(A: SparseMatrix, f, blocks) -> BlockPartition:
    """Mean row and mean right-hand side of every block."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (A.nrows,):
        raise ValueError(f"rhs has shape {f.shape}, expected ({A.nrows},)")
    idx = _as_index_blocks(blocks, A.nrows)
    k = len(idx)
    sizes = np.array([b.size for b in idx], dtype=np.float64)
    owner = np.empty(A.nrows, dtype=np.int64)
    for i, b in enumerate(idx):
        owner[b] = i
    avg = sp.csr_matrix(
        (1.0 / sizes[owner], (owner, np.arange(A.nrows))), shape=(k, A.nrows)
    )
    centroids = (avg @ A.csr).toarray()
    return BlockPartition(list(blocks), centroids, avg @ f, A.row_norms_sq.copy())


@dataclass(frozen=True, eq=False)
class CosineTable:
    C: np.ndarray

    @property
    def k(self) -> int:
        return int(self.C.shape[0])


def cosine_table(p: BlockPartition) -> CosineTable:
    """|cos| of the angle between every pair of block centroids.

    Each unordered pair is evaluated once and mirrored; the diagonal is 1.
    """
    cen = p.centroids
    norms = np.linalg.norm(cen, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"block {int(zero[0])} has a zero centroid; cosine undefined")
    k = cen.shape[0]
    C = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            c = abs(float(np.dot(cen[i], cen[j]))) / (norms[i] * norms[j])
            C[i, j] = C[j, i] = c
    return CosineTable(C)


@dataclass(frozen=True)
class OrthoClassification:
    oclass: list  # [(i, j), ...] with i < j, 0-based
    nclass: list  # unpaired block indices, ascending
    thr: float


def classify_orthogonal(table: CosineTable, thr: float = DEFAULT_THR) -> OrthoClassification:
    """Greedily pair each unpaired block with the first later unpaired block
    whose cosine is below ``thr``; everything left over goes to ``nclass``."""
    if not 0 < thr < 1:
        raise ValueError(f"thr must lie in (0, 1), got {thr}")
    C = table.C
    k = table.k
    used = [False] * k
    pairs = []
    for i in range(k):
        if used[i]:
            continue
        for j in range(i + 1, k):
            if not used[j] and C[i, j] < thr:
                pairs.append((i, j))
                used[i] = used[j] = True
                break
    rest = [i for i in range(k) if not used[i]]
    return OrthoClassification(pairs, rest, thr)


def zn_nn_metrics(table: CosineTable, zero_eps: float = ZERO_EPS) -> tuple[float, float]:
    """Orthogonality proportion ``zn`` and non-orthogonality severity ``nn``.

    Both are taken over all ``k * k`` entries, diagonal included.
    """
    C = np.asarray(table.C)
    num = C.size
    is_zero = np.abs(C) < zero_eps
    n1 = int(is_zero.sum())
    nonzero = C[~is_zero]
    n2 = nonzero.size
    nm = float(nonzero.mean()) if n2 else 0.0
    return n1 / num, n2 * nm / num


# -- k-means -----------------------------------------------------------------

def _sq_dists(X, sq_norms, centers):
    cross = X @ centers.T
    if sp.issparse(cross):
        cross = cross.toarray()
    d = sq_norms[:, None] - 2.0 * np.asarray(cross) + np.einsum("ij,ij->i", centers, centers)[None, :]
    np.maximum(d, 0.0, out=d)
    return d


def _row(X, i):
    if sp.issparse(X):
        return X[i].toarray().ravel()
    return np.asarray(X[i], dtype=np.float64)


def kmeans(points, k: int, seed: int = 0, max_rounds: int = KMEANS_MAX_ROUNDS) -> list[np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding, Euclidean metric.

    ``points`` is an ``(n, d)`` array, a scipy sparse matrix or a
    :class:`SparseMatrix`. Returns ``k`` nonempty index arrays ordered by
    their smallest member. Randomness comes only from
    ``numpy.random.default_rng(seed)`` (PCG64).
    """
    if isinstance(points, SparseMatrix):
        X = points.csr
    elif sp.issparse(points):
        X = sp.csr_matrix(points, dtype=np.float64)
    else:
        X = np.asarray(points, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
    n = X.shape[0]
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of points {n}")
    if sp.issparse(X):
        sq_norms = np.asarray(X.multiply(X).sum(axis=1)).ravel()
    else:
        sq_norms = np.einsum("ij,ij->i", X, X)
    rng = np.random.default_rng(seed)

    # k-means++
    chosen = [int(rng.integers(n))]
    centers = _row(X, chosen[0])[None, :]
    closest = _sq_dists(X, sq_norms, centers)[:, 0]
    for _ in range(1, k):
        closest[chosen] = 0.0
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=closest / total))
        else:
            free = np.setdiff1d(np.arange(n), chosen)
            nxt = int(free[rng.integers(free.size)])
        chosen.append(nxt)
        c = _row(X, nxt)[None, :]
        centers = np.vstack([centers, c])
        closest = np.minimum(closest, _sq_dists(X, sq_norms, c)[:, 0])

    labels = None
    for _ in range(max_rounds):
        d = _sq_dists(X, sq_norms, centers)
        new = np.argmin(d, axis=1)
        counts = np.bincount(new, minlength=k)
        for empty in np.flatnonzero(counts == 0):
            # refill with the point farthest from its own centroid among
            # clusters that can spare one
            own = d[np.arange(n), new].copy()
            own[counts[new] <= 1] = -1.0
            far = int(np.argmax(own))
            counts[new[far]] -= 1
            new[far] = empty
            counts[empty] = 1
            d[far] = np.inf
            d[far, empty] = 0.0
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        ind = sp.csr_matrix((np.ones(n), (labels, np.arange(n))), shape=(k, n))
        sums = ind @ X
        if sp.issparse(sums):
            sums = sums.toarray()
        centers = np.asarray(sums) / np.bincount(labels, minlength=k)[:, None]

    clusters = [np.flatnonzero(labels == c) for c in range(k)]
    clusters.sort(key=lambda c: int(c[0]))
    return clusters


def standardized_distances(A: SparseMatrix, f, x0) -> np.ndarray:
    """Distance ``|f_i - A_i x0| / ||A_i||`` from ``x0`` to every row hyperplane."""
    norms_sq = A.row_norms_sq
    zero = np.flatnonzero(norms_sq == 0)
    if zero.size:
        raise ValueError(f"row {int(zero[0])} is zero; distance undefined")
    r = np.asarray(f, dtype=np.float64) - spmv(A, x0)
    return np.abs(r) / np.sqrt(norms_sq)


def kmeans_row_partition(A: SparseMatrix, f, k: int, seed: int = 0) -> list[np.ndarray]:
    """Cluster the rows of the augmented matrix ``[A | f]``."""
    aug = sp.hstack([A.csr, sp.csr_matrix(np.asarray(f, dtype=np.float64)[:, None])], format="csr")
    return kmeans(aug, k, seed)


def kmeans_distance_partition(A: SparseMatrix, f, k: int, seed: int = 0, x0=None) -> list[np.ndarray]:
    """Cluster rows by their standardized distance to ``x0`` (zero by default)."""
    if x0 is None:
        x0 = np.zeros(A.ncols)
    return kmeans(standardized_distances(A, f, x0), k, seed)
