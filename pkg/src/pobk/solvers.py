"""Kaczmarz-type solvers: the row kernel, the greedy block family
(GRBK, RBK(k), GREBK(k)), averaged randomized block Kaczmarz (aRBK) and
the RCM-preprocessed orthogonal block method (POBK).

All randomness flows from ``numpy.random.default_rng(cfg.seed)`` (PCG64),
so a fixed seed reproduces a run bit for bit.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .partition import (
    DEFAULT_THR,
    BlockPartition,
    classify_orthogonal,
    compute_centroids,
    cosine_table,
    kmeans_distance_partition,
    kmeans_row_partition,
    random_partition,
    uniform_partition,
)
from .reorder import preprocess_system
from .sparse import (
    PINV_RTOL,
    BlockPseudoinverse,
    Permutation,
    SparseMatrix,
    permute_vector,
    row_block,
    spmv,
)

log = logging.getLogger(__name__)

STALL_WINDOW = 50
STALL_RTOL = 1e-14


class Termination(str, Enum):
    CONVERGED = "converged"
    ITERATION_CAP = "iteration_cap"
    STAGNATION = "stagnation"


@dataclass
class SolverConfig:
    tol: float = 1e-6
    max_iters: int = 500_000
    theta: float = 0.5
    k: int = 20
    thr: float = DEFAULT_THR
    alpha: float = 1.0
    weights: Optional[np.ndarray] = None
    sample_size: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if not 0 < self.alpha <= 2:
            raise ValueError("alpha must lie in (0, 2]")
        if not 0 < self.thr < 1:
            raise ValueError("thr must lie in (0, 1)")
        if self.k < 1 or self.max_iters < 0:
            raise ValueError("k must be >= 1 and max_iters >= 0")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if np.any(w < 0) or not np.isclose(w.sum(), 1.0):
                raise ValueError("weights must be nonnegative and sum to 1")
            self.weights = w


@dataclass
class SolveReport:
    solution: np.ndarray
    iterations: int
    projections: int
    rse_trace: np.ndarray
    wall_time: float
    termination: Termination
    details: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.termination is Termination.CONVERGED

    @property
    def final_rse(self) -> float:
        return float(self.rse_trace[-1])


def rse(x, x_star) -> float:
    """Relative solution error ``||x - x*|| / ||x*||``."""
    x_star = np.asarray(x_star, dtype=np.float64)
    ref = np.linalg.norm(x_star)
    if ref == 0:
        raise ValueError("reference solution is zero; RSE undefined")
    return float(np.linalg.norm(np.asarray(x, dtype=np.float64) - x_star) / ref)


class _Monitor:
    """Error trace plus the stopping rule shared by every solver.

    Tracks RSE when ``x_star`` is known, otherwise the relative residual
    ``||f - Ax|| / ||f||``.
    """

    def __init__(self, A, f, x_star, cfg: SolverConfig):
        self.cfg = cfg
        self.trace = []
        if x_star is not None:
            x_star = np.asarray(x_star, dtype=np.float64)
            ref = np.linalg.norm(x_star)
            if ref == 0:
                raise ValueError("reference solution is zero; RSE undefined")
            self._err = lambda x: float(np.linalg.norm(x - x_star) / ref)
        else:
            ref = np.linalg.norm(f)
            if ref == 0:
                ref = 1.0
            self._err = lambda x: float(np.linalg.norm(f - A.csr @ x) / ref)

    def check(self, x, iterations: int) -> Optional[Termination]:
        e = self._err(x)
        self.trace.append(e)
        if e <= self.cfg.tol:
            return Termination.CONVERGED
        if len(self.trace) > STALL_WINDOW:
            old = self.trace[-STALL_WINDOW - 1]
            if old - e <= STALL_RTOL * old:
                return Termination.STAGNATION
        if iterations >= self.cfg.max_iters:
            return Termination.ITERATION_CAP
        return None


def _start(A: SparseMatrix, f, x0):
    if A.nrows != A.ncols:
        raise ValueError(f"square system required, got {A.nrows}x{A.ncols}")
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (A.nrows,):
        raise ValueError(f"rhs has shape {f.shape}, expected ({A.nrows},)")
    x = np.zeros(A.ncols) if x0 is None else np.array(x0, dtype=np.float64)
    return f, x


# -- projection kernels ---------------------------------------------------------

def row_project(A: SparseMatrix, f, x, i: int) -> np.ndarray:
    """Project ``x`` onto the hyperplane ``A_i x = f_i``."""
    cols, vals = A.row(i)
    nrm = float(vals @ vals)
    if nrm == 0:
        raise ValueError(f"row {i} is zero")
    x = np.array(x, dtype=np.float64)
    step = (f[i] - vals @ x[cols]) / nrm
    x[cols] += step * vals
    return x


def _project_inplace(P: BlockPseudoinverse, f_tau, x, alpha: float = 1.0) -> None:
    res = f_tau - P.block.csr @ x
    x[P.cols] += alpha * P.apply(res)


def block_project(A_tau: SparseMatrix, f_tau, x, rtol: float = PINV_RTOL) -> np.ndarray:
    """``x + A_tau^+ (f_tau - A_tau x)``: the nearest point of the block's
    solution set when the block is consistent."""
    x = np.array(x, dtype=np.float64)
    if x.shape != (A_tau.ncols,):
        raise ValueError(f"x has shape {x.shape}, expected ({A_tau.ncols},)")
    _project_inplace(BlockPseudoinverse(A_tau, rtol), np.asarray(f_tau, dtype=np.float64), x)
    return x


class _BlockCache:
    def __init__(self, A: SparseMatrix, f, blocks):
        self.A, self.f, self.blocks = A, f, blocks
        self._factors = {}
        self._rhs = {}

    def get(self, i: int):
        if i not in self._factors:
            b = self.blocks[i]
            self._factors[i] = BlockPseudoinverse(row_block(self.A, b))
            self._rhs[i] = self.f[np.asarray(b) if not isinstance(b, range) else slice(b.start, b.stop)]
        return self._factors[i], self._rhs[i]


# -- randomized row Kaczmarz --------------------------------------------------

def rk_solve(A, f, cfg: SolverConfig, x_star=None, x0=None, callback=None) -> SolveReport:
    """Randomized Kaczmarz with rows drawn proportionally to ``||A_i||^2``.

    One iteration is one row projection.
    """
    t0 = time.perf_counter()
    f, x = _start(A, f, x0)
    rng = np.random.default_rng(cfg.seed)
    p = A.row_norms_sq / A.row_norms_sq.sum()
    ptr, cols_all, vals_all = A.row_offsets, A.col_indices, A.values
    norms = A.row_norms_sq
    mon = _Monitor(A, f, x_star, cfg)
    it = 0
    status = mon.check(x, it)
    batch = 4096
    while status is None:
        for i in rng.choice(A.nrows, size=batch, p=p):
            lo, hi = ptr[i], ptr[i + 1]
            cols, vals = cols_all[lo:hi], vals_all[lo:hi]
            x[cols] += ((f[i] - vals @ x[cols]) / norms[i]) * vals
            it += 1
            if callback is not None:
                callback(x)
            status = mon.check(x, it)
            if status is not None:
                break
    return SolveReport(x, it, it, np.array(mon.trace), time.perf_counter() - t0, status)


# -- greedy block family --------------------------------------------------------

def greedy_selection(centroids, centroid_rhs, x, theta: float):
    """Greedy admissible set and sampling weights over blocks.

    Returns ``(eps, admissible, probs)``; ``probs`` is ``None`` when the
    centroid residual vanishes.
    """
    rbar = centroid_rhs - centroids @ x
    cn2 = np.einsum("ij,ij->i", centroids, centroids)
    rn2 = float(rbar @ rbar)
    if rn2 == 0:
        return np.inf, np.zeros(rbar.size, dtype=bool), None
    live = cn2 > 0  # a zero centroid carries no direction and is never picked
    r2 = rbar * rbar
    ratio = np.where(live, r2 / np.where(live, cn2, 1.0), 0.0)
    eps = theta / rn2 * ratio.max() + (1 - theta) / cn2.sum()
    admissible = live & (r2 >= eps * rn2 * cn2)
    rt2 = np.where(admissible, r2, 0.0)
    return eps, admissible, rt2 / rt2.sum()


def greedy_block_solve(
    A: SparseMatrix,
    f,
    partition: BlockPartition,
    cfg: SolverConfig,
    variant: str = "grbk",
    x_star=None,
    x0=None,
    callback=None,
) -> SolveReport:
    """Greedy randomized block Kaczmarz on a prebuilt partition.

    Centroid residuals choose the admissible blocks; the selected block is
    then projected onto in full. One iteration is one block projection.
    """
    t0 = time.perf_counter()
    f, x = _start(A, f, x0)
    rng = np.random.default_rng(cfg.seed)
    cache = _BlockCache(A, f, partition.blocks)
    cen, cf = partition.centroids, partition.centroid_rhs
    k = partition.k
    mon = _Monitor(A, f, x_star, cfg)
    it = 0
    status = mon.check(x, it)
    while status is None:
        _, _, probs = greedy_selection(cen, cf, x, cfg.theta)
        if probs is None:
            # centroid residual vanished while the error did not
            status = Termination.STAGNATION
            break
        tau = int(rng.choice(k, p=probs))
        P, f_tau = cache.get(tau)
        _project_inplace(P, f_tau, x)
        it += 1
        if callback is not None:
            callback(x)
        status = mon.check(x, it)
    return SolveReport(
        x, it, it, np.array(mon.trace), time.perf_counter() - t0, status,
        {"variant": variant, "k": k},
    )


def _greedy_variant(name, make_blocks):
    def solve(A, f, cfg: SolverConfig, x_star=None, x0=None, callback=None) -> SolveReport:
        t0 = time.perf_counter()
        f_arr, _ = _start(A, f, x0)
        blocks = make_blocks(A, f_arr, min(cfg.k, A.nrows), cfg.seed, x0)
        part = compute_centroids(A, f_arr, blocks)
        rep = greedy_block_solve(A, f_arr, part, cfg, name, x_star, x0, callback)
        rep.wall_time = time.perf_counter() - t0
        return rep

    solve.__name__ = f"{name}_solve"
    return solve


grbk_solve = _greedy_variant(
    "grbk", lambda A, f, k, seed, x0: random_partition(A.nrows, k, np.random.default_rng(seed))
)
grbk_solve.__doc__ = "GRBK: greedy block Kaczmarz on a seeded random row partition."

rbkk_solve = _greedy_variant(
    "rbkk", lambda A, f, k, seed, x0: kmeans_row_partition(A, f, k, seed)
)
rbkk_solve.__doc__ = "RBK(k): greedy block Kaczmarz on k-means clusters of the rows of [A | f]."

grebkk_solve = _greedy_variant(
    "grebkk", lambda A, f, k, seed, x0: kmeans_distance_partition(A, f, k, seed, x0)
)
grebkk_solve.__doc__ = (
    "GREBK(k): greedy block Kaczmarz on k-means clusters of the standardized "
    "distances from the starting point."
)


# -- averaged randomized block Kaczmarz ------------------------------------------

def arbk_solve(
    A: SparseMatrix,
    f,
    cfg: SolverConfig,
    x_star=None,
    x0=None,
    blocks=None,
    callback=None,
) -> SolveReport:
    """aRBK: every group projects from the same iterate using a random row
    sample, and the results are averaged with ``cfg.weights``.

    Groups default to a seeded random partition into ``cfg.k`` parts. One
    iteration is one averaged update over all groups.
    """
    t0 = time.perf_counter()
    f, x = _start(A, f, x0)
    rng = np.random.default_rng(cfg.seed)
    if blocks is None:
        blocks = random_partition(A.nrows, min(cfg.k, A.nrows), rng)
    groups = [np.asarray(b, dtype=np.int64) for b in blocks]
    n = len(groups)
    w = np.full(n, 1.0 / n) if cfg.weights is None else np.asarray(cfg.weights)
    if w.size != n:
        raise ValueError(f"{w.size} weights for {n} groups")
    sizes = [min(cfg.sample_size or max(1, g.size // 2), g.size) for g in groups]
    whole = _BlockCache(A, f, groups)
    mon = _Monitor(A, f, x_star, cfg)
    it = proj = 0
    status = mon.check(x, it)
    while status is None:
        step = np.zeros_like(x)
        for j, g in enumerate(groups):
            if sizes[j] == g.size:
                P, f_s = whole.get(j)
            else:
                S = np.sort(rng.choice(g, size=sizes[j], replace=False))
                P, f_s = BlockPseudoinverse.gather(A, S), f[S]
            step[P.cols] += w[j] * cfg.alpha * P.apply(P.residual(f_s, x))
            proj += 1
        x += step
        it += 1
        if callback is not None:
            callback(x)
        status = mon.check(x, it)
    return SolveReport(
        x, it, proj, np.array(mon.trace), time.perf_counter() - t0, status, {"k": n}
    )


# -- POBK -------------------------------------------------------------------------

def pobk_solve(
    A: SparseMatrix,
    f,
    cfg: SolverConfig,
    x_star=None,
    x0=None,
    callback=None,
    preprocess: bool = True,
) -> SolveReport:
    """Preprocessed orthogonal block Kaczmarz.

    The system is RCM-reordered, cut into ``cfg.k`` consecutive blocks and
    the blocks are paired by centroid orthogonality. Each iteration is one
    sweep: both halves of every orthogonal pair, then every unpaired block.
    The error is measured in the reordered frame (norms are permutation
    invariant) and the solution is mapped back at the end. ``callback``
    sees reordered iterates.
    """
    t0 = time.perf_counter()
    f, x = _start(A, f, x0)
    if preprocess:
        At, ft, perm = preprocess_system(A, f)
    else:
        At, ft, perm = A, f, Permutation.identity(A.nrows)
    xt = permute_vector(x, perm)
    xt_star = None if x_star is None else permute_vector(x_star, perm)

    blocks = uniform_partition(At.nrows, min(cfg.k, At.nrows))
    part = compute_centroids(At, ft, blocks)
    table = cosine_table(part)
    cls = classify_orthogonal(table, cfg.thr)
    sweep = [i for pair in cls.oclass for i in pair] + list(cls.nclass)
    cache = _BlockCache(At, ft, blocks)
    factors = [cache.get(i) for i in sweep]
    setup = time.perf_counter() - t0

    mon = _Monitor(At, ft, xt_star, cfg)
    it = 0
    status = mon.check(xt, it)
    while status is None:
        for P, f_tau in factors:
            _project_inplace(P, f_tau, xt)
            if callback is not None:
                callback(xt)
        it += 1
        status = mon.check(xt, it)
    x = permute_vector(xt, perm, "inverse")
    return SolveReport(
        x, it, it * len(sweep), np.array(mon.trace), time.perf_counter() - t0, status,
        {"perm": perm, "table": table, "classes": cls, "k": len(blocks), "setup_time": setup},
    )


# -- diagnostics ----------------------------------------------------------------

def block_singular_range(B: SparseMatrix, rtol: float = PINV_RTOL) -> tuple[float, float]:
    """Smallest nonzero and largest singular value of a block."""
    s = BlockPseudoinverse(B, rtol).singular_values
    if s.size == 0 or s[0] == 0:
        raise ValueError("block is zero")
    nz = s[s > rtol * s[0]]
    return float(nz[-1]), float(nz[0])


def block_spectral_bound(blocks, k: int) -> float:
    """Worst-case per-sweep contraction ``max_tau (1 - smin^2/smax^2)^k``."""
    if not blocks:
        raise ValueError("no blocks")
    worst = 0.0
    for B in blocks:
        smin, smax = block_singular_range(B)
        worst = max(worst, 1.0 - (smin / smax) ** 2)
    return worst**k


SOLVERS: dict[str, Callable[..., SolveReport]] = {
    "rk": rk_solve,
    "grbk": grbk_solve,
    "rbkk": rbkk_solve,
    "grebkk": grebkk_solve,
    "arbk": arbk_solve,
    "pobk": pobk_solve,
}


def solve(name: str, A, f, cfg: SolverConfig, x_star=None, x0=None) -> SolveReport:
    try:
        fn = SOLVERS[name]
    except KeyError:
        raise ValueError(f"unknown solver {name!r}; choose from {sorted(SOLVERS)}") from None
    return fn(A, f, cfg, x_star=x_star, x0=x0)
