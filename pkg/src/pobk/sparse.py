"""Compressed sparse row storage, Matrix Market I/O, permutations and the
minimum-norm least-squares kernel used by every block projection."""

from __future__ import annotations

import gzip
import io
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import BinaryIO, Iterable, Literal

import numpy as np
import scipy.sparse as sp

#: singular values below ``PINV_RTOL * sigma_max`` are treated as zero
PINV_RTOL = 1e-12


class MatrixMarketError(ValueError):
    """Base class for Matrix Market parse failures.

    ``lineno`` is the 1-based line in the source where parsing stopped.
    """

    def __init__(self, message: str, lineno: int):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class MatrixMarketHeaderError(MatrixMarketError):
    pass


class MatrixMarketIndexError(MatrixMarketError):
    pass


class MatrixMarketFieldError(MatrixMarketError):
    pass


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Immutable real matrix in compressed sparse row form.

    Build instances with :meth:`from_coo`, :meth:`from_dense` or
    :meth:`from_scipy`; those canonicalise the arrays (sorted columns,
    duplicates summed, explicit zeros dropped). The raw constructor
    validates but does not canonicalise.
    """

    nrows: int
    ncols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ro = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        ci = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        va = np.ascontiguousarray(self.values, dtype=np.float64)
        if ro.shape != (self.nrows + 1,) or ro[0] != 0 or ro[-1] != va.size:
            raise ValueError("row_offsets inconsistent with nrows / nnz")
        if ci.size != va.size:
            raise ValueError("col_indices and values differ in length")
        if np.any(np.diff(ro) < 0):
            raise ValueError("row_offsets must be non-decreasing")
        if ci.size and (ci.min() < 0 or ci.max() >= self.ncols):
            raise ValueError("column index out of range")
        # strictly increasing columns within each row
        if ci.size > 1:
            step = np.diff(ci)
            row_start = np.zeros(ci.size, dtype=bool)
            row_start[ro[1:-1][ro[1:-1] < ci.size]] = True
            if np.any((step <= 0) & ~row_start[1:]):
                raise ValueError("column indices must be strictly increasing within rows")
        object.__setattr__(self, "row_offsets", _readonly(ro.copy()))
        object.__setattr__(self, "col_indices", _readonly(ci.copy()))
        object.__setattr__(self, "values", _readonly(va.copy()))

    # -- construction -----------------------------------------------------
    @classmethod
    def from_scipy(cls, M) -> "SparseMatrix":
        M = sp.csr_matrix(M, dtype=np.float64, copy=True)
        M.sum_duplicates()
        M.eliminate_zeros()
        M.sort_indices()
        return cls(M.shape[0], M.shape[1], M.indptr, M.indices, M.data)

    @classmethod
    def from_coo(cls, rows, cols, vals, shape: tuple[int, int]) -> "SparseMatrix":
        M = sp.coo_matrix(
            (np.asarray(vals, dtype=np.float64), (np.asarray(rows), np.asarray(cols))),
            shape=shape,
        )
        return cls.from_scipy(M.tocsr())

    @classmethod
    def from_dense(cls, D) -> "SparseMatrix":
        D = np.atleast_2d(np.asarray(D, dtype=np.float64))
        return cls.from_scipy(sp.csr_matrix(D))

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls.from_scipy(sp.identity(n, format="csr"))

    # -- views ------------------------------------------------------------
    @property
    def shape(self) -> tuple[int, int]:
        return (self.nrows, self.ncols)

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @cached_property
    def csr(self) -> sp.csr_matrix:
        """Read-only scipy view used by the numeric kernels."""
        return sp.csr_matrix(
            (self.values, self.col_indices, self.row_offsets), shape=self.shape
        )

    @cached_property
    def row_norms_sq(self) -> np.ndarray:
        sq = self.values * self.values
        out = np.zeros(self.nrows)
        nz = np.diff(self.row_offsets) > 0
        out[nz] = np.add.reduceat(sq, self.row_offsets[:-1][nz])
        return _readonly(out)

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
        return self.col_indices[lo:hi], self.values[lo:hi]

    def coo(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rows = np.repeat(np.arange(self.nrows), np.diff(self.row_offsets))
        return rows, self.col_indices.copy(), self.values.copy()

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self.csr.T)

    def __repr__(self):
        return f"SparseMatrix({self.nrows}x{self.ncols}, nnz={self.nnz})"


@dataclass(frozen=True, eq=False)
class Permutation:
    """Bijection on ``0..n-1``.

    ``forward[i]`` is the new position of old index ``i``; ``inverse`` maps
    new positions back to old indices, so ``inverse`` is also the visiting
    order that produced the permutation.
    """

    forward: np.ndarray
    inverse: np.ndarray = field(default=None)

    def __post_init__(self):
        fwd = np.asarray(self.forward, dtype=np.int64).copy()
        n = fwd.size
        if not np.array_equal(np.sort(fwd), np.arange(n)):
            raise ValueError("forward is not a bijection on 0..n-1")
        inv = np.empty(n, dtype=np.int64)
        inv[fwd] = np.arange(n)
        if self.inverse is not None and not np.array_equal(
            np.asarray(self.inverse), inv
        ):
            raise ValueError("inverse does not invert forward")
        object.__setattr__(self, "forward", _readonly(fwd))
        object.__setattr__(self, "inverse", _readonly(inv))

    @classmethod
    def from_order(cls, order) -> "Permutation":
        """Permutation placing ``order[n]`` at new position ``n``."""
        order = np.asarray(order, dtype=np.int64)
        fwd = np.empty(order.size, dtype=np.int64)
        fwd[order] = np.arange(order.size)
        return cls(fwd)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "Permutation":
        return cls(rng.permutation(n))

    @property
    def size(self) -> int:
        return int(self.forward.size)

    def inverted(self) -> "Permutation":
        return Permutation(self.inverse)

    def matrix(self) -> np.ndarray:
        """Dense P with ``(P v)[forward[i]] = v[i]``."""
        P = np.zeros((self.size, self.size))
        P[self.forward, np.arange(self.size)] = 1.0
        return P


# -- Matrix Market ---------------------------------------------------------

def _open_source(source) -> BinaryIO:
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
        if data[:2] == b"\x1f\x8b":
            data = gzip.decompress(data)
        return io.BytesIO(data)
    if isinstance(source, (str, os.PathLike)):
        path = os.fspath(source)
        if path.endswith(".gz"):
            return gzip.open(path, "rb")
        return open(path, "rb")
    return source


def _iter_lines(stream) -> Iterable[str]:
    for raw in stream:
        yield raw.decode("ascii", errors="replace") if isinstance(raw, bytes) else raw


def load_matrix_market(source) -> SparseMatrix:
    """Parse a Matrix Market coordinate file.

    ``source`` may be a path (``.gz`` allowed), raw bytes, or a binary/text
    stream. Only ``real``/``integer`` fields with ``general``/``symmetric``
    symmetry are accepted. Duplicate coordinates are summed and explicit
    zeros dropped.
    """
    stream = _open_source(source)
    close = stream is not source
    try:
        return _parse(_iter_lines(stream))
    finally:
        if close:
            stream.close()


def _parse(lines: Iterable[str]) -> SparseMatrix:
    it = iter(lines)
    lineno = 1
    try:
        header = next(it)
    except StopIteration:
        raise MatrixMarketHeaderError("empty input", 1) from None
    tokens = header.strip().split()
    if len(tokens) != 5 or tokens[0] != "%%MatrixMarket":
        raise MatrixMarketHeaderError(f"bad header {header.strip()!r}", lineno)
    obj, fmt, fld, sym = (t.lower() for t in tokens[1:])
    if obj != "matrix" or fmt != "coordinate":
        raise MatrixMarketHeaderError(f"unsupported object/format {obj} {fmt}", lineno)
    if fld not in ("real", "integer", "double"):
        raise MatrixMarketFieldError(f"unsupported field {fld!r}", lineno)
    if sym not in ("general", "symmetric"):
        raise MatrixMarketFieldError(f"unsupported symmetry {sym!r}", lineno)

    size = None
    for line in it:
        lineno += 1
        s = line.strip()
        if not s or s.startswith("%"):
            continue
        parts = s.split()
        if len(parts) != 3:
            raise MatrixMarketHeaderError(f"bad size line {s!r}", lineno)
        try:
            size = tuple(int(p) for p in parts)
        except ValueError:
            raise MatrixMarketHeaderError(f"bad size line {s!r}", lineno) from None
        break
    if size is None:
        raise MatrixMarketHeaderError("missing size line", lineno)
    nrows, ncols, nent = size
    if nrows < 0 or ncols < 0 or nent < 0:
        raise MatrixMarketHeaderError("negative dimension", lineno)

    rows = np.empty(nent, dtype=np.int64)
    cols = np.empty(nent, dtype=np.int64)
    vals = np.empty(nent, dtype=np.float64)
    n = 0
    for line in it:
        lineno += 1
        s = line.strip()
        if not s or s.startswith("%"):
            continue
        if n >= nent:
            raise MatrixMarketIndexError(f"more than {nent} entries", lineno)
        parts = s.split()
        if len(parts) != 3:
            raise MatrixMarketIndexError(f"expected 'i j value', got {s!r}", lineno)
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise MatrixMarketIndexError(f"unparseable entry {s!r}", lineno) from None
        if not (1 <= i <= nrows and 1 <= j <= ncols):
            raise MatrixMarketIndexError(f"index ({i}, {j}) outside {nrows}x{ncols}", lineno)
        rows[n], cols[n], vals[n] = i - 1, j - 1, v
        n += 1
    if n != nent:
        raise MatrixMarketIndexError(f"expected {nent} entries, found {n}", lineno)

    if sym == "symmetric":
        off = rows != cols
        rows, cols, vals = (
            np.concatenate([rows, cols[off]]),
            np.concatenate([cols, rows[off]]),
            np.concatenate([vals, vals[off]]),
        )
    return SparseMatrix.from_coo(rows, cols, vals, (nrows, ncols))


def write_matrix_market(A: SparseMatrix, dest) -> None:
    """Write ``A`` as a general real coordinate file with round-trip precision."""
    rows, cols, vals = A.coo()
    buf = io.StringIO()
    buf.write("%%MatrixMarket matrix coordinate real general\n")
    buf.write(f"{A.nrows} {A.ncols} {A.nnz}\n")
    for i, j, v in zip(rows.tolist(), cols.tolist(), vals.tolist()):
        buf.write(f"{i + 1} {j + 1} {v!r}\n")
    text = buf.getvalue().encode("ascii")
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "wb") as fh:
            fh.write(text)
    else:
        dest.write(text)


# -- kernels -----------------------------------------------------------------

def spmv(A: SparseMatrix, x) -> np.ndarray:
    """``A @ x``; each row is accumulated in ascending column order."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.ncols,):
        raise ValueError(f"x has shape {x.shape}, expected ({A.ncols},)")
    return A.csr @ x


def row_block(A: SparseMatrix, rows) -> SparseMatrix:
    """Rows ``rows`` of ``A`` as a new matrix.

    ``rows`` is a ``range``/``slice`` for a contiguous block or any index
    array for a gathered one (random and k-means partitions).
    """
    if isinstance(rows, slice):
        rows = range(*rows.indices(A.nrows))
    if isinstance(rows, range):
        if rows.step != 1:
            rows = np.arange(rows.start, rows.stop, rows.step)
        else:
            if len(rows) == 0 or rows.start < 0 or rows.stop > A.nrows:
                raise IndexError(f"row range {rows} empty or outside [0, {A.nrows})")
            lo, hi = A.row_offsets[rows.start], A.row_offsets[rows.stop]
            return SparseMatrix(
                len(rows),
                A.ncols,
                A.row_offsets[rows.start : rows.stop + 1] - lo,
                A.col_indices[lo:hi],
                A.values[lo:hi],
            )
    idx = np.asarray(rows, dtype=np.int64)
    if idx.size == 0 or idx.min() < 0 or idx.max() >= A.nrows:
        raise IndexError("row block empty or out of range")
    sub = A.csr[idx]
    return SparseMatrix(idx.size, A.ncols, sub.indptr, sub.indices, sub.data)


def apply_permutation(
    A: SparseMatrix, p: Permutation, side: Literal["rows", "cols", "both"] = "both"
) -> SparseMatrix:
    """Return ``PA`` (rows), ``AP^T`` (cols) or ``PAP^T`` (both)."""
    rows, cols, vals = A.coo()
    if side in ("rows", "both"):
        if p.size != A.nrows:
            raise ValueError(f"permutation of size {p.size} for {A.nrows} rows")
        rows = p.forward[rows]
    if side in ("cols", "both"):
        if p.size != A.ncols:
            raise ValueError(f"permutation of size {p.size} for {A.ncols} columns")
        cols = p.forward[cols]
    if side not in ("rows", "cols", "both"):
        raise ValueError(f"unknown side {side!r}")
    order = np.lexsort((cols, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    offsets = np.zeros(A.nrows + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=A.nrows), out=offsets[1:])
    return SparseMatrix(A.nrows, A.ncols, offsets, cols, vals)


def permute_vector(
    v, p: Permutation, direction: Literal["forward", "inverse"] = "forward"
) -> np.ndarray:
    """``P v`` for ``forward``, ``P^T v`` for ``inverse``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (p.size,):
        raise ValueError(f"vector of shape {v.shape} for permutation of size {p.size}")
    if direction == "forward":
        out = np.empty_like(v)
        out[p.forward] = v
        return out
    if direction == "inverse":
        return v[p.forward]
    raise ValueError(f"unknown direction {direction!r}")


class BlockPseudoinverse:
    """Truncated-SVD factorisation of a row block, applied as ``B^+ r``.

    Only the columns the block touches are densified, so the factor costs
    ``rows x active_columns`` rather than ``rows x ncols``.
    """

    def __init__(self, B: SparseMatrix, rtol: float = PINV_RTOL):
        self.block = B
        rows = np.repeat(np.arange(B.nrows), np.diff(B.row_offsets))
        self._factor(B.nrows, B.ncols, rows, B.col_indices, B.values, rtol)

    @classmethod
    def gather(cls, A: SparseMatrix, rows, rtol: float = PINV_RTOL) -> "BlockPseudoinverse":
        """Factor rows ``rows`` of ``A`` straight from its CSR arrays.

        Cheaper than ``BlockPseudoinverse(row_block(A, rows))`` for small
        throwaway samples; ``block`` is left unset, use :meth:`residual`.
        """
        rows = np.asarray(rows, dtype=np.int64)
        starts, ends = A.row_offsets[rows], A.row_offsets[rows + 1]
        counts = ends - starts
        # flat positions of every stored entry of the selected rows
        pos = np.repeat(starts - np.cumsum(counts) + counts, counts) + np.arange(counts.sum())
        self = cls.__new__(cls)
        self.block = None
        self._factor(rows.size, A.ncols, np.repeat(np.arange(rows.size), counts),
                     A.col_indices[pos], A.values[pos], rtol)
        return self

    def _factor(self, nrows, ncols, rows, cols, vals, rtol):
        self.cols, local = np.unique(cols, return_inverse=True)
        self.ncols = ncols
        self.dense = np.zeros((nrows, self.cols.size))
        self.dense[rows, local] = vals
        if self.cols.size == 0:
            self.rank = 0
            self._left = np.zeros((0, nrows))
            self._right = np.zeros((0, 0))
            self.singular_values = np.zeros(0)
            return
        U, s, Vt = np.linalg.svd(self.dense, full_matrices=False)
        rank = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
        self.rank = rank
        self.singular_values = s
        # B^+ = V_r diag(1/s_r) U_r^T, kept as two factors
        self._left = U[:, :rank].T / s[:rank, None]
        self._right = Vt[:rank].T

    def residual(self, r, x) -> np.ndarray:
        """``r - B x`` using the densified active columns."""
        return r - self.dense @ x[self.cols]

    def apply(self, r) -> np.ndarray:
        """Minimum-norm least-squares solution restricted to active columns."""
        if self.rank == 0:
            return np.zeros(self.cols.size)
        return self._right @ (self._left @ r)

    def solve(self, r) -> np.ndarray:
        out = np.zeros(self.ncols)
        out[self.cols] = self.apply(r)
        return out


def min_norm_lstsq(B: SparseMatrix, r, rtol: float = PINV_RTOL) -> np.ndarray:
    """Minimum-norm least-squares solution ``z = B^+ r``.

    Singular values below ``rtol * sigma_max`` are discarded, so
    rank-deficient blocks are handled without special casing.
    """
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (B.nrows,):
        raise ValueError(f"r has shape {r.shape}, expected ({B.nrows},)")
    return BlockPseudoinverse(B, rtol).solve(r)
