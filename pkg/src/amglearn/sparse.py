"""Compressed-sparse-row matrix type and the kernels everything else builds on.

Conventions
-----------
* Values are stored single precision; kernels accumulate in double precision
  internally and round once on output.
* Dense vectors are plain one-dimensional numpy arrays.
* Structural zeros are first-class: products keep every entry of the symbolic
  pattern even when it cancels numerically. Entries disappear only through the
  explicit filtering ops (``mask_to_pattern``).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as _sp

from .errors import FormatError, PatternError, UsageError

__all__ = [
    "SparseMatrix",
    "spmv",
    "spgemm",
    "triple_product",
    "transpose",
    "diag",
    "frobenius_diff",
    "mask_to_pattern",
    "add_on_pattern",
    "save_binary",
    "load_binary",
    "save_matrix_market",
    "load_matrix_market",
]

_INDEX = np.int64
_VALUE = np.float32


@dataclass(frozen=True)
class SparseMatrix:
    """Immutable CSR matrix with int64 indices and float32 values.

    Invariants enforced at construction: ``row_offsets`` starts at 0, is
    nondecreasing and ends at nnz; column indices are strictly increasing
    within each row (canonical form, no duplicates); all indices in range.
    """

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "row_offsets", np.ascontiguousarray(self.row_offsets, dtype=_INDEX))
        object.__setattr__(self, "col_indices", np.ascontiguousarray(self.col_indices, dtype=_INDEX))
        object.__setattr__(self, "values", np.ascontiguousarray(self.values, dtype=_VALUE))
        ro, ci = self.row_offsets, self.col_indices
        if self.n_rows < 0 or self.n_cols < 0:
            raise UsageError("negative matrix dimension")
        if ro.shape != (self.n_rows + 1,):
            raise UsageError("row_offsets length must be n_rows + 1")
        if ro[0] != 0 or ro[-1] != len(ci) or len(ci) != len(self.values):
            raise UsageError("row_offsets endpoints inconsistent with nnz")
        if np.any(np.diff(ro) < 0):
            raise UsageError("row_offsets must be nondecreasing")
        if len(ci):
            if ci.min() < 0 or ci.max() >= self.n_cols:
                raise UsageError("column index out of range")
            # strictly increasing inside each row <=> sorted and duplicate-free
            interior = np.diff(ci) <= 0
            row_starts = np.zeros(len(ci) - 1, dtype=bool)
            starts = ro[1:-1]
            row_starts[starts[(starts > 0) & (starts < len(ci))] - 1] = True
            if np.any(interior & ~row_starts):
                raise UsageError("column indices must be strictly increasing within each row")

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_scipy(cls, m) -> "SparseMatrix":
        """Canonicalize any scipy sparse matrix (duplicates summed, indices sorted).

        Explicit zeros in the input are preserved.
        """
        m = m.tocsr(copy=True)
        m.sum_duplicates()
        m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)

    @classmethod
    def from_dense(cls, a, keep_zeros: bool = False) -> "SparseMatrix":
        a = np.asarray(a)
        if a.ndim != 2:
            raise UsageError("from_dense expects a 2-D array")
        if keep_zeros:
            n, m = a.shape
            ro = np.arange(n + 1, dtype=_INDEX) * m
            ci = np.tile(np.arange(m, dtype=_INDEX), n)
            return cls(n, m, ro, ci, a.reshape(-1))
        return cls.from_scipy(_sp.csr_matrix(a))

    @classmethod
    def from_coo(cls, n_rows, n_cols, rows, cols, vals) -> "SparseMatrix":
        m = _sp.coo_matrix((np.asarray(vals, dtype=np.float64), (rows, cols)), shape=(n_rows, n_cols))
        return cls.from_scipy(m.tocsr())

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        ro = np.arange(n + 1, dtype=_INDEX)
        ci = np.arange(n, dtype=_INDEX)
        return cls(n, n, ro, ci, np.ones(n, dtype=_VALUE))

    # -- views --------------------------------------------------------------

    @property
    def nnz(self) -> int:
        return int(self.row_offsets[-1])

    @property
    def shape(self) -> tuple:
        return (self.n_rows, self.n_cols)

    @cached_property
    def _csr64(self):
        # double-precision scipy view used by every kernel's accumulation
        return _sp.csr_matrix(
            (self.values.astype(np.float64), self.col_indices.copy(), self.row_offsets.copy()),
            shape=(self.n_rows, self.n_cols),
        )

    def to_scipy(self):
        return _sp.csr_matrix(
            (self.values.copy(), self.col_indices.copy(), self.row_offsets.copy()),
            shape=(self.n_rows, self.n_cols),
        )

    def to_dense(self) -> np.ndarray:
        return np.asarray(self._csr64.todense())

    def row_keys(self) -> np.ndarray:
        """Row-major linear key (row * n_cols + col) per stored entry, sorted."""
        rows = np.repeat(np.arange(self.n_rows, dtype=_INDEX), np.diff(self.row_offsets))
        return rows * self.n_cols + self.col_indices

    def same_pattern(self, other: "SparseMatrix") -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.row_offsets, other.row_offsets)
            and np.array_equal(self.col_indices, other.col_indices)
        )

    def with_values(self, values) -> "SparseMatrix":
        return SparseMatrix(self.n_rows, self.n_cols, self.row_offsets, self.col_indices, values)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def spmv(A: SparseMatrix, x: np.ndarray) -> np.ndarray:
    """Sparse matrix-vector product y = A x (f32 result, f64 accumulation)."""
    x = np.asarray(x)
    if x.ndim != 1 or A.n_cols != x.shape[0]:
        raise UsageError(f"spmv dimension mismatch: A is {A.shape}, x has length {x.shape}")
    return (A._csr64 @ x.astype(np.float64)).astype(_VALUE)


def _ones_pattern(A: SparseMatrix):
    return _sp.csr_matrix(
        (np.ones(A.nnz, dtype=np.float64), A.col_indices.copy(), A.row_offsets.copy()),
        shape=(A.n_rows, A.n_cols),
    )


def spgemm(A: SparseMatrix, B: SparseMatrix) -> SparseMatrix:
    """Sparse product A @ B with the full structural pattern retained.

    The pattern comes from an all-positive symbolic pass, so entries whose
    values cancel stay in the result as explicit zeros.
    """
    if A.n_cols != B.n_rows:
        raise UsageError(f"spgemm dimension mismatch: {A.shape} @ {B.shape}")
    sym = _ones_pattern(A) @ _ones_pattern(B)
    sym = sym.tocsr()
    sym.sort_indices()
    num = (A._csr64 @ B._csr64).tocsr()
    num.sort_indices()
    vals = np.zeros(sym.nnz, dtype=np.float64)
    if num.nnz:
        rows = np.repeat(np.arange(num.shape[0], dtype=_INDEX), np.diff(num.indptr))
        keys_n = rows * sym.shape[1] + num.indices
        rows_s = np.repeat(np.arange(sym.shape[0], dtype=_INDEX), np.diff(sym.indptr))
        keys_s = rows_s * sym.shape[1] + sym.indices
        pos = np.searchsorted(keys_s, keys_n)
        vals[pos] = num.data
    return SparseMatrix(A.n_rows, B.n_cols, sym.indptr, sym.indices, vals)


def triple_product(R: SparseMatrix, A: SparseMatrix, P: SparseMatrix) -> SparseMatrix:
    """Galerkin product R @ A @ P."""
    if R.n_cols != A.n_rows or A.n_cols != P.n_rows:
        raise UsageError(f"triple_product shape chain broken: {R.shape} {A.shape} {P.shape}")
    return spgemm(spgemm(R, A), P)


def transpose(A: SparseMatrix) -> SparseMatrix:
    t = A._csr64.T.tocsr()
    t.sort_indices()
    return SparseMatrix(A.n_cols, A.n_rows, t.indptr, t.indices, t.data)


def diag(A: SparseMatrix) -> np.ndarray:
    """Main diagonal as a dense f32 vector (structurally absent entries are 0)."""
    return A._csr64.diagonal().astype(_VALUE)


def frobenius_diff(A: SparseMatrix, B: SparseMatrix) -> float:
    """||A - B||_F over the union pattern, accumulated in double precision."""
    if A.shape != B.shape:
        raise UsageError(f"frobenius_diff shape mismatch: {A.shape} vs {B.shape}")
    d = (A._csr64 - B._csr64).tocsr()
    return float(np.sqrt(np.sum(d.data.astype(np.float64) ** 2)))


def mask_to_pattern(A: SparseMatrix, pattern: SparseMatrix):
    """Drop entries of A outside ``pattern``.

    Returns ``(masked, removed_row_mass)`` where ``masked`` keeps exactly the
    entries of A inside the pattern (values untouched, zeros included) and
    ``removed_row_mass`` is the per-row sum of dropped values in f64.
    """
    if A.shape != pattern.shape:
        raise UsageError(f"mask_to_pattern shape mismatch: {A.shape} vs {pattern.shape}")
    keys_a = A.row_keys()
    keys_p = pattern.row_keys()
    pos = np.searchsorted(keys_p, keys_a)
    pos_c = np.minimum(pos, max(len(keys_p) - 1, 0))
    inside = np.zeros(len(keys_a), dtype=bool)
    if len(keys_p):
        inside = keys_p[pos_c] == keys_a
    rows_a = np.repeat(np.arange(A.n_rows, dtype=_INDEX), np.diff(A.row_offsets))
    removed = np.zeros(A.n_rows, dtype=np.float64)
    np.add.at(removed, rows_a[~inside], A.values[~inside].astype(np.float64))
    counts = np.zeros(A.n_rows, dtype=_INDEX)
    np.add.at(counts, rows_a[inside], 1)
    ro = np.zeros(A.n_rows + 1, dtype=_INDEX)
    np.cumsum(counts, out=ro[1:])
    masked = SparseMatrix(A.n_rows, A.n_cols, ro, A.col_indices[inside], A.values[inside])
    return masked, removed


def add_on_pattern(A: SparseMatrix, delta: SparseMatrix) -> SparseMatrix:
    """Return A + delta where sp(delta) must lie inside sp(A); pattern of A kept."""
    if A.shape != delta.shape:
        raise UsageError(f"add_on_pattern shape mismatch: {A.shape} vs {delta.shape}")
    if delta.nnz == 0:
        return A.with_values(A.values.copy())
    keys_a = A.row_keys()
    keys_d = delta.row_keys()
    pos = np.searchsorted(keys_a, keys_d)
    pos_c = np.minimum(pos, max(len(keys_a) - 1, 0))
    ok = len(keys_a) > 0 and bool(np.all(keys_a[pos_c] == keys_d))
    if not ok:
        bad = 0 if not len(keys_a) else int(np.argmin(keys_a[pos_c] == keys_d))
        r, c = divmod(int(keys_d[bad]), A.n_cols)
        raise PatternError(f"correction entry ({r}, {c}) outside the target pattern")
    vals = A.values.astype(np.float64)
    vals[pos] += delta.values.astype(np.float64)
    return A.with_values(vals)


# ---------------------------------------------------------------------------
# on-disk formats
# ---------------------------------------------------------------------------


def save_binary(A: SparseMatrix, path) -> None:
    """Little-endian dump: u64 n_rows, n_cols, nnz; offsets+indices u64; values f32."""
    with open(path, "wb") as f:
        np.array([A.n_rows, A.n_cols, A.nnz], dtype="<u8").tofile(f)
        A.row_offsets.astype("<u8").tofile(f)
        A.col_indices.astype("<u8").tofile(f)
        A.values.astype("<f4").tofile(f)


def load_binary(path) -> SparseMatrix:
    with open(path, "rb") as f:
        head = np.fromfile(f, dtype="<u8", count=3)
        if len(head) != 3:
            raise FormatError(f"{path}: truncated header")
        n_rows, n_cols, nnz = (int(v) for v in head)
        ro = np.fromfile(f, dtype="<u8", count=n_rows + 1)
        ci = np.fromfile(f, dtype="<u8", count=nnz)
        vals = np.fromfile(f, dtype="<f4", count=nnz)
        if len(ro) != n_rows + 1 or len(ci) != nnz or len(vals) != nnz:
            raise FormatError(f"{path}: truncated body")
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes")
    try:
        return SparseMatrix(n_rows, n_cols, ro.astype(_INDEX), ci.astype(_INDEX), vals)
    except UsageError as e:
        raise FormatError(f"{path}: invalid matrix structure: {e}") from e


_MM_HEADER = "%%MatrixMarket matrix coordinate real general"


def save_matrix_market(A: SparseMatrix, path) -> None:
    """Write 1-based coordinate Matrix Market (values round-trip f32 exactly)."""
    rows = np.repeat(np.arange(A.n_rows, dtype=_INDEX), np.diff(A.row_offsets))
    with open(path, "w") as f:
        f.write(_MM_HEADER + "\n")
        f.write(f"{A.n_rows} {A.n_cols} {A.nnz}\n")
        if A.nnz:
            np.savetxt(f, np.column_stack([rows + 1, A.col_indices + 1, A.values.astype(np.float64)]),
                       fmt="%d %d %.8e")


def load_matrix_market(path) -> SparseMatrix:
    with open(path) as f:
        header = f.readline().strip()
        if header.lower() != _MM_HEADER.lower():
            raise FormatError(f"{path}: unsupported Matrix Market header: {header!r}")
        line = f.readline()
        while line.startswith("%"):
            line = f.readline()
        try:
            n_rows, n_cols, nnz = (int(t) for t in line.split())
        except ValueError as e:
            raise FormatError(f"{path}: bad size line: {line!r}") from e
        data = np.loadtxt(f, dtype=np.float64, ndmin=2) if nnz else np.zeros((0, 3))
    if data.shape != (nnz, 3):
        raise FormatError(f"{path}: expected {nnz} entries, found {data.shape[0]}")
    rows = data[:, 0].astype(_INDEX) - 1
    cols = data[:, 1].astype(_INDEX) - 1
    if nnz and (rows.min() < 0 or cols.min() < 0 or rows.max() >= n_rows or cols.max() >= n_cols):
        raise FormatError(f"{path}: coordinate out of range")
    return SparseMatrix.from_coo(n_rows, n_cols, rows, cols, data[:, 2])
