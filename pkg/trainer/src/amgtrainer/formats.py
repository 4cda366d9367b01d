"""Readers and writers for the on-disk contracts shared with the solver.

Everything here speaks the solver's file formats directly (see its
docs/formats.md): CSR matrix binaries, hierarchy directories, training
sample directories, and weight directories. The trainer never imports the
solver; these files are the interface.
"""
import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from .errors import DataError

HIDDEN = 64
N_PROCESSOR_LAYERS = 3

_MLP_DIMS = {
    "node_encoder": (2, HIDDEN, HIDDEN, HIDDEN),
    "edge_encoder": (5, HIDDEN, HIDDEN, HIDDEN),
    "decoder": (HIDDEN, HIDDEN, HIDDEN, 1),
}
_RGGCN_PARAMS = ("U1", "U2", "U3", "W1", "W2")


def weight_shapes() -> Dict[str, Tuple[int, ...]]:
    """Tensor name -> shape for one complete weight set (50 tensors)."""
    out: Dict[str, Tuple[int, ...]] = {}
    for name, dims in _MLP_DIMS.items():
        for k in range(3):
            out[f"{name}.{2 * k}.weight"] = (dims[k + 1], dims[k])
            out[f"{name}.{2 * k}.bias"] = (dims[k + 1],)
    out["mix_node.weight"] = (HIDDEN, 2 * HIDDEN)
    out["mix_edge.weight"] = (HIDDEN, 2 * HIDDEN)
    for layer in range(N_PROCESSOR_LAYERS):
        for p in _RGGCN_PARAMS:
            out[f"processor.{layer}.{p}.weight"] = (HIDDEN, HIDDEN)
            out[f"processor.{layer}.{p}.bias"] = (HIDDEN,)
    return out


# ------------------------------------------------------------------ matrices


@dataclass(frozen=True)
class CsrMatrix:
    """Plain CSR triple, values f32, plus per-entry row ids for messaging."""

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    @property
    def nnz(self) -> int:
        return len(self.values)

    @property
    def rows(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_rows, dtype=np.int64),
                         np.diff(self.row_offsets))


def read_csr(path) -> CsrMatrix:
    """u64 n_rows, n_cols, nnz; u64 offsets and indices; f32 values."""
    p = Path(path)
    if not p.is_file():
        raise DataError(f"missing matrix file {p}")
    buf = p.read_bytes()
    if len(buf) < 24:
        raise DataError(f"truncated header in {p.name}")
    n_rows, n_cols, nnz = (int(v) for v in np.frombuffer(buf[:24], dtype="<u8"))
    want = 24 + 8 * (n_rows + 1) + 8 * nnz + 4 * nnz
    if len(buf) != want:
        raise DataError(f"truncated {p.name}: {len(buf)} bytes, expected {want}")
    off = 24
    ro = np.frombuffer(buf[off:off + 8 * (n_rows + 1)], dtype="<u8").astype(np.int64)
    off += 8 * (n_rows + 1)
    ci = np.frombuffer(buf[off:off + 8 * nnz], dtype="<u8").astype(np.int64)
    off += 8 * nnz
    vals = np.frombuffer(buf[off:], dtype="<f4").copy()
    return CsrMatrix(n_rows, n_cols, ro, ci, vals)


def _read_mat(path: Path, ndim: int) -> np.ndarray:
    if not path.is_file():
        raise DataError(f"missing file {path.name}")
    buf = path.read_bytes()
    head = ndim * 8
    shape = tuple(int(s) for s in np.frombuffer(buf[:head], dtype="<u8"))
    if len(buf) != head + int(np.prod(shape)) * 4:
        raise DataError(f"truncated {path.name}")
    return np.frombuffer(buf[head:], dtype="<f4").reshape(shape).copy()


# ----------------------------------------------------------------- hierarchy


@dataclass(frozen=True)
class HierarchyDump:
    """A_0..A_L operators with P_l/R_l transfers between them."""

    ops: List[CsrMatrix]
    P: List[CsrMatrix]
    R: List[CsrMatrix]

    @property
    def n_pairs(self) -> int:
        return len(self.P)


def _manifest(path: Path) -> Dict[str, str]:
    if not path.is_file():
        raise DataError(f"missing manifest.txt in {path.parent}")
    out: Dict[str, str] = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#") and "=" in line:
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out

def read_hierarchy(path) -> HierarchyDump:
    d = Path(path)
    m = _manifest(d / "manifest.txt")
    if m.get("format_version") != "1":
        raise DataError(f"unsupported hierarchy format in {d}")
    depth = int(m["depth"])
    ops = [read_csr(d / f"A_{l}.bin") for l in range(depth)]
    P = [read_csr(d / f"P_{l}.bin") for l in range(depth - 1)]
    R = [read_csr(d / f"R_{l}.bin") for l in range(depth - 1)]
    return HierarchyDump(ops, P, R)


# ---------------------------------------------------------------- composites


@dataclass(frozen=True)
class Composite:
    """One level pair flattened to a directed graph: coarse node ids carry
    an n_fine offset, edges run A_fine, P, R, A_coarse in CSR order."""

    n_fine: int
    n_coarse: int
    src: np.ndarray
    dst: np.ndarray
    edge_features: np.ndarray  # (E, 5): value, then block one-hot
    block_offsets: np.ndarray  # length 5

    @property
    def n_nodes(self) -> int:
        return self.n_fine + self.n_coarse

    def node_features(self) -> np.ndarray:
        f = np.zeros((self.n_nodes, 2), dtype=np.float64)
        f[:self.n_fine, 0] = 1.0
        f[self.n_fine:, 1] = 1.0
        return f


def build_composite(A_fine: CsrMatrix, P: CsrMatrix, R: CsrMatrix,
                    A_coarse: CsrMatrix) -> Composite:
    n = A_fine.n_rows
    srcs, dsts, vals, blocks = [], [], [], []
    for code, (mat, dr, dc) in enumerate(
            ((A_fine, 0, 0), (P, 0, n), (R, n, 0), (A_coarse, n, n))):
        srcs.append(mat.rows + dr)
        dsts.append(mat.col_indices + dc)
        vals.append(mat.values.astype(np.float64))
        blocks.append(np.full(mat.nnz, code, dtype=np.int64))
    value = np.concatenate(vals)
    block = np.concatenate(blocks)
    ef = np.zeros((len(value), 5), dtype=np.float64)
    ef[:, 0] = value
    ef[np.arange(len(value)), 1 + block] = 1.0
    offsets = np.concatenate(([0], np.cumsum(
        [A_fine.nnz, P.nnz, R.nnz, A_coarse.nnz])))
    return Composite(n, A_coarse.n_rows, np.concatenate(srcs),
                     np.concatenate(dsts), ef, offsets)


def read_composite(path, block_nnz) -> Composite:
    """Stored layout: u64 n_fine, n_coarse, n_edges; f32 src, dst,
    edge features. block_nnz gives the four block sizes (the file itself
    does not repeat them)."""
    p = Path(path)
    if not p.is_file():
        raise DataError(f"missing {p.name}")
    buf = p.read_bytes()
    if len(buf) < 24:
        raise DataError(f"truncated header in {p.name}")
    n_fine, n_coarse, n_edges = (
        int(v) for v in np.frombuffer(buf[:24], dtype="<u8"))
    if len(buf) != 24 + n_edges * 28 or n_edges != sum(block_nnz):
        raise DataError(f"composite {p.name} does not match its hierarchy")
    flat = np.frombuffer(buf[24:], dtype="<f4")
    src = flat[:n_edges].astype(np.int64)
    dst = flat[n_edges:2 * n_edges].astype(np.int64)
    ef = flat[2 * n_edges:].reshape(n_edges, 5).astype(np.float64)
    offsets = np.concatenate(([0], np.cumsum(block_nnz)))
    return Composite(n_fine, n_coarse, src, dst, ef, offsets)


# ------------------------------------------------------------------- samples


@dataclass(frozen=True)
class Sample:
    hierarchy: HierarchyDump
    composites: List[Composite]
    residuals: np.ndarray  # (n_b, n) f32
    errors: np.ndarray  # (n_b, n) f32
    family: str
    problem_seed: int


def read_sample(path) -> Sample:
    d = Path(path)
    m = _manifest(d / "manifest.txt")
    if m.get("format_version") != "1":
        raise DataError(f"unsupported sample format in {d}")
    h = read_hierarchy(d / "hierarchy")
    composites = []
    for l in range(h.n_pairs):
        nz = (h.ops[l].nnz, h.P[l].nnz, h.R[l].nnz, h.ops[l + 1].nnz)
        composites.append(read_composite(d / f"composite_{l}.bin", nz))
    residuals = _read_mat(d / "residuals.bin", 2)
    errors = _read_mat(d / "errors.bin", 2)
    if residuals.shape != (int(m["n_b"]), int(m["n"])):
        raise DataError(f"batch shape mismatch in {d}")
    return Sample(h, composites, residuals, errors,
                  m.get("family", ""), int(m.get("problem_seed", "0")))


def scan_dataset(root) -> List[Path]:
    """Sample directories anywhere under root, sorted by path. A sample
    dir is recognized by holding both a manifest and the residual batch."""
    r = Path(root)
    if not r.is_dir():
        raise DataError(f"dataset directory {r} does not exist")
    out = sorted(p.parent for p in r.rglob("manifest.txt")
                 if (p.parent / "residuals.bin").is_file())
    if not out:
        raise DataError(f"no training samples under {r}")
    return out


def is_validation_seed(problem_seed: int) -> bool:
    """Stable 10% split keyed on the hash of the problem seed."""
    digest = hashlib.md5(str(int(problem_seed)).encode()).hexdigest()
    return int(digest, 16) % 10 == 0


# ------------------------------------------------------------------- weights


def write_weights(tensors: Dict[str, np.ndarray], path) -> None:
    """Weight directory: manifest.txt plus one raw little-endian f32 blob
    per tensor, file named by the tensor name."""
    table = weight_shapes()
    if set(tensors) != set(table):
        missing = sorted(set(table) - set(tensors))
        extra = sorted(set(tensors) - set(table))
        raise DataError(f"weight set mismatch: missing {missing}, extra {extra}")
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    lines = ["format_version=1", "activation=relu", f"hidden={HIDDEN}"]
    for name in sorted(tensors):
        t = np.ascontiguousarray(tensors[name], dtype=np.float32)
        if t.shape != table[name]:
            raise DataError(f"tensor {name} has shape {t.shape}, "
                            f"expected {table[name]}")
        lines.append("tensor " + name + " " + " ".join(str(s) for s in t.shape))
        (d / name).write_bytes(t.astype("<f4").tobytes(order="C"))
    (d / "manifest.txt").write_text("\n".join(lines) + "\n")


def read_weights(path) -> Dict[str, np.ndarray]:
    d = Path(path)
    m = _manifest(d / "manifest.txt")
    if m.get("format_version") != "1":
        raise DataError(f"unsupported weight format in {d}")
    out: Dict[str, np.ndarray] = {}
    for name, shape in weight_shapes().items():
        blob = d / name
        if not blob.is_file():
            raise DataError(f"missing tensor file {name}")
        buf = blob.read_bytes()
        if len(buf) != int(np.prod(shape)) * 4:
            raise DataError(f"truncated tensor file {name}")
        out[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
    return out
