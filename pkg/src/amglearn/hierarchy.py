"""AMG setup: strength of connection, aggregation, transfer operators.

Builds multilevel hierarchies in four flavors: plain aggregation (agg),
smoothed aggregation (sa), smoothed aggregation with the coarse operator
collapsed back onto the aggregation pattern (spsa), and agg hierarchies
destined for learned corrections (gnn, applied separately).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import scipy.sparse as sp

from .errors import FormatError, SetupError, UsageError
from .sparse import (
    SparseMatrix,
    diag,
    load_binary,
    save_binary,
    transpose,
    triple_product,
)

VARIANTS = ("agg", "sa", "spsa", "gnn")


def _canon_variant(variant: str) -> str:
    v = str(variant).lower()
    v = {"rapnet": "gnn"}.get(v, v)
    if v not in VARIANTS:
        raise UsageError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    return v


@dataclass
class SetupConfig:
    """Knobs for hierarchy construction.

    omega_smooth=None lets smooth_prolongation pick (4/3)/rho_hat from a
    10-step power iteration; a number overrides that estimate.
    max_levels counts grids, so 2 is the shallowest legal hierarchy.
    """

    eps_soc: float = 0.5
    eps_mat: float = 0.02
    omega_smooth: Optional[float] = None
    max_levels: int = 25
    min_coarse_size: int = 64

    def __post_init__(self):
        if not 0.0 < self.eps_soc < 1.0:
            raise UsageError(f"eps_soc must be in (0, 1), got {self.eps_soc}")
        if self.eps_mat < 0.0:
            raise UsageError(f"eps_mat must be >= 0, got {self.eps_mat}")
        if self.max_levels < 2:
            raise UsageError(f"max_levels must be >= 2, got {self.max_levels}")
        if self.min_coarse_size < 1:
            raise UsageError(f"min_coarse_size must be >= 1, got {self.min_coarse_size}")


@dataclass
class Aggregation:
    assignment: np.ndarray  # fine node -> aggregate id, total
    n_aggregates: int


@dataclass
class Level:
    A: SparseMatrix
    P: SparseMatrix
    R: SparseMatrix


@dataclass
class Hierarchy:
    levels: List[Level]
    coarsest_A: SparseMatrix
    coarse_solver: str  # "dense_lu" or "jacobi:<sweeps>"
    variant: str
    config: SetupConfig = field(default_factory=SetupConfig)
    seed: int = 0

    @property
    def depth(self) -> int:
        # number of grids, finest included
        return len(self.levels) + 1

    def operators(self) -> List[SparseMatrix]:
        return [lv.A for lv in self.levels] + [self.coarsest_A]


def _seed_list(seed) -> list:
    if isinstance(seed, (int, np.integer)):
        return [int(seed)]
    return [int(s) for s in seed]


def strength_graph(A: SparseMatrix, eps_soc: float) -> SparseMatrix:
    """Symmetric binary strength pattern.

    Off-diagonal (i, j) is strong iff |A_ij| >= eps_soc * max_k |A_ik|
    over off-diagonals of row i, in A or in A^T; the diagonal is always
    present. Zero-valued entries are never strong.
    """
    if A.n_rows != A.n_cols:
        raise UsageError("strength_graph needs a square matrix")
    d = np.abs(diag(A).astype(np.float64))
    if np.any(d == 0.0):
        row = int(np.argmin(d != 0.0))
        raise SetupError(f"zero diagonal entry at row {row}")
    n = A.n_rows
    C = A._csr64.tocoo()
    off = C.row != C.col
    absv = np.abs(C.data)
    rowmax = np.zeros(n)
    np.maximum.at(rowmax, C.row[off], absv[off])
    keep = off & (absv > 0.0) & (absv >= eps_soc * rowmax[C.row])
    ones = np.ones(int(keep.sum()))
    S = sp.coo_matrix((ones, (C.row[keep], C.col[keep])), shape=(n, n)).tocsr()
    S = S + S.T + sp.identity(n, format="csr")
    S.data[:] = 1.0
    return SparseMatrix.from_scipy(S)


def aggregate(S: SparseMatrix, seed) -> Aggregation:
    """Two-pass greedy aggregation over a strength pattern.

    Pass 1 visits nodes in a seeded random order; a node whose strong
    neighborhood is entirely unassigned seeds a new aggregate with it.
    Pass 2 attaches each leftover to the adjacent aggregate holding the
    most strong connections, counted against the frozen pass-1
    memberships (ties break to the lowest aggregate id); leftovers with
    no aggregated neighbor become singletons.

    The pass-1 visit order is ``default_rng([*seed, 53]).permutation(n)``
    and pass 2 runs in natural index order, so traces are reproducible.
    """
    n = S.n_rows
    rng = np.random.default_rng(_seed_list(seed) + [53])
    indptr, indices = S.row_offsets, S.col_indices
    assignment = np.full(n, -1, dtype=np.int64)
    next_id = 0
    for i in rng.permutation(n):
        if assignment[i] != -1:
            continue
        nbrs = indices[indptr[i]:indptr[i + 1]]
        nbrs = nbrs[nbrs != i]
        if np.all(assignment[nbrs] == -1):
            assignment[i] = next_id
            assignment[nbrs] = next_id
            next_id += 1
    frozen = assignment.copy()
    for i in range(n):
        if frozen[i] != -1:
            continue
        nbrs = indices[indptr[i]:indptr[i + 1]]
        nbrs = nbrs[nbrs != i]
        ids = frozen[nbrs]
        ids = ids[ids != -1]
        if len(ids) == 0:
            assignment[i] = next_id
            next_id += 1
        else:
            assignment[i] = int(np.argmax(np.bincount(ids)))
    return Aggregation(assignment, next_id)


def tentative_prolongation(agg: Aggregation) -> SparseMatrix:
    """Binary prolongation with P[i, assignment[i]] = 1."""
    n = len(agg.assignment)
    if np.any(agg.assignment < 0):
        raise UsageError("assignment must be total")
    return SparseMatrix.from_coo(n, agg.n_aggregates, np.arange(n),
                                 agg.assignment, np.ones(n))


def _filter_weak(A: SparseMatrix, eps_mat: float) -> sp.csr_matrix:
    # drop weak off-diagonals (same row-relative measure as strength),
    # lumping their value onto the diagonal so row sums survive the filter
    C = A._csr64.tocoo()
    off = C.row != C.col
    absv = np.abs(C.data)
    rowmax = np.zeros(A.n_rows)
    np.maximum.at(rowmax, C.row[off], absv[off])
    weak = off & (absv < eps_mat * rowmax[C.row])
    lump = np.zeros(A.n_rows)
    np.add.at(lump, C.row[weak], C.data[weak])
    keep = ~weak
    out = sp.coo_matrix((C.data[keep], (C.row[keep], C.col[keep])), shape=C.shape).tocsr()
    return out + sp.diags(lump)


def _estimate_rho(M: sp.csr_matrix, seed) -> float:
    rng = np.random.default_rng(_seed_list(seed) + [61])
    v = rng.standard_normal(M.shape[0])
    rho = 1.0
    for _ in range(10):
        w = M @ v
        rho = np.linalg.norm(w)
        if rho == 0.0 or not np.isfinite(rho):
            return 1.0
        v = w / rho
    return float(rho)


def smooth_prolongation(A: SparseMatrix, P_tent: SparseMatrix, config: SetupConfig,
                        seed=0) -> SparseMatrix:
    """One damped-Jacobi smoothing step applied to the tentative P.

    Returns (I - omega_P D^{-1} A_hat) P_tent with A_hat the eps_mat
    filtered operator and omega_P = (4/3) / rho_hat unless the config
    pins omega_smooth.
    """
    d = diag(A).astype(np.float64)
    if np.any(d == 0.0):
        row = int(np.argmin(d != 0.0))
        raise SetupError(f"zero diagonal entry at row {row}")
    Ahat = _filter_weak(A, config.eps_mat)
    DinvA = sp.diags(1.0 / d) @ Ahat
    if config.omega_smooth is not None:
        omega = float(config.omega_smooth)
    else:
        omega = (4.0 / 3.0) / _estimate_rho(DinvA, seed)
    Pt = P_tent._csr64
    P = Pt - omega * (DinvA @ Pt)
    return SparseMatrix.from_scipy(P.tocsr())


def spsa_coarse(A: SparseMatrix, P_s: SparseMatrix, R_s: SparseMatrix,
                pattern: SparseMatrix) -> SparseMatrix:
    """Collapse the smoothed Galerkin operator onto the aggregation pattern.

    Computes A_g = R_s A P_s, then redistributes every entry (i, k)
    falling outside the pattern: retained off-diagonals j of row i that
    are two-hop connected to k (|A_g[j, k]| > 0) absorb 2*v weighted by
    that connection, and the diagonal absorbs -v, so A_c 1 = A_g 1
    holds exactly; with no two-hop candidate the whole value lumps to
    the diagonal. sp(A_c) is the pattern/A_g intersection.
    """
    Ag = triple_product(R_s, A, P_s)
    nc = Ag.n_rows
    if pattern.shape != (nc, nc):
        raise UsageError(f"pattern shape {pattern.shape} does not match coarse size {nc}")
    ag_keys = Ag.row_keys()
    pat_keys = pattern.row_keys()
    pos = np.searchsorted(pat_keys, ag_keys)
    pos[pos == len(pat_keys)] = 0
    in_pat = pat_keys[pos] == ag_keys

    rows = np.repeat(np.arange(nc), np.diff(Ag.row_offsets))
    cols = Ag.col_indices
    vals = Ag.values.astype(np.float64)

    m_rows, m_cols, m_vals = rows[in_pat], cols[in_pat], vals[in_pat].copy()
    m_indptr = np.zeros(nc + 1, dtype=np.int64)
    np.add.at(m_indptr, m_rows + 1, 1)
    m_indptr = np.cumsum(m_indptr)

    # per-row position of the diagonal in the masked structure
    diag_pos = np.full(nc, -1, dtype=np.int64)
    is_diag = m_rows == m_cols
    diag_pos[m_rows[is_diag]] = np.flatnonzero(is_diag)

    indptr, indices = Ag.row_offsets, Ag.col_indices

    def two_hop(j: int, k: int) -> float:
        lo, hi = indptr[j], indptr[j + 1]
        t = lo + np.searchsorted(indices[lo:hi], k)
        if t < hi and indices[t] == k:
            return abs(float(vals[t]))
        return 0.0

    for e in np.flatnonzero(~in_pat):
        r, k, v = int(rows[e]), int(cols[e]), float(vals[e])
        if diag_pos[r] < 0:
            raise SetupError(f"pattern row {r} lacks a diagonal to lump onto")
        lo, hi = m_indptr[r], m_indptr[r + 1]
        js = m_cols[lo:hi]
        offs = np.flatnonzero(js != r)
        c = np.array([two_hop(int(js[t]), k) for t in offs])
        s = c.sum()
        if s > 0.0:
            m_vals[lo + offs] += 2.0 * v * (c / s)
            m_vals[diag_pos[r]] -= v
        else:
            m_vals[diag_pos[r]] += v
    return SparseMatrix(nc, nc, m_indptr, m_cols.copy(), m_vals.astype(np.float32))


def build_hierarchy(A: SparseMatrix, variant: str, config: SetupConfig, seed: int,
                    coarse_solver: Optional[str] = None) -> Hierarchy:
    """Recursive setup until max_levels grids or min_coarse_size nodes.

    agg/gnn store the unsmoothed operators and the plain Galerkin coarse
    matrix; sa smooths both transfers (restriction via the transposed
    operator, so R = P^T exactly when A is symmetric); spsa additionally
    collapses each coarse operator onto the aggregation pattern.

    Aggregation and smoothing at level l draw from the derived seed
    ``[seed, l]``, and strength is recomputed per level from whatever
    coarse operator the variant produced.
    """
    variant = _canon_variant(variant)
    if A.n_rows != A.n_cols:
        raise UsageError("build_hierarchy needs a square matrix")
    if A.n_rows <= config.min_coarse_size:
        raise UsageError(
            f"matrix size {A.n_rows} is not above min_coarse_size {config.min_coarse_size}")
    levels: List[Level] = []
    A_cur = A
    level = 0
    while A_cur.n_rows > config.min_coarse_size and len(levels) + 1 < config.max_levels:
        S = strength_graph(A_cur, config.eps_soc)
        agg = aggregate(S, [seed, level])
        if agg.n_aggregates == A_cur.n_rows:
            raise SetupError(f"aggregation failed to coarsen at level {level}")
        P_t = tentative_prolongation(agg)
        if variant in ("agg", "gnn"):
            P, R = P_t, transpose(P_t)
            A_next = triple_product(R, A_cur, P)
        else:
            P = smooth_prolongation(A_cur, P_t, config, [seed, level])
            R = transpose(smooth_prolongation(transpose(A_cur), P_t, config, [seed, level]))
            A_next = triple_product(R, A_cur, P)
            if variant == "spsa":
                R_g = transpose(P_t)
                pattern = triple_product(R_g, A_cur, P_t)
                A_next = spsa_coarse(A_cur, P, R, pattern)
        levels.append(Level(A_cur, P, R))
        A_cur = A_next
        level += 1
    if not levels:
        raise SetupError("hierarchy ended up single-level; lower min_coarse_size")
    if coarse_solver is None:
        coarse_solver = "jacobi:2" if variant == "gnn" else "dense_lu"
    return Hierarchy(levels, A_cur, coarse_solver, variant, config, seed)


def operator_complexity(h: Hierarchy) -> float:
    ops = h.operators()
    return float(sum(op.nnz for op in ops) / ops[0].nnz)


def dump_hierarchy(h: Hierarchy, path) -> None:
    """Write A_0..A_L, P_l, R_l binaries plus a key=value manifest."""
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    ops = h.operators()
    for l, A in enumerate(ops):
        save_binary(A, d / f"A_{l}.bin")
    for l, lv in enumerate(h.levels):
        save_binary(lv.P, d / f"P_{l}.bin")
        save_binary(lv.R, d / f"R_{l}.bin")
    cfg = h.config
    lines = [
        "format_version=1",
        f"variant={h.variant}",
        f"depth={h.depth}",
        f"seed={h.seed}",
        f"coarse_solver={h.coarse_solver}",
        f"eps_soc={cfg.eps_soc!r}",
        f"eps_mat={cfg.eps_mat!r}",
        f"omega_smooth={cfg.omega_smooth!r}",
        f"max_levels={cfg.max_levels}",
        f"min_coarse_size={cfg.min_coarse_size}",
    ]
    (d / "manifest.txt").write_text("\n".join(lines) + "\n")


def _parse_manifest(path: Path) -> dict:
    out = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"malformed manifest line {line!r} in {path}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def load_hierarchy(path) -> Hierarchy:
    d = Path(path)
    mpath = d / "manifest.txt"
    if not mpath.exists():
        raise FormatError(f"no manifest.txt under {d}")
    m = _parse_manifest(mpath)
    if m.get("format_version") != "1":
        raise FormatError(f"unsupported hierarchy format_version {m.get('format_version')!r}")
    depth = int(m["depth"])
    ops = [load_binary(d / f"A_{l}.bin") for l in range(depth)]
    levels = []
    for l in range(depth - 1):
        levels.append(Level(ops[l], load_binary(d / f"P_{l}.bin"), load_binary(d / f"R_{l}.bin")))
    omega = m.get("omega_smooth", "None")
    cfg = SetupConfig(
        eps_soc=float(m["eps_soc"]),
        eps_mat=float(m["eps_mat"]),
        omega_smooth=None if omega == "None" else float(omega),
        max_levels=int(m["max_levels"]),
        min_coarse_size=int(m["min_coarse_size"]),
    )
    return Hierarchy(levels, ops[-1], m["coarse_solver"], m["variant"], cfg, int(m["seed"]))
