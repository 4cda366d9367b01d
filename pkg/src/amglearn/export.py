"""Self-supervised training data: smooth error/residual pairs and sample export.

Training pairs come from running a known solution through a fixed number of
V-cycles: x_true is standard normal, b = A x_true, and after k cycles from a
random start the leftover error e = x_true - x_k and residual r = b - A x_k
satisfy A e = r by construction. Small k leaves rough errors, large k leaves
the algebraically smooth ones the coarse grid must capture.

A training sample on disk is a directory: the hierarchy dump, one composite
graph blob per level pair, and the residual batch. All binaries are
little-endian f32 with u64 length headers; node ids are stored as f32,
which is exact below 2^24 nodes.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .cycles import CycleConfig, v_cycle
from .errors import FormatError, SolverError, UsageError
from .gnn import build_composite
from .hierarchy import Hierarchy, dump_hierarchy, load_hierarchy

DEFAULT_BATCH = 64  # right-hand sides per sample
_MAX_RESAMPLES = 50


@dataclass(frozen=True)
class FamilyPolicy:
    """Per-dataset hierarchy depth and sweep counts for train and eval runs."""

    train_depth: int
    eval_depth: int
    train_sweeps: int
    eval_sweeps: int
    gnn_eval_coarse: str = "jacobi:2"


FAMILY_POLICY: Dict[str, FamilyPolicy] = {
    "geo2d": FamilyPolicy(4, 5, 2, 1),
    "geo3d": FamilyPolicy(4, 5, 2, 1),
    "ws": FamilyPolicy(5, 6, 2, 1),
    "tba": FamilyPolicy(4, 5, 2, 1),
    "social": FamilyPolicy(4, 4, 2, 2, gnn_eval_coarse="jacobi:100"),
    "aniso2d": FamilyPolicy(4, 5, 2, 1),
    "aniso3d": FamilyPolicy(4, 5, 2, 1),
    "advdiff2d": FamilyPolicy(4, 5, 2, 2),
    "advdiff3d": FamilyPolicy(4, 5, 2, 2),
    "poisson2d": FamilyPolicy(4, 5, 2, 1),
}


def train_cycle_config() -> CycleConfig:
    """Cycle settings used while generating training pairs: two smoothing
    sweeps each side and two Jacobi iterations on the coarsest grid."""
    return CycleConfig(nu_pre=2, nu_post=2, omega=0.6, coarse_solver="jacobi:2")


@dataclass
class ResidualBatch:
    """n_b (residual, error) pairs plus the cycle count that produced each."""

    residuals: np.ndarray  # (n_b, n) f32
    errors: np.ndarray  # (n_b, n) f32
    cycles_applied: np.ndarray  # (n_b,) ints in [0, 30]
    resampled: int = 0

    def __post_init__(self):
        self.residuals = np.asarray(self.residuals, dtype=np.float32)
        self.errors = np.asarray(self.errors, dtype=np.float32)
        self.cycles_applied = np.asarray(self.cycles_applied, dtype=np.int64)
        if self.residuals.shape != self.errors.shape or self.residuals.ndim != 2:
            raise UsageError("residuals and errors must both be (n_b, n)")
        if self.cycles_applied.shape != (self.residuals.shape[0],):
            raise UsageError("one cycle count per sample required")
        if self.cycles_applied.min(initial=0) < 0 or self.cycles_applied.max(initial=0) > 30:
            raise UsageError("cycle counts must lie in [0, 30]")

    @property
    def n_b(self) -> int:
        return self.residuals.shape[0]


def gen_residual_batch(h: Hierarchy, n_b: int, seed: int,
                       k_override: Optional[int] = None) -> ResidualBatch:
    """Emit n_b smooth (r, e) pairs from an aggregation hierarchy.

    Per sample i (attempt t, normally 0) the stream default_rng([seed, 71,
    i, t]) yields x_true, then x0, then k ~ uniform{1..30}; k_override
    skips the k draw, so overridden batches stay paired with drawn ones.
    A non-finite result after the k cycles discards the attempt and moves
    to the next t; the count of discarded attempts is reported.
    """
    if h.variant not in ("agg", "gnn"):
        raise UsageError(
            f"training pairs require aggregation transfers, got {h.variant!r}")
    if n_b < 1:
        raise UsageError("n_b must be >= 1")
    if k_override is not None and not 0 <= int(k_override) <= 30:
        raise UsageError("k_override must lie in [0, 30]")
    A = h.levels[0].A
    M = A._csr64
    n = A.n_rows
    cfg = train_cycle_config()
    residuals = np.empty((n_b, n), dtype=np.float32)
    errors = np.empty((n_b, n), dtype=np.float32)
    ks = np.empty(n_b, dtype=np.int64)
    resampled = 0
    for i in range(n_b):
        for attempt in range(_MAX_RESAMPLES):
            rng = np.random.default_rng([seed, 71, i, attempt])
            x_true = rng.standard_normal(n)
            x0 = rng.standard_normal(n)
            k = int(rng.integers(1, 31)) if k_override is None else int(k_override)
            b = M @ x_true
            x = x0
            for _ in range(k):
                x = v_cycle(h, b, x, cfg)
            # the emitted pairs are f32, so a value that only overflows in
            # the cast is just as divergent as a NaN in the cycle itself
            with np.errstate(over="ignore", invalid="ignore"):
                r32 = (b - M @ x).astype(np.float32)
                e32 = (x_true - x).astype(np.float32)
            if np.isfinite(r32).all() and np.isfinite(e32).all():
                break
            resampled += 1
        else:
            raise SolverError(
                f"sample {i} kept diverging after {_MAX_RESAMPLES} resamples")
        residuals[i] = r32
        errors[i] = e32
        ks[i] = k
    return ResidualBatch(residuals, errors, ks, resampled)


def reference_loss(e_hat, e) -> float:
    """Mean squared relative l2 error: (1/n_b) sum ||ehat - e||^2 / (||e||^2 + 1e-12)."""
    e_hat = np.asarray(e_hat, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if e_hat.shape != e.shape:
        raise UsageError(f"shape mismatch {e_hat.shape} vs {e.shape}")
    if e_hat.ndim == 1:
        e_hat = e_hat[None, :]
        e = e[None, :]
    if e.shape[0] < 1:
        raise UsageError("need at least one sample")
    num = ((e_hat - e) ** 2).sum(axis=1)
    den = (e ** 2).sum(axis=1) + 1e-12
    return float((num / den).mean())


# ------------------------------------------------------------------ sample I/O


@dataclass(frozen=True)
class CompositePairDump:
    """One serialized level pair: endpoints plus the 5-column edge features
    (column 0 holds values, 1-4 the block one-hot). Node features are
    implied by the fine/coarse split and are not stored."""

    n_fine: int
    n_coarse: int
    src: np.ndarray
    dst: np.ndarray
    edge_features: np.ndarray


@dataclass
class TrainingSample:
    hierarchy: Hierarchy
    composites: List[CompositePairDump]
    batch: ResidualBatch
    family: str
    problem_seed: int
    batch_seed: int

    @property
    def depth(self) -> int:
        return self.hierarchy.depth


def _write_mat(path: Path, m: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(np.array(m.shape, dtype="<u8").tobytes())
        f.write(np.ascontiguousarray(m, dtype="<f4").tobytes())


def _read_mat(path: Path, ndim: int) -> np.ndarray:
    if not path.is_file():
        raise FormatError(f"missing file {path.name}")
    buf = path.read_bytes()
    head = ndim * 8
    if len(buf) < head:
        raise FormatError(f"truncated header in {path.name}")
    shape = tuple(int(s) for s in np.frombuffer(buf[:head], dtype="<u8"))
    want = head + int(np.prod(shape)) * 4
    if len(buf) != want:
        raise FormatError(
            f"truncated {path.name}: {len(buf)} bytes, expected {want}")
    return np.frombuffer(buf[head:], dtype="<f4").reshape(shape).copy()


def export_training_sample(path, h: Hierarchy, batch: ResidualBatch,
                           family: str, problem_seed: int,
                           batch_seed: int) -> None:
    """Write one sample directory: hierarchy/, composite_{l}.bin per level
    pair, residuals.bin, errors.bin, cycles.bin, manifest.txt."""
    if batch.residuals.shape[1] != h.levels[0].A.n_rows:
        raise UsageError("batch width does not match the hierarchy's fine grid")
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    dump_hierarchy(h, d / "hierarchy")
    a_chain = [lev.A for lev in h.levels] + [h.coarsest_A]
    for l, lev in enumerate(h.levels):
        g = build_composite(a_chain[l], lev.P, lev.R, a_chain[l + 1])
        if g.n_nodes >= 1 << 24:
            raise UsageError("composite too large for exact f32 node ids")
        with open(d / f"composite_{l}.bin", "wb") as f:
            f.write(np.array([g.n_fine, g.n_coarse, len(g.value)],
                             dtype="<u8").tobytes())
            f.write(g.src.astype("<f4").tobytes())
            f.write(g.dst.astype("<f4").tobytes())
            f.write(np.ascontiguousarray(g.edge_features, dtype="<f4").tobytes())
    _write_mat(d / "residuals.bin", batch.residuals)
    _write_mat(d / "errors.bin", batch.errors)
    with open(d / "cycles.bin", "wb") as f:
        f.write(np.array([batch.n_b], dtype="<u8").tobytes())
        f.write(batch.cycles_applied.astype("<f4").tobytes())
    (d / "manifest.txt").write_text("\n".join([
        "format_version=1",
        f"family={family}",
        f"problem_seed={problem_seed}",
        f"batch_seed={batch_seed}",
        f"depth={h.depth}",
        f"n={h.levels[0].A.n_rows}",
        f"n_b={batch.n_b}",
        f"resampled={batch.resampled}",
    ]) + "\n")


def import_training_sample(path) -> TrainingSample:
    d = Path(path)
    mf = d / "manifest.txt"
    if not mf.is_file():
        raise FormatError(f"missing manifest.txt in {d}")
    kv: Dict[str, str] = {}
    for line in mf.read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            kv[k.strip()] = v.strip()
    if kv.get("format_version") != "1":
        raise FormatError(
            f"unsupported sample format version {kv.get('format_version')!r}")
    h = load_hierarchy(d / "hierarchy")
    if int(kv["depth"]) != h.depth:
        raise FormatError(
            f"manifest depth {kv['depth']} does not match hierarchy depth {h.depth}")
    composites: List[CompositePairDump] = []
    for l in range(len(h.levels)):
        p = d / f"composite_{l}.bin"
        if not p.is_file():
            raise FormatError(f"missing composite_{l}.bin")
        buf = p.read_bytes()
        if len(buf) < 24:
            raise FormatError(f"truncated header in composite_{l}.bin")
        n_fine, n_coarse, n_edges = (
            int(s) for s in np.frombuffer(buf[:24], dtype="<u8"))
        want = 24 + n_edges * 4 * (1 + 1 + 5)
        if len(buf) != want:
            raise FormatError(
                f"truncated composite_{l}.bin: {len(buf)} bytes, expected {want}")
        flat = np.frombuffer(buf[24:], dtype="<f4")
        composites.append(CompositePairDump(
            n_fine, n_coarse,
            flat[:n_edges].astype(np.int64),
            flat[n_edges:2 * n_edges].astype(np.int64),
            flat[2 * n_edges:].reshape(n_edges, 5).copy(),
        ))
    residuals = _read_mat(d / "residuals.bin", 2)
    errors = _read_mat(d / "errors.bin", 2)
    cp = d / "cycles.bin"
    if not cp.is_file():
        raise FormatError("missing cycles.bin")
    cbuf = cp.read_bytes()
    if len(cbuf) < 8:
        raise FormatError("truncated header in cycles.bin")
    n_b = int(np.frombuffer(cbuf[:8], dtype="<u8")[0])
    if len(cbuf) != 8 + n_b * 4:
        raise FormatError("truncated cycles.bin")
    ks = np.frombuffer(cbuf[8:], dtype="<f4").astype(np.int64)
    if residuals.shape != (int(kv["n_b"]), int(kv["n"])) or errors.shape != residuals.shape:
        raise FormatError("batch shapes do not match the manifest")
    batch = ResidualBatch(residuals, errors, ks, int(kv.get("resampled", "0")))
    return TrainingSample(h, composites, batch, kv["family"],
                          int(kv["problem_seed"]), int(kv["batch_seed"]))
