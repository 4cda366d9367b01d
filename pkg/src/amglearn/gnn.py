"""Learned sparse corrections for aggregation hierarchies.

A pair of adjacent levels (A_fine, P, R, A_coarse) is flattened into one
directed graph over n_fine + n_coarse nodes. Every stored entry of the four
blocks becomes an edge from its row to its column (diagonals turn into
self-loops), so the block matrix

    [ A_fine  P        ]
    [ R       A_coarse ]

is the adjacency structure. A forward-only message-passing network built
from plain numpy then emits one scalar per edge; scalars on P, R and
A_coarse edges are additive corrections pinned to those exact sparsity
patterns, scalars on A_fine edges are discarded.

Edges are enumerated block by block in the order A_fine, P, R, A_coarse,
each in CSR order. That ordering is a contract: the coarse block of one
level pair is the fine block of the next, so latent state threads between
pairs by slicing from the end of the previous pair's arrays.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import expit

from .errors import FormatError, InferenceError, PatternError, UsageError
from .hierarchy import Hierarchy, Level
from .sparse import SparseMatrix

HIDDEN = 64
N_PROCESSOR_LAYERS = 3
BLOCK_NAMES = ("A_fine", "P", "R", "A_coarse")

_MLP_DIMS = {
    "node_encoder": (2, HIDDEN, HIDDEN, HIDDEN),
    "edge_encoder": (5, HIDDEN, HIDDEN, HIDDEN),
    "decoder": (HIDDEN, HIDDEN, HIDDEN, 1),
}
_RGGCN_PARAMS = ("U1", "U2", "U3", "W1", "W2")


def expected_shapes() -> Dict[str, Tuple[int, ...]]:
    """Full tensor-name -> shape table for one weight set.

    Names follow the sequential-module convention of the training side
    (linear layers sit at indices 0, 2, 4 with activations between), so
    weight files are exchangeable bit-for-bit.
    """
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


@dataclass
class GnnWeights:
    """One complete parameter set, keyed by tensor name, stored as f32."""

    tensors: Dict[str, np.ndarray]

    def __post_init__(self):
        table = expected_shapes()
        missing = sorted(set(table) - set(self.tensors))
        if missing:
            raise UsageError(f"missing tensor {missing[0]}")
        extra = sorted(set(self.tensors) - set(table))
        if extra:
            raise UsageError(f"unexpected tensor {extra[0]}")
        for name, shape in table.items():
            t = np.ascontiguousarray(self.tensors[name], dtype=np.float32)
            if t.shape != shape:
                raise UsageError(
                    f"tensor {name} has shape {t.shape}, expected {shape}")
            self.tensors[name] = t

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    @property
    def n_params(self) -> int:
        return sum(int(t.size) for t in self.tensors.values())


def random_weights(seed: int, scale: float = 0.1) -> GnnWeights:
    rng = np.random.default_rng(seed)
    return GnnWeights({
        name: (rng.standard_normal(shape) * scale).astype(np.float32)
        for name, shape in expected_shapes().items()
    })


def with_zero_decoder(w: GnnWeights) -> GnnWeights:
    """Copy of w whose final decoder layer is all-zero, so every emitted
    correction is exactly 0 and augmentation becomes the identity."""
    tensors = {k: v.copy() for k, v in w.tensors.items()}
    tensors["decoder.4.weight"] = np.zeros_like(tensors["decoder.4.weight"])
    tensors["decoder.4.bias"] = np.zeros_like(tensors["decoder.4.bias"])
    return GnnWeights(tensors)


# ----------------------------------------------------------------- weight I/O


def save_weights(w: GnnWeights, path) -> None:
    """Write a weight directory: manifest.txt plus one raw little-endian
    f32 blob per tensor, file name equal to the tensor name."""
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    lines = ["format_version=1", "activation=relu", f"hidden={HIDDEN}"]
    for name in sorted(w.tensors):
        t = w.tensors[name]
        lines.append("tensor " + name + " " + " ".join(str(s) for s in t.shape))
        (d / name).write_bytes(t.astype("<f4").tobytes(order="C"))
    (d / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_weights(path) -> GnnWeights:
    d = Path(path)
    mf = d / "manifest.txt"
    if not mf.is_file():
        raise FormatError(f"missing manifest.txt in {d}")
    header: Dict[str, str] = {}
    listed: Dict[str, Tuple[int, ...]] = {}
    for raw in mf.read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("tensor "):
            parts = line.split()
            try:
                listed[parts[1]] = tuple(int(s) for s in parts[2:])
            except ValueError:
                raise FormatError(f"bad tensor line in manifest: {line!r}")
        elif "=" in line:
            k, v = line.split("=", 1)
            header[k.strip()] = v.strip()
    if header.get("format_version") != "1":
        raise FormatError(
            f"unsupported weight format version {header.get('format_version')!r}")
    table = expected_shapes()
    tensors: Dict[str, np.ndarray] = {}
    for name, shape in table.items():
        if name not in listed:
            raise FormatError(f"manifest lists no tensor {name}")
        if listed[name] != shape:
            raise FormatError(
                f"tensor {name} has shape {listed[name]}, expected {shape}")
        blob = d / name
        if not blob.is_file():
            raise FormatError(f"missing tensor file {name}")
        buf = blob.read_bytes()
        want = int(np.prod(shape)) * 4
        if len(buf) != want:
            raise FormatError(
                f"truncated tensor file {name}: {len(buf)} bytes, expected {want}")
        tensors[name] = np.frombuffer(buf, dtype="<f4").reshape(shape).copy()
    return GnnWeights(tensors)


# ------------------------------------------------------------ composite graph


@dataclass(frozen=True)
class CompositeGraph:
    """Two adjacent levels flattened into one directed graph.

    Coarse node ids are offset by n_fine. src/dst/value/block are parallel
    per-edge arrays; block holds the index into BLOCK_NAMES. The four source
    matrices ride along so corrections can be rebuilt on their patterns.
    """

    n_fine: int
    n_coarse: int
    src: np.ndarray
    dst: np.ndarray
    value: np.ndarray
    block: np.ndarray
    node_features: np.ndarray
    edge_features: np.ndarray
    A_fine: SparseMatrix
    P: SparseMatrix
    R: SparseMatrix
    A_coarse: SparseMatrix

    @property
    def n_nodes(self) -> int:
        return self.n_fine + self.n_coarse

    @property
    def block_offsets(self) -> np.ndarray:
        """Edge-array boundaries of the four blocks, length 5."""
        return np.concatenate(([0], np.cumsum(
            [self.A_fine.nnz, self.P.nnz, self.R.nnz, self.A_coarse.nnz])))


def _csr_edges(m: SparseMatrix):
    rows = np.repeat(np.arange(m.n_rows), np.diff(m.row_offsets))
    return rows, m.col_indices.astype(np.int64), m.values.astype(np.float64)


def build_composite(A_fine: SparseMatrix, P: SparseMatrix, R: SparseMatrix,
                    A_coarse: SparseMatrix) -> CompositeGraph:
    n, nc = A_fine.n_rows, A_coarse.n_rows
    if A_fine.n_cols != n or A_coarse.n_cols != nc:
        raise UsageError("system operators must be square")
    if P.shape != (n, nc) or R.shape != (nc, n):
        raise UsageError(
            f"transfer shapes {P.shape}/{R.shape} do not chain "
            f"{n} -> {nc}")
    srcs, dsts, vals, blocks = [], [], [], []
    for code, (m, dr, dc) in enumerate(
            ((A_fine, 0, 0), (P, 0, n), (R, n, 0), (A_coarse, n, n))):
        r, c, v = _csr_edges(m)
        srcs.append(r + dr)
        dsts.append(c + dc)
        vals.append(v)
        blocks.append(np.full(len(v), code, dtype=np.int8))
    src = np.concatenate(srcs)
    dst = np.concatenate(dsts)
    value = np.concatenate(vals)
    block = np.concatenate(blocks)
    node_features = np.zeros((n + nc, 2))
    node_features[:n, 0] = 1.0
    node_features[n:, 1] = 1.0
    edge_features = np.zeros((len(value), 5))
    edge_features[:, 0] = value
    edge_features[np.arange(len(value)), 1 + block.astype(np.int64)] = 1.0
    return CompositeGraph(n, nc, src, dst, value, block,
                          node_features, edge_features,
                          A_fine, P, R, A_coarse)


# ----------------------------------------------------------------- forward


@dataclass
class LatentState:
    node_latent: np.ndarray
    edge_latent: np.ndarray


@dataclass(frozen=True)
class Corrections:
    dP: SparseMatrix
    dR: SparseMatrix
    dA_coarse: SparseMatrix


def _check_finite(stage: str, *arrays) -> None:
    for a in arrays:
        if not np.isfinite(a).all():
            raise InferenceError(f"non-finite values after {stage}")


def _mlp(x: np.ndarray, w: GnnWeights, prefix: str) -> np.ndarray:
    for idx in (0, 2, 4):
        W = w[f"{prefix}.{idx}.weight"].astype(np.float64)
        b = w[f"{prefix}.{idx}.bias"].astype(np.float64)
        x = x @ W.T + b
        if idx != 4:
            x = np.maximum(x, 0.0)
    return x


def rggcn_layer(state: LatentState, src: np.ndarray, dst: np.ndarray,
                params: Dict[str, np.ndarray]) -> LatentState:
    """One residual gated graph convolution.

    e'_ij = U1 e_ij + U2 h_src + U3 h_dst, gate = sigmoid(e'), each node
    accumulates gate * (W2 h_src) over its incoming edges, then
    h <- h + relu(W1 h + agg) and e <- e + relu(e'). params maps
    "U1.weight", "U1.bias", ... at any width, so unit tests can run this
    at toy sizes.
    """
    h, e = state.node_latent, state.edge_latent

    def lin(name, x):
        W = np.asarray(params[name + ".weight"], dtype=np.float64)
        b = np.asarray(params[name + ".bias"], dtype=np.float64)
        return x @ W.T + b

    e_prime = lin("U1", e) + lin("U2", h)[src] + lin("U3", h)[dst]
    gate = expit(e_prime)
    msg = gate * lin("W2", h)[src]
    agg = np.zeros_like(h)
    np.add.at(agg, dst, msg)
    h_new = h + np.maximum(lin("W1", h) + agg, 0.0)
    e_new = e + np.maximum(e_prime, 0.0)
    return LatentState(h_new, e_new)


def gnn_forward_pair(g: CompositeGraph, w: GnnWeights,
                     prev: Optional[LatentState] = None
                     ) -> Tuple[Corrections, LatentState]:
    """Run one level pair through the network.

    prev, when given, must be the latent state returned for the previous
    (finer) pair, whose coarse side is this pair's fine side: its last
    n_fine node rows are the mixed-in node latents and its last
    nnz(A_fine) edge rows align with this pair's A_fine edges. P and R
    edges have no earlier counterpart and mix against zeros; A_coarse
    edges touch no fine node and are not mixed.
    """
    h = _mlp(g.node_features, w, "node_encoder")
    _check_finite("node_encoder", h)
    e = _mlp(g.edge_features, w, "edge_encoder")
    _check_finite("edge_encoder", e)

    off = g.block_offsets
    if prev is not None:
        nf = g.n_fine
        if prev.node_latent.shape[0] < nf:
            raise UsageError("previous latent state has too few nodes for this pair")
        n_af = int(off[1])
        if prev.edge_latent.shape[0] < n_af:
            raise UsageError("previous latent state has too few edges for this pair")
        Wv = w["mix_node.weight"].astype(np.float64)
        We = w["mix_edge.weight"].astype(np.float64)
        h = h.copy()
        h[:nf] = np.concatenate([h[:nf], prev.node_latent[-nf:]], axis=1) @ Wv.T
        e = e.copy()
        e[:n_af] = np.concatenate(
            [e[:n_af], prev.edge_latent[-n_af:]], axis=1) @ We.T
        pr = slice(int(off[1]), int(off[3]))
        e[pr] = np.concatenate([e[pr], np.zeros_like(e[pr])], axis=1) @ We.T
        _check_finite("mixing", h, e)

    state = LatentState(h, e)
    for k in range(N_PROCESSOR_LAYERS):
        params = {f"{p}.{kind}": w[f"processor.{k}.{p}.{kind}"]
                  for p in _RGGCN_PARAMS for kind in ("weight", "bias")}
        state = rggcn_layer(state, g.src, g.dst, params)
        _check_finite(f"processor.{k}", state.node_latent, state.edge_latent)

    scalars = _mlp(state.edge_latent, w, "decoder")[:, 0]
    _check_finite("decoder", scalars)

    def cut(a, b, pattern):
        return pattern.with_values(scalars[int(a):int(b)].astype(np.float32))

    corr = Corrections(cut(off[1], off[2], g.P),
                       cut(off[2], off[3], g.R),
                       cut(off[3], off[4], g.A_coarse))
    return corr, state


def augment_hierarchy(h: Hierarchy, w: GnnWeights,
                      thread_corrected: bool = True,
                      apply_dpdr: bool = True, apply_da: bool = True,
                      mix: bool = True) -> Hierarchy:
    """Apply learned corrections to every level pair of an aggregation
    hierarchy, threading latent state from fine pairs to coarse ones.

    Sparsity patterns are untouched; the result is a new hierarchy with
    the same structure. thread_corrected picks whether the corrected or
    the original coarse operator feeds the next pair's composite graph
    (the output hierarchy always carries the corrected one). The three
    switches ablate parts of the mechanism: apply_dpdr/apply_da drop the
    transfer or coarse-operator corrections, mix=False stops the latent
    state from flowing between pairs.
    """
    if h.variant not in ("agg", "gnn"):
        raise UsageError(
            f"corrections require aggregation transfers, got variant {h.variant!r}")
    a_chain = [lev.A for lev in h.levels] + [h.coarsest_A]
    out_a = [a_chain[0]]
    new_levels = []
    pair_fine = a_chain[0]
    state: Optional[LatentState] = None
    for l, lev in enumerate(h.levels):
        a_next = a_chain[l + 1]
        g = build_composite(pair_fine, lev.P, lev.R, a_next)
        corr, state = gnn_forward_pair(g, w, state if mix else None)
        for d, ref, name in ((corr.dP, lev.P, "P"), (corr.dR, lev.R, "R"),
                             (corr.dA_coarse, a_next, "coarse operator")):
            if not d.same_pattern(ref):
                raise PatternError(f"correction pattern mismatch on level {l} {name}")
        if apply_dpdr:
            p_new = lev.P.with_values(lev.P.values + corr.dP.values)
            r_new = lev.R.with_values(lev.R.values + corr.dR.values)
        else:
            p_new, r_new = lev.P, lev.R
        if apply_da:
            a_corr = a_next.with_values(a_next.values + corr.dA_coarse.values)
        else:
            a_corr = a_next
        new_levels.append(Level(out_a[-1], p_new, r_new))
        out_a.append(a_corr)
        pair_fine = a_corr if thread_corrected else a_next
    return Hierarchy(new_levels, out_a[-1], h.coarse_solver, "gnn",
                     h.config, h.seed)
