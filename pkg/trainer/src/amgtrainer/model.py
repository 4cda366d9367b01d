"""Torch twin of the solver's correction network.

Forward semantics match the solver's inference engine exactly: same MLP
stack, same gated-residual message passing, same latent mixing between
level pairs, and the same threading of corrected coarse operators into
the next pair's edge features. state_dict keys equal the tensor names of
the shared weight-directory format, so weights move between the two
sides without any renaming.
"""
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
from torch import nn

from .errors import DataError, NumericError
from .formats import HIDDEN, N_PROCESSOR_LAYERS, Composite, CsrMatrix, Sample


def _mlp(d_in: int, d_out: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(d_in, HIDDEN), nn.ReLU(),
        nn.Linear(HIDDEN, HIDDEN), nn.ReLU(),
        nn.Linear(HIDDEN, d_out))


class RGGCNLayer(nn.Module):
    """Residual gated graph convolution over explicit edge lists."""

    def __init__(self):
        super().__init__()
        self.U1 = nn.Linear(HIDDEN, HIDDEN)
        self.U2 = nn.Linear(HIDDEN, HIDDEN)
        self.U3 = nn.Linear(HIDDEN, HIDDEN)
        self.W1 = nn.Linear(HIDDEN, HIDDEN)
        self.W2 = nn.Linear(HIDDEN, HIDDEN)

    def forward(self, h, e, src, dst):
        e_prime = self.U1(e) + self.U2(h)[src] + self.U3(h)[dst]
        gate = torch.sigmoid(e_prime)
        msg = gate * self.W2(h)[src]
        agg = torch.zeros_like(h).index_add(0, dst, msg)
        h = h + torch.relu(self.W1(h) + agg)
        e = e + torch.relu(e_prime)
        return h, e


# --------------------------------------------------------------- sample data


@dataclass
class OpTensors:
    """One CSR operator as flat edge lists plus its diagonal positions."""

    n_rows: int
    n_cols: int
    rows: torch.Tensor
    cols: torch.Tensor
    values: torch.Tensor
    diag_pos: Optional[torch.Tensor] = None


@dataclass
class PairTensors:
    n_fine: int
    src: torch.Tensor
    dst: torch.Tensor
    node_features: torch.Tensor
    edge_features: torch.Tensor
    offsets: Tuple[int, ...]


@dataclass
class SampleTensors:
    """Everything one training sample contributes, already on-device."""

    ops: List[OpTensors]  # A_0 .. A_L
    P: List[OpTensors]
    R: List[OpTensors]
    pairs: List[PairTensors]
    residuals: torch.Tensor  # (n_b, n)
    errors: torch.Tensor  # (n_b, n)
    family: str
    problem_seed: int

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)


def _op_tensors(m: CsrMatrix, dtype, with_diag: bool) -> OpTensors:
    rows = torch.from_numpy(m.rows)
    cols = torch.from_numpy(m.col_indices)
    vals = torch.from_numpy(m.values.astype(np.float64)).to(dtype)
    diag_pos = None
    if with_diag:
        hit = np.flatnonzero(m.rows == m.col_indices)
        if len(hit) != m.n_rows:
            raise DataError("operator is missing stored diagonal entries")
        diag_pos = torch.from_numpy(hit)
    return OpTensors(m.n_rows, m.n_cols, rows, cols, vals, diag_pos)


def _pair_tensors(g: Composite, dtype) -> PairTensors:
    return PairTensors(
        g.n_fine,
        torch.from_numpy(g.src),
        torch.from_numpy(g.dst),
        torch.from_numpy(g.node_features()).to(dtype),
        torch.from_numpy(g.edge_features).to(dtype),
        tuple(int(o) for o in g.block_offsets))


def sample_tensors(s: Sample, dtype=torch.float32,
                   rhs_limit: Optional[int] = None) -> SampleTensors:
    ops = [_op_tensors(m, dtype, with_diag=True) for m in s.hierarchy.ops]
    P = [_op_tensors(m, dtype, with_diag=False) for m in s.hierarchy.P]
    R = [_op_tensors(m, dtype, with_diag=False) for m in s.hierarchy.R]
    pairs = [_pair_tensors(g, dtype) for g in s.composites]
    r = torch.from_numpy(s.residuals.astype(np.float64)).to(dtype)
    e = torch.from_numpy(s.errors.astype(np.float64)).to(dtype)
    if rhs_limit is not None:
        r, e = r[:rhs_limit], e[:rhs_limit]
    return SampleTensors(ops, P, R, pairs, r, e, s.family, s.problem_seed)


# -------------------------------------------------------------------- model


@dataclass
class CorrectedValues:
    """Per-level operator values after augmentation; same CSR orders as
    the underlying sample, only the value arrays change."""

    a_vals: List[torch.Tensor]  # A_0 (untouched) .. A_L (corrected)
    p_vals: List[torch.Tensor]
    r_vals: List[torch.Tensor]


class CorrectionNet(nn.Module):
    """Encoders, three RGGCN rounds, an edge decoder, and the two mixing
    projections. The decoder's last layer starts at zero, so a freshly
    built model emits zero corrections and reproduces the base hierarchy.
    """

    def __init__(self):
        super().__init__()
        self.node_encoder = _mlp(2, HIDDEN)
        self.edge_encoder = _mlp(5, HIDDEN)
        self.decoder = _mlp(HIDDEN, 1)
        self.mix_node = nn.Linear(2 * HIDDEN, HIDDEN, bias=False)
        self.mix_edge = nn.Linear(2 * HIDDEN, HIDDEN, bias=False)
        self.processor = nn.ModuleList(
            RGGCNLayer() for _ in range(N_PROCESSOR_LAYERS))
        nn.init.zeros_(self.decoder[4].weight)
        nn.init.zeros_(self.decoder[4].bias)

    @property
    def n_params(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def forward_pair(self, pair: PairTensors, edge_features: torch.Tensor,
                     prev: Optional[Tuple[torch.Tensor, torch.Tensor]]):
        """One level pair; returns (dP, dR, dA_coarse) scalars and the
        latent state to thread into the next pair."""
        h = self.node_encoder(pair.node_features)
        e = self.edge_encoder(edge_features)
        if prev is not None:
            ph, pe = prev
            nf = pair.n_fine
            n_af, off3 = pair.offsets[1], pair.offsets[3]
            if ph.shape[0] < nf or pe.shape[0] < n_af:
                raise DataError("latent state does not chain between pairs")
            h = torch.cat(
                [self.mix_node(torch.cat([h[:nf], ph[-nf:]], dim=1)), h[nf:]])
            # P and R edges have no finer counterpart and mix against zeros;
            # A_coarse edges are left alone
            e_af = self.mix_edge(torch.cat([e[:n_af], pe[-n_af:]], dim=1))
            pr = e[n_af:off3]
            e_pr = self.mix_edge(torch.cat([pr, torch.zeros_like(pr)], dim=1))
            e = torch.cat([e_af, e_pr, e[off3:]])
        for layer in self.processor:
            h, e = layer(h, e, pair.src, pair.dst)
        scalars = self.decoder(e).squeeze(1)
        off = pair.offsets
        return (scalars[off[1]:off[2]], scalars[off[2]:off[3]],
                scalars[off[3]:off[4]], (h, e))

    def augment(self, st: SampleTensors) -> CorrectedValues:
        """Correct every level pair, threading latent state and feeding
        each corrected coarse operator into the next pair's features."""
        a_vals = [st.ops[0].values]
        p_vals, r_vals = [], []
        state = None
        for l, pair in enumerate(st.pairs):
            ef = pair.edge_features
            if l > 0:
                # the corrected coarse operator is stored f32 before it
                # becomes the next pair's fine block, so quantize the
                # spliced values the same way (no-op in f32 training)
                av = a_vals[l].float().to(ef.dtype)
                n_af = pair.offsets[1]
                head = torch.cat([av.unsqueeze(1), ef[:n_af, 1:]], dim=1)
                ef = torch.cat([head, ef[n_af:]])
            dp, dr, da, state = self.forward_pair(pair, ef, state)
            if not torch.isfinite(da).all():
                raise NumericError(f"non-finite correction on pair {l}")
            p_vals.append(st.P[l].values + dp)
            r_vals.append(st.R[l].values + dr)
            a_vals.append(st.ops[l + 1].values + da)
        return CorrectedValues(a_vals, p_vals, r_vals)


def load_numpy_weights(model: CorrectionNet,
                       tensors: Dict[str, np.ndarray]) -> None:
    state = {k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in tensors.items()}
    model.load_state_dict(state)


def numpy_weights(model: CorrectionNet) -> Dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().astype(np.float32)
            for k, v in model.state_dict().items()}
