"""Differentiable V-cycle over a corrected hierarchy.

Mirrors the solver's cycle arithmetic (damped Jacobi smoothing, Galerkin
restriction of the residual, coarse correction, symmetric post-smoothing)
on batched right-hand sides, with every operation expressed through
gather/scatter so gradients flow into the corrected operator values. The
coarsest solve is a fixed number of Jacobi sweeps from a zero start; a
direct solve there would be non-differentiable and numerically brittle.
"""
import torch

from .errors import NumericError
from .model import CorrectedValues, OpTensors, SampleTensors


def matmul(op: OpTensors, vals: torch.Tensor, X: torch.Tensor) -> torch.Tensor:
    """Batched sparse product: rows of X are vectors, result rows are A x."""
    prod = X[:, op.cols] * vals
    return X.new_zeros(X.shape[0], op.n_rows).index_add(1, op.rows, prod)


def _inv_diag(op: OpTensors, vals: torch.Tensor) -> torch.Tensor:
    d = vals[op.diag_pos]
    if bool((d == 0).any()):
        raise NumericError("zero diagonal entry in a cycle operator")
    return 1.0 / d


def error_cycle(st: SampleTensors, cv: CorrectedValues, rhs: torch.Tensor,
                sweeps: int = 2, omega: float = 0.6,
                coarse_sweeps: int = 2) -> torch.Tensor:
    """One V-cycle from a zero initial guess on each row of rhs.

    Solving A e = r this way turns the cycle into a linear map, so a zero
    residual maps to exactly zero error.
    """
    n_pairs = st.n_pairs

    def rec(l: int, B: torch.Tensor) -> torch.Tensor:
        op = st.ops[l]
        vals = cv.a_vals[l]
        dinv = _inv_diag(op, vals)
        X = torch.zeros_like(B)
        if l == n_pairs:
            for _ in range(coarse_sweeps):
                X = X + omega * (B - matmul(op, vals, X)) * dinv
            return X
        for _ in range(sweeps):
            X = X + omega * (B - matmul(op, vals, X)) * dinv
        resid = B - matmul(op, vals, X)
        Bc = matmul(st.R[l], cv.r_vals[l], resid)
        Ec = rec(l + 1, Bc)
        X = X + matmul(st.P[l], cv.p_vals[l], Ec)
        for _ in range(sweeps):
            X = X + omega * (B - matmul(op, vals, X)) * dinv
        return X

    return rec(0, rhs)


def relative_loss(e_hat: torch.Tensor, e: torch.Tensor,
                  eps: float = 1e-12) -> torch.Tensor:
    """Mean squared relative l2 discrepancy over the batch."""
    num = ((e_hat - e) ** 2).sum(dim=1)
    den = (e ** 2).sum(dim=1) + eps
    return (num / den).mean()
