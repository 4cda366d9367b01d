"""Smoothers, V-cycles, the standalone solve loop, and flexible GMRES.

Vectors travel in float64 end to end; matrix values stay float32 and
feed the double-precision matvec view, so a fixed hierarchy and config
make one V-cycle a reproducible (and with a direct coarse solve, linear)
operator.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np
import scipy.linalg

from .errors import SolverError, UsageError
from .hierarchy import Hierarchy, operator_complexity
from .sparse import SparseMatrix, diag


@dataclass
class CycleConfig:
    """V-cycle shape: sweep counts, damping, coarsest-level solver.

    coarse_solver accepts "dense_lu" or "jacobi:<sweeps>"; None defers
    to whatever the hierarchy was built with.
    """

    nu_pre: int = 2
    nu_post: int = 2
    omega: float = 0.6
    coarse_solver: Optional[str] = None

    def __post_init__(self):
        if self.nu_pre < 0 or self.nu_post < 0 or self.nu_pre + self.nu_post < 1:
            raise UsageError("need nu_pre + nu_post >= 1 with nonnegative counts")
        if not 0.0 < self.omega <= 1.0:
            raise UsageError(f"omega must be in (0, 1], got {self.omega}")


@dataclass
class SolveReport:
    iterations: int
    converged: bool
    residual_history: np.ndarray  # relative residuals, [0] is the initial guess
    convergence_rate: float
    setup_seconds: float = 0.0
    operator_complexity: float = 1.0
    diverged: bool = False


def reports_equal(a: SolveReport, b: SolveReport) -> bool:
    """Field-by-field equality ignoring wall-clock timing."""
    return (
        a.iterations == b.iterations
        and a.converged == b.converged
        and a.diverged == b.diverged
        and a.convergence_rate == b.convergence_rate
        and a.operator_complexity == b.operator_complexity
        and np.array_equal(a.residual_history, b.residual_history)
    )


REPORT_CSV_HEADER = ("problem_id,variant,mode,n,nnz,iterations,converged,rate,"
                     "setup_seconds,op_complexity")


def report_csv_row(r: SolveReport, problem_id: str, variant: str, mode: str,
                   n: int, nnz: int) -> str:
    if mode not in ("standalone", "gmres"):
        raise UsageError(f"mode must be standalone or gmres, got {mode!r}")
    return (f"{problem_id},{variant},{mode},{n},{nnz},{r.iterations},"
            f"{str(r.converged).lower()},{r.convergence_rate:.6g},"
            f"{r.setup_seconds:.6g},{r.operator_complexity:.6g}")


def write_history_csv(r: SolveReport, path) -> None:
    lines = ["iteration,relres"]
    lines += [f"{k},{v:.10e}" for k, v in enumerate(r.residual_history)]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# smoothing and coarse solves
# ---------------------------------------------------------------------------


def _inv_diag(A: SparseMatrix) -> np.ndarray:
    d = diag(A).astype(np.float64)
    if np.any(d == 0.0):
        row = int(np.argmin(d != 0.0))
        raise SolverError(f"zero diagonal entry at row {row}")
    return 1.0 / d


def jacobi(A: SparseMatrix, b, x, omega: float, sweeps: int) -> np.ndarray:
    """`sweeps` damped-Jacobi updates x <- x + omega*D^{-1}(b - Ax)."""
    dinv = _inv_diag(A)
    M = A._csr64
    x = np.array(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    for _ in range(sweeps):
        x = x + omega * dinv * (b - M @ x)
    return x


class _DenseLU:
    """Direct coarsest solve; singular factorizations fall back to lstsq."""

    def __init__(self, A: SparseMatrix):
        self._dense = A.to_dense().astype(np.float64)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            lu, piv = scipy.linalg.lu_factor(self._dense, check_finite=False)
        u = np.abs(np.diag(lu))
        if u.size and u.min() > 1e-12 * max(u.max(), 1.0):
            self._lu = (lu, piv)
        else:
            self._lu = None

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self._lu is not None:
            return scipy.linalg.lu_solve(self._lu, b, check_finite=False)
        return np.linalg.lstsq(self._dense, b, rcond=None)[0]


class _JacobiK:
    def __init__(self, A: SparseMatrix, sweeps: int, omega: float):
        self._A = A
        self._dinv = _inv_diag(A)
        self._sweeps = sweeps
        self._omega = omega

    def solve(self, b: np.ndarray) -> np.ndarray:
        x = np.zeros_like(b, dtype=np.float64)
        M = self._A._csr64
        for _ in range(self._sweeps):
            x = x + self._omega * self._dinv * (b - M @ x)
        return x


def _make_coarse_solver(A: SparseMatrix, token: str, omega: float):
    if token == "dense_lu":
        return _DenseLU(A)
    if token.startswith("jacobi:"):
        try:
            sweeps = int(token.split(":", 1)[1])
        except ValueError:
            sweeps = -1
        if sweeps >= 1:
            return _JacobiK(A, sweeps, omega)
    raise UsageError(f"unknown coarse solver {token!r}")


def _solver_for(h: Hierarchy, cfg: CycleConfig):
    token = cfg.coarse_solver if cfg.coarse_solver is not None else h.coarse_solver
    cache = h.__dict__.setdefault("_coarse_cache", {})
    key = (token, cfg.omega)
    if key not in cache:
        cache[key] = _make_coarse_solver(h.coarsest_A, token, cfg.omega)
    return cache[key]


def _dinvs(h: Hierarchy) -> List[np.ndarray]:
    cache = h.__dict__.get("_dinv_cache")
    if cache is None:
        cache = [_inv_diag(lv.A) for lv in h.levels]
        h.__dict__["_dinv_cache"] = cache
    return cache


# ---------------------------------------------------------------------------
# V-cycle
# ---------------------------------------------------------------------------


def v_cycle(h: Hierarchy, b, x, cfg: CycleConfig) -> np.ndarray:
    """One recursive V-cycle; returns the updated iterate."""
    b = np.asarray(b, dtype=np.float64)
    x = np.array(x, dtype=np.float64)
    if b.shape != (h.levels[0].A.n_rows,) or x.shape != b.shape:
        raise UsageError("b and x must match the finest grid size")
    coarse = _solver_for(h, cfg)
    dinvs = _dinvs(h)

    def rec(l, b_l, x_l):
        if l == len(h.levels):
            return coarse.solve(b_l)
        A = h.levels[l].A._csr64
        dinv = dinvs[l]
        for _ in range(cfg.nu_pre):
            x_l = x_l + cfg.omega * dinv * (b_l - A @ x_l)
        r = b_l - A @ x_l
        b_c = h.levels[l].R._csr64 @ r
        e_c = rec(l + 1, b_c, np.zeros_like(b_c))
        x_l = x_l + h.levels[l].P._csr64 @ e_c
        for _ in range(cfg.nu_post):
            x_l = x_l + cfg.omega * dinv * (b_l - A @ x_l)
        return x_l

    return rec(0, b, x)


def vcycle_preconditioner(h: Hierarchy, cfg: CycleConfig) -> Callable[[np.ndarray], np.ndarray]:
    """Closure applying one V-cycle to a residual from a zero guess."""
    n = h.levels[0].A.n_rows

    def apply(r: np.ndarray) -> np.ndarray:
        return v_cycle(h, r, np.zeros(n), cfg)

    return apply


# ---------------------------------------------------------------------------
# iteration loops
# ---------------------------------------------------------------------------


def convergence_rate(history) -> float:
    """Geometric per-iteration reduction over the last half of the history."""
    hist = np.asarray(history, dtype=np.float64)
    if hist.size < 2:
        raise UsageError("need a history of at least 2 residuals")
    K = hist.size - 1
    mid = K // 2
    if hist[K] == 0.0 or hist[mid] == 0.0:
        return 0.0
    return float((hist[K] / hist[mid]) ** (1.0 / (K - mid)))


def _rate_or_zero(history) -> float:
    return convergence_rate(history) if len(history) >= 2 else 0.0


def solve_standalone(h: Hierarchy, b, x0, cfg: CycleConfig, tol: float = 1e-6,
                     max_iters: int = 1000, setup_seconds: float = 0.0,
                     solution_out: Optional[np.ndarray] = None) -> SolveReport:
    """Repeat V-cycles until the relative residual drops below tol.

    The report carries statistics only; pass solution_out (a buffer of
    b's shape) to also receive the final iterate.
    """
    A = h.levels[0].A._csr64
    b = np.asarray(b, dtype=np.float64)
    x = np.array(x0, dtype=np.float64)
    scale = np.linalg.norm(b)
    if scale == 0.0:
        scale = 1.0
    oc = operator_complexity(h)

    def relres(v):
        return float(np.linalg.norm(b - A @ v) / scale)

    history = [relres(x)]
    iterations = 0
    converged = history[0] <= tol
    diverged = False
    while not converged and iterations < max_iters:
        x = v_cycle(h, b, x, cfg)
        iterations += 1
        rr = relres(x)
        history.append(rr)
        if not np.isfinite(rr):
            diverged = True
            break
        converged = rr <= tol
    if solution_out is not None:
        solution_out[:] = x
    return SolveReport(iterations, converged, np.array(history),
                       _rate_or_zero(history), setup_seconds, oc, diverged)


def fgmres(A: SparseMatrix, b, x0, precond: Optional[Callable] = None,
           restart: int = 2, tol: float = 1e-6, max_iters: int = 1000,
           setup_seconds: float = 0.0, op_complexity: float = 1.0) -> SolveReport:
    """Right-preconditioned flexible GMRES with short restarts.

    The iteration count and residual history are per inner iteration;
    residuals are recomputed from the current iterate, not read off the
    least-squares system. Arnoldi breakdown with a nonzero residual
    triggers a restart; non-finite values end the solve as diverged.
    """
    if restart < 1:
        raise UsageError("restart must be >= 1")
    M = A._csr64
    b = np.asarray(b, dtype=np.float64)
    x = np.array(x0, dtype=np.float64)
    scale = np.linalg.norm(b)
    if scale == 0.0:
        scale = 1.0

    def relres(v):
        return float(np.linalg.norm(b - M @ v) / scale)

    history = [relres(x)]
    total = 0
    converged = history[0] <= tol
    diverged = False
    while not converged and not diverged and total < max_iters:
        r0 = b - M @ x
        beta = np.linalg.norm(r0)
        if beta == 0.0:
            converged = True
            break
        V = [r0 / beta]
        Z = []
        H = np.zeros((restart + 1, restart))
        # the Arnoldi relation expands around the iterate this cycle started
        # from, so candidates are x_cycle + Z y, never the running iterate
        x_cycle = x
        for j in range(restart):
            z = precond(V[j]) if precond is not None else V[j]
            w = M @ z
            Z.append(z)
            for i in range(j + 1):
                H[i, j] = float(w @ V[i])
                w = w - H[i, j] * V[i]
            H[j + 1, j] = float(np.linalg.norm(w))
            broke = H[j + 1, j] == 0.0 or not np.isfinite(H[j + 1, j])
            if not broke:
                V.append(w / H[j + 1, j])
            rhs = np.zeros(j + 2)
            rhs[0] = beta
            y = np.linalg.lstsq(H[: j + 2, : j + 1], rhs, rcond=None)[0]
            x = x_cycle + np.column_stack(Z) @ y
            total += 1
            rr = relres(x)
            history.append(rr)
            if not np.isfinite(rr):
                diverged = True
                break
            if rr <= tol:
                converged = True
                break
            if broke or total >= max_iters:
                break
    return SolveReport(total, converged, np.array(history),
                       _rate_or_zero(history), setup_seconds, op_complexity, diverged)
