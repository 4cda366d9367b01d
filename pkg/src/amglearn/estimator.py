"""Estimator-style facade over the functional setup and solve API."""
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .cycles import CycleConfig, SolveReport, solve_standalone
from .hierarchy import SetupConfig, build_hierarchy
from .sparse import SparseMatrix


class MultigridSolver(BaseEstimator):
    """Multilevel solver with a fit/solve interface.

    fit(A) builds the hierarchy for the chosen variant; solve(b) runs
    standalone V-cycles to tolerance and returns the full report, and
    predict(b) returns just the solution vector. Hyperparameters mirror
    SetupConfig and CycleConfig fields one-to-one.
    """

    def __init__(self, variant: str = "sa", eps_soc: float = 0.5,
                 eps_mat: float = 0.02, omega_smooth: Optional[float] = None,
                 max_levels: int = 25, min_coarse_size: int = 64,
                 nu_pre: int = 2, nu_post: int = 2, omega: float = 0.6,
                 coarse_solver: Optional[str] = None, tol: float = 1e-6,
                 max_iters: int = 1000, seed: int = 0):
        self.variant = variant
        self.eps_soc = eps_soc
        self.eps_mat = eps_mat
        self.omega_smooth = omega_smooth
        self.max_levels = max_levels
        self.min_coarse_size = min_coarse_size
        self.nu_pre = nu_pre
        self.nu_post = nu_post
        self.omega = omega
        self.coarse_solver = coarse_solver
        self.tol = tol
        self.max_iters = max_iters
        self.seed = seed

    def fit(self, A: SparseMatrix, y=None) -> "MultigridSolver":
        config = SetupConfig(eps_soc=self.eps_soc, eps_mat=self.eps_mat,
                             omega_smooth=self.omega_smooth,
                             max_levels=self.max_levels,
                             min_coarse_size=self.min_coarse_size)
        self.hierarchy_ = build_hierarchy(A, self.variant, config, self.seed)
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "hierarchy_"):
            raise NotFittedError(
                "this MultigridSolver has no hierarchy; call fit(A) first")

    def solve(self, b, x0=None) -> SolveReport:
        self._check_fitted()
        b = np.asarray(b, dtype=np.float64)
        if x0 is None:
            x0 = np.zeros_like(b)
        cfg = CycleConfig(nu_pre=self.nu_pre, nu_post=self.nu_post,
                          omega=self.omega, coarse_solver=self.coarse_solver)
        solution = np.empty_like(b)
        report = solve_standalone(self.hierarchy_, b, x0, cfg,
                                  tol=self.tol, max_iters=self.max_iters,
                                  solution_out=solution)
        self.last_solution_ = solution
        return report

    def predict(self, b, x0=None) -> np.ndarray:
        self.solve(b, x0)
        return self.last_solution_
