"""Command-line front end: generate operators, build hierarchies, solve,
benchmark, and export training data.

Every command writes a manifest.txt echoing the parsed flags, so a run
can be reproduced from its output directory alone. File layouts and CSV
schemas are documented in docs/formats.md.

Exit codes: 0 success, 2 bad usage, 3 numerical failure during setup,
solve, or correction inference, 4 unreadable or malformed files.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path
from typing import Optional

MANIFEST_VERSION = 1

_THREAD_ENV = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------

def _write_manifest(out_dir: Path, command: str, a: argparse.Namespace,
                    extra: Optional[dict] = None) -> None:
    lines = [f"format_version={MANIFEST_VERSION}", f"command={command}"]
    ns = vars(a)
    for key in sorted(ns):
        if key in ("func", "command"):
            continue
        lines.append(f"{key}={ns[key]}")
    for key, value in (extra or {}).items():
        lines.append(f"{key}={value}")
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def _out_dir(a: argparse.Namespace) -> Path:
    d = Path(a.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _load_matrix(path: str):
    from .sparse import load_binary, load_matrix_market

    p = Path(path)
    if p.suffix in (".mtx", ".mm"):
        return load_matrix_market(p)
    return load_binary(p)


def _setup_config(a: argparse.Namespace):
    from .hierarchy import SetupConfig

    return SetupConfig(eps_soc=a.eps_soc, eps_mat=a.eps_mat,
                       omega_smooth=a.omega_smooth, max_levels=a.max_levels,
                       min_coarse_size=a.min_coarse_size)


def _canon_cli_variant(variant: str) -> str:
    from .hierarchy import _canon_variant

    return _canon_variant(variant)


def _build_timed(A, variant: str, cfg, seed: int, a: argparse.Namespace,
                 coarse_solver: Optional[str]):
    """Build a hierarchy, augmenting with corrections for the learned
    variant, and return (hierarchy, setup_seconds, forward_seconds)."""
    from .gnn import augment_hierarchy, load_weights
    from .hierarchy import build_hierarchy

    t0 = time.perf_counter()
    h = build_hierarchy(A, variant, cfg, seed, coarse_solver=coarse_solver)
    setup_seconds = time.perf_counter() - t0
    forward_seconds = 0.0
    if variant == "gnn":
        w = load_weights(a.weights)
        t0 = time.perf_counter()
        h = augment_hierarchy(h, w, apply_dpdr=not a.no_dpdr,
                              apply_da=not a.no_da, mix=not a.no_mix)
        forward_seconds = time.perf_counter() - t0
    return h, setup_seconds, forward_seconds


def _rhs_vector(token: str, A, seed_key) -> "object":
    import numpy as np

    n = A.n_rows
    if token == "zero":
        return np.zeros(n)
    if token == "random":
        b = np.random.default_rng(seed_key).standard_normal(n)
        # graph Laplacians are singular with a constant nullspace; a raw
        # random rhs is then inconsistent and no solver can reach the
        # tolerance, so project it out when row sums vanish identically
        rowsums = A._csr64 @ np.ones(n)
        scale = max(float(np.abs(A._csr64.diagonal()).max(initial=0.0)), 1.0)
        if np.abs(rowsums).max(initial=0.0) <= 1e-10 * scale:
            b = b - b.mean()
        return b
    b = np.loadtxt(token, dtype=np.float64, ndmin=1)
    if b.shape != (n,):
        from .errors import UsageError

        raise UsageError(f"rhs file has shape {b.shape}, expected ({n},)")
    return b


def _run_solve(h, b, cfg, mode: str, restart: int, tol: float, max_iters: int,
               setup_seconds: float, solution_out=None):
    import numpy as np

    from .cycles import fgmres, solve_standalone, vcycle_preconditioner
    from .hierarchy import operator_complexity

    x0 = np.zeros_like(b)
    if mode == "standalone":
        return solve_standalone(h, b, x0, cfg, tol=tol, max_iters=max_iters,
                                setup_seconds=setup_seconds,
                                solution_out=solution_out)
    report = fgmres(h.levels[0].A, b, x0, vcycle_preconditioner(h, cfg),
                    restart=restart, tol=tol, max_iters=max_iters,
                    setup_seconds=setup_seconds,
                    op_complexity=operator_complexity(h))
    return report


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen(a: argparse.Namespace) -> int:
    from .problems import ProblemSpec, generate
    from .sparse import save_binary, save_matrix_market

    params = {}
    for flag, key in (("n", "n"), ("k", "k"), ("p", "p"), ("m", "m"),
                      ("T", "T"), ("hubs", "h")):
        value = getattr(a, flag)
        if value is not None:
            params[key] = value
    prob = generate(ProblemSpec(a.family, seed=a.seed, normalize=a.normalize,
                                params=params))
    out = _out_dir(a)
    save_matrix_market(prob.A, out / "matrix.mtx")
    save_binary(prob.A, out / "matrix.bin")
    extra = {f"meta_{k}": v for k, v in sorted(prob.meta.items())}
    _write_manifest(out, "gen", a, extra)
    print(f"wrote {out / 'matrix.mtx'} (n={prob.A.n_rows}, nnz={prob.A.nnz})")
    return 0


def cmd_setup(a: argparse.Namespace) -> int:
    from .errors import UsageError
    from .hierarchy import dump_hierarchy, operator_complexity

    variant = _canon_cli_variant(a.variant)
    if variant == "gnn" and not a.weights:
        raise UsageError("the learned variant needs --weights")
    A = _load_matrix(a.matrix)
    cfg = _setup_config(a)
    h, setup_seconds, forward_seconds = _build_timed(
        A, variant, cfg, a.seed, a, a.coarse_solver)
    out = _out_dir(a)
    dump_hierarchy(h, out / "hierarchy")
    extra = {
        "n": A.n_rows,
        "nnz": A.nnz,
        "depth": h.depth,
        "resolved_coarse_solver": h.coarse_solver,
        "operator_complexity": f"{operator_complexity(h):.6g}",
        "setup_seconds": f"{setup_seconds:.6g}",
        "forward_seconds": f"{forward_seconds:.6g}",
        "transfer_seconds": "0",
    }
    _write_manifest(out, "setup", a, extra)
    print(f"hierarchy depth {h.depth}, complexity "
          f"{operator_complexity(h):.3f}, setup {setup_seconds:.3g}s, "
          f"forward {forward_seconds:.3g}s")
    return 0


def cmd_solve(a: argparse.Namespace) -> int:
    import numpy as np

    from .cycles import (CycleConfig, REPORT_CSV_HEADER, report_csv_row,
                         write_history_csv)
    from .hierarchy import load_hierarchy

    h = load_hierarchy(a.hierarchy)
    A = h.levels[0].A
    b = _rhs_vector(a.rhs, A, [a.seed, 7])
    cfg = CycleConfig(nu_pre=a.nu_pre, nu_post=a.nu_post, omega=a.omega,
                      coarse_solver=a.coarse_solver)
    x = np.zeros(A.n_rows)
    report = _run_solve(h, b, cfg, a.mode, a.restart, a.tol, a.max_iters,
                        0.0, solution_out=x if a.mode == "standalone" else None)
    hpath = Path(a.hierarchy)
    default_id = hpath.parent.name if hpath.name == "hierarchy" else hpath.name
    problem_id = a.problem_id or default_id or "problem"
    out = _out_dir(a)
    row = report_csv_row(report, problem_id, h.variant, a.mode,
                         A.n_rows, A.nnz)
    (out / "report.csv").write_text(REPORT_CSV_HEADER + "\n" + row + "\n")
    write_history_csv(report, out / "history.csv")
    if a.mode == "standalone":
        np.savetxt(out / "solution.txt", x, fmt="%.17e")
    _write_manifest(out, "solve", a, {
        "n": A.n_rows, "nnz": A.nnz, "variant": h.variant,
        "iterations": report.iterations,
        "converged": str(report.converged).lower(),
    })
    status = "converged" if report.converged else "did not converge"
    print(f"{problem_id}: {status} in {report.iterations} iterations "
          f"(rate {report.convergence_rate:.3g})")
    return 0 if not report.diverged else 3


def _mean_std(values):
    import numpy as np

    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return 0.0, 0.0
    return float(v.mean()), float(v.std())


SUMMARY_CSV_HEADER = ("family,variant,mode,instances,failures,"
                      "iterations_mean,iterations_std,rate_mean,rate_std,"
                      "setup_seconds_mean,setup_seconds_std,"
                      "forward_seconds_mean,transfer_seconds_mean,"
                      "op_complexity_mean")


def cmd_bench(a: argparse.Namespace) -> int:
    import numpy as np

    from .cycles import CycleConfig, REPORT_CSV_HEADER, report_csv_row
    from .errors import UsageError
    from .export import FAMILY_POLICY
    from .hierarchy import SetupConfig
    from .problems import ProblemSpec, generate

    families = [f.strip() for f in a.families.split(",") if f.strip()]
    variants = [_canon_cli_variant(v) for v in a.variants.split(",") if v.strip()]
    modes = [m.strip() for m in a.modes.split(",") if m.strip()]
    if not families or not variants or not modes:
        raise UsageError("need at least one family, variant, and mode")
    for m in modes:
        if m not in ("standalone", "gmres"):
            raise UsageError(f"mode must be standalone or gmres, got {m!r}")
    if "gnn" in variants and not a.weights:
        raise UsageError("the learned variant needs --weights")

    rows = []
    groups = {}
    for family in families:
        policy = FAMILY_POLICY[family] if family in FAMILY_POLICY else None
        if policy is None:
            raise UsageError(f"no benchmark policy for family {family!r}")
        depth = a.depth if a.depth is not None else policy.eval_depth
        sweeps = a.sweeps if a.sweeps is not None else policy.eval_sweeps
        cfg = SetupConfig(eps_soc=a.eps_soc, eps_mat=a.eps_mat,
                          max_levels=depth, min_coarse_size=a.min_coarse_size)
        params = {} if a.n is None else {"n": a.n}
        for i in range(a.instances):
            seed_i = a.seed + i
            prob = generate(ProblemSpec(family, seed=seed_i, params=params))
            A = prob.A
            b = _rhs_vector("random", A, [seed_i, 101])
            problem_id = f"{family}-s{seed_i}"
            for variant in variants:
                # learned corrections ride on the baseline aggregation
                # hierarchy, coarse solver included, so zero corrections
                # reproduce the agg rows; --gnn-coarse opts out of that.
                coarse = None
                if variant == "gnn":
                    coarse = a.gnn_coarse or "dense_lu"
                    if coarse == "policy":
                        coarse = policy.gnn_eval_coarse
                h, setup_s, forward_s = _build_timed(A, variant, cfg, seed_i,
                                                     a, coarse)
                cycle = CycleConfig(nu_pre=sweeps, nu_post=sweeps,
                                    omega=a.omega)
                for mode in modes:
                    report = _run_solve(h, b, cycle, mode, a.restart, a.tol,
                                        a.max_iters, setup_s)
                    rows.append(report_csv_row(report, problem_id, variant,
                                               mode, A.n_rows, A.nnz))
                    g = groups.setdefault((family, variant, mode), {
                        "iters": [], "rates": [], "setup": [], "forward": [],
                        "oc": [], "failures": 0,
                    })
                    g["iters"].append(report.iterations)
                    g["rates"].append(report.convergence_rate)
                    g["setup"].append(setup_s)
                    g["forward"].append(forward_s)
                    g["oc"].append(report.operator_complexity)
                    if not report.converged:
                        g["failures"] += 1

    out = _out_dir(a)
    (out / "results.csv").write_text(
        REPORT_CSV_HEADER + "\n" + "\n".join(rows) + "\n")
    summary = [SUMMARY_CSV_HEADER]
    for (family, variant, mode), g in groups.items():
        im, is_ = _mean_std(g["iters"])
        rm, rs = _mean_std(g["rates"])
        sm, ss = _mean_std(g["setup"])
        fm, _ = _mean_std(g["forward"])
        ocm, _ = _mean_std(g["oc"])
        summary.append(
            f"{family},{variant},{mode},{len(g['iters'])},{g['failures']},"
            f"{im:.6g},{is_:.6g},{rm:.6g},{rs:.6g},{sm:.6g},{ss:.6g},"
            f"{fm:.6g},0,{ocm:.6g}")
    (out / "summary.csv").write_text("\n".join(summary) + "\n")
    _write_manifest(out, "bench", a, {"rows": len(rows)})
    total_failures = sum(g["failures"] for g in groups.values())
    print(f"bench wrote {len(rows)} rows over {len(groups)} groups "
          f"({total_failures} non-converged)")
    return 0


def cmd_export_train(a: argparse.Namespace) -> int:
    from .errors import UsageError
    from .export import (FAMILY_POLICY, export_training_sample,
                         gen_residual_batch)
    from .hierarchy import SetupConfig, build_hierarchy
    from .problems import ProblemSpec, generate

    families = [f.strip() for f in a.families.split(",") if f.strip()]
    if not families:
        raise UsageError("need at least one family")
    out = _out_dir(a)
    sample_lines = []
    for family in families:
        if family not in FAMILY_POLICY:
            raise UsageError(f"no training policy for family {family!r}")
        policy = FAMILY_POLICY[family]
        depth = a.depth if a.depth is not None else policy.train_depth
        cfg = SetupConfig(eps_soc=a.eps_soc, eps_mat=a.eps_mat,
                          max_levels=depth, min_coarse_size=a.min_coarse_size)
        params = {} if a.n is None else {"n": a.n}
        for i in range(a.instances):
            seed_i = a.seed + i
            prob = generate(ProblemSpec(family, seed=seed_i, params=params))
            h = build_hierarchy(prob.A, "agg", cfg, seed_i)
            batch = gen_residual_batch(h, a.n_b, seed_i)
            name = f"{family}/sample_{i:04d}"
            export_training_sample(out / name, h, batch, family, seed_i,
                                   seed_i)
            sample_lines.append(
                f"{name} family={family} seed={seed_i} n={prob.A.n_rows} "
                f"depth={h.depth} n_b={a.n_b} resampled={batch.resampled}")
    extra = {f"sample_{j:04d}": line for j, line in enumerate(sample_lines)}
    extra["samples"] = len(sample_lines)
    _write_manifest(out, "export-train", a, extra)
    print(f"exported {len(sample_lines)} samples under {out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--tol", type=float, default=1e-6)
    common.add_argument("--max-iters", type=int, default=1000)

    setup_opts = argparse.ArgumentParser(add_help=False)
    setup_opts.add_argument("--eps-soc", type=float, default=0.5)
    setup_opts.add_argument("--eps-mat", type=float, default=0.02)
    setup_opts.add_argument("--omega-smooth", type=float, default=None)
    setup_opts.add_argument("--max-levels", type=int, default=25)
    setup_opts.add_argument("--min-coarse-size", type=int, default=64)

    learned_opts = argparse.ArgumentParser(add_help=False)
    learned_opts.add_argument("--weights", default=None,
                              help="weight directory for the learned variant")
    learned_opts.add_argument("--no-dpdr", action="store_true",
                              help="drop the transfer corrections")
    learned_opts.add_argument("--no-da", action="store_true",
                              help="drop the coarse-operator corrections")
    learned_opts.add_argument("--no-mix", action="store_true",
                              help="disable latent mixing between levels")

    p = argparse.ArgumentParser(
        prog="amglearn",
        description="aggregation-based multigrid with optional learned "
                    "sparse corrections")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common],
                       help="generate a problem operator")
    g.add_argument("--family", required=True)
    g.add_argument("--n", type=int, default=None)
    g.add_argument("--k", type=int, default=None)
    g.add_argument("--p", type=float, default=None)
    g.add_argument("--m", type=int, default=None)
    g.add_argument("--T", type=int, default=None)
    g.add_argument("--hubs", type=int, default=None)
    g.add_argument("--normalize", action=argparse.BooleanOptionalAction,
                   default=None)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("setup", parents=[common, setup_opts, learned_opts],
                       help="build and store a hierarchy")
    s.add_argument("--matrix", required=True)
    s.add_argument("--variant", default="sa",
                   choices=["agg", "sa", "spsa", "gnn", "rapnet"])
    s.add_argument("--coarse-solver", default=None)
    s.set_defaults(func=cmd_setup)

    so = sub.add_parser("solve", parents=[common],
                        help="solve with a stored hierarchy")
    so.add_argument("--hierarchy", required=True)
    so.add_argument("--rhs", default="random",
                    help="random, zero, or a text file of values")
    so.add_argument("--mode", default="standalone",
                    choices=["standalone", "gmres"])
    so.add_argument("--restart", type=int, default=2)
    so.add_argument("--nu-pre", type=int, default=2)
    so.add_argument("--nu-post", type=int, default=2)
    so.add_argument("--omega", type=float, default=0.6)
    so.add_argument("--coarse-solver", default=None)
    so.add_argument("--problem-id", default=None)
    so.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", parents=[common, setup_opts, learned_opts],
                       help="run a benchmark sweep")
    b.add_argument("--families", required=True,
                   help="comma-separated generator families")
    b.add_argument("--variants", default="agg,sa")
    b.add_argument("--modes", default="standalone")
    b.add_argument("--instances", type=int, default=10)
    b.add_argument("--n", type=int, default=None,
                   help="override the family size parameter")
    b.add_argument("--restart", type=int, default=2)
    b.add_argument("--omega", type=float, default=0.6)
    b.add_argument("--sweeps", type=int, default=None,
                   help="override the per-family smoothing sweep count")
    b.add_argument("--depth", type=int, default=None,
                   help="override the per-family level cap")
    b.add_argument("--gnn-coarse", default=None,
                   help="coarse solver for learned rows: a token, or "
                        "'policy' for the per-family evaluation choice "
                        "(default: same as the agg baseline)")
    b.set_defaults(func=cmd_bench)

    e = sub.add_parser("export-train", parents=[common, setup_opts],
                       help="export training samples")
    e.add_argument("--families", required=True)
    e.add_argument("--instances", type=int, default=50)
    e.add_argument("--n", type=int, default=None)
    e.add_argument("--n-b", type=int, default=64,
                   help="residual/error pairs per sample")
    e.add_argument("--depth", type=int, default=None,
                   help="override the per-family training depth")
    e.set_defaults(func=cmd_export_train)
    return p


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    for var in _THREAD_ENV:
        os.environ.setdefault(var, str(a.threads))

    from .errors import (FormatError, InferenceError, SetupError, SolverError,
                         UsageError)

    try:
        return a.func(a)
    except UsageError as exc:
        print(f"amglearn: usage error: {exc}", file=sys.stderr)
        return 2
    except (SetupError, SolverError, InferenceError) as exc:
        print(f"amglearn: numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"amglearn: file error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
