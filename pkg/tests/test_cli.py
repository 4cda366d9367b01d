"""End-to-end checks of the command-line interface."""

import hashlib
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from amglearn.cli import main
from amglearn.export import import_training_sample
from amglearn.gnn import random_weights, save_weights, with_zero_decoder
from amglearn.sparse import load_matrix_market


def run(*args):
    return main([str(a) for a in args])


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(Path(root).rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def read_rows(path):
    lines = Path(path).read_text().splitlines()
    return lines[0], [line.split(",") for line in lines[1:]]


@pytest.fixture(scope="module")
def weight_dirs(tmp_path_factory):
    d = tmp_path_factory.mktemp("weights")
    save_weights(with_zero_decoder(random_weights(0)), d / "zero")
    save_weights(random_weights(4), d / "rand")
    return d / "zero", d / "rand"


@pytest.fixture(scope="module")
def problem_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("prob")
    assert run("gen", "--family", "poisson2d", "--n", 16, "--out", d,
               "--seed", 3) == 0
    return d


@pytest.fixture(scope="module")
def sa_hierarchy(problem_dir, tmp_path_factory):
    d = tmp_path_factory.mktemp("sa")
    assert run("setup", "--matrix", problem_dir / "matrix.mtx",
               "--variant", "sa", "--out", d, "--seed", 3) == 0
    return d / "hierarchy"


def test_gen_is_deterministic(tmp_path):
    args = ("gen", "--family", "geo2d", "--n", 300, "--seed", 11,
            "--out", tmp_path / "g")
    assert run(*args) == 0
    first = {p.name: p.read_bytes() for p in (tmp_path / "g").iterdir()}
    assert run(*args) == 0
    second = {p.name: p.read_bytes() for p in (tmp_path / "g").iterdir()}
    assert set(first) == {"matrix.mtx", "matrix.bin", "manifest.txt"}
    assert first == second


def test_gen_manifest_echoes_flags(problem_dir):
    text = (problem_dir / "manifest.txt").read_text()
    assert "command=gen\n" in text
    assert "family=poisson2d\n" in text
    assert "seed=3\n" in text
    assert "meta_nnz=1216\n" in text


def test_gen_output_loads(problem_dir):
    A = load_matrix_market(problem_dir / "matrix.mtx")
    assert A.n_rows == 256
    assert A.nnz == 1216


def test_gen_rejects_unknown_family(tmp_path):
    assert run("gen", "--family", "nosuch", "--out", tmp_path) == 2


def test_gen_rejects_family_foreign_parameter(tmp_path):
    # k belongs to the small-world family, not the grid Laplacian
    assert run("gen", "--family", "poisson2d", "--k", 4,
               "--out", tmp_path) == 2


def test_setup_hierarchy_bytes_deterministic(problem_dir, tmp_path):
    for sub in ("a", "b"):
        assert run("setup", "--matrix", problem_dir / "matrix.bin",
                   "--variant", "spsa", "--out", tmp_path / sub,
                   "--seed", 7) == 0
    assert (tree_digest(tmp_path / "a" / "hierarchy")
            == tree_digest(tmp_path / "b" / "hierarchy"))


def test_setup_learned_variant_requires_weights(problem_dir, tmp_path):
    assert run("setup", "--matrix", problem_dir / "matrix.mtx",
               "--variant", "rapnet", "--out", tmp_path) == 2


def test_setup_alias_resolves_to_gnn(problem_dir, tmp_path, weight_dirs):
    zero, _ = weight_dirs
    assert run("setup", "--matrix", problem_dir / "matrix.mtx",
               "--variant", "rapnet", "--weights", zero,
               "--out", tmp_path, "--seed", 3) == 0
    manifest = (tmp_path / "hierarchy" / "manifest.txt").read_text()
    assert "variant=gnn\n" in manifest
    assert "rapnet" not in manifest


def test_setup_zero_weights_keeps_agg_operators(problem_dir, tmp_path,
                                                weight_dirs):
    zero, _ = weight_dirs
    assert run("setup", "--matrix", problem_dir / "matrix.mtx",
               "--variant", "agg", "--out", tmp_path / "agg",
               "--seed", 3) == 0
    assert run("setup", "--matrix", problem_dir / "matrix.mtx",
               "--variant", "gnn", "--weights", zero,
               "--out", tmp_path / "gnn", "--seed", 3) == 0
    agg = tmp_path / "agg" / "hierarchy"
    gnn = tmp_path / "gnn" / "hierarchy"
    for name in ("A_0.bin", "A_1.bin", "P_0.bin", "R_0.bin"):
        assert (agg / name).read_bytes() == (gnn / name).read_bytes()


def test_setup_reports_forward_time_separately(problem_dir, tmp_path,
                                               weight_dirs):
    _, rand = weight_dirs
    assert run("setup", "--matrix", problem_dir / "matrix.mtx",
               "--variant", "gnn", "--weights", rand,
               "--out", tmp_path, "--seed", 3) == 0
    keys = dict(line.split("=", 1) for line
                in (tmp_path / "manifest.txt").read_text().splitlines())
    assert float(keys["setup_seconds"]) > 0
    assert float(keys["forward_seconds"]) > 0
    assert keys["transfer_seconds"] == "0"


def test_solve_report_and_history_agree(sa_hierarchy, tmp_path):
    assert run("solve", "--hierarchy", sa_hierarchy, "--out", tmp_path,
               "--seed", 3, "--problem-id", "p16") == 0
    header, rows = read_rows(tmp_path / "report.csv")
    assert header.startswith("problem_id,variant,mode,")
    (row,) = rows
    assert row[0] == "p16"
    assert row[1] == "sa"
    assert row[2] == "standalone"
    assert row[6] == "true"
    iterations = int(row[5])
    _, hist = read_rows(tmp_path / "history.csv")
    assert len(hist) == iterations + 1
    assert float(hist[0][1]) == 1.0
    x = np.loadtxt(tmp_path / "solution.txt")
    assert x.shape == (256,)


def test_solve_zero_rhs_is_immediate(sa_hierarchy, tmp_path):
    assert run("solve", "--hierarchy", sa_hierarchy, "--rhs", "zero",
               "--out", tmp_path) == 0
    _, rows = read_rows(tmp_path / "report.csv")
    assert rows[0][5] == "0"
    assert rows[0][6] == "true"
    _, hist = read_rows(tmp_path / "history.csv")
    assert len(hist) == 1


def test_solve_rhs_file_roundtrip(sa_hierarchy, tmp_path):
    b = np.random.default_rng(1).standard_normal(256)
    np.savetxt(tmp_path / "b.txt", b)
    assert run("solve", "--hierarchy", sa_hierarchy,
               "--rhs", tmp_path / "b.txt", "--out", tmp_path) == 0
    x = np.loadtxt(tmp_path / "solution.txt")
    _, rows = read_rows(tmp_path / "report.csv")
    assert rows[0][6] == "true"
    assert x.shape == (256,)


def test_solve_rhs_file_wrong_length(sa_hierarchy, tmp_path):
    np.savetxt(tmp_path / "b.txt", np.ones(10))
    assert run("solve", "--hierarchy", sa_hierarchy,
               "--rhs", tmp_path / "b.txt", "--out", tmp_path) == 2


def test_solve_gmres_not_slower_than_standalone(sa_hierarchy, tmp_path):
    assert run("solve", "--hierarchy", sa_hierarchy, "--out",
               tmp_path / "st", "--seed", 12) == 0
    assert run("solve", "--hierarchy", sa_hierarchy, "--mode", "gmres",
               "--out", tmp_path / "gm", "--seed", 12) == 0
    _, st = read_rows(tmp_path / "st" / "report.csv")
    _, gm = read_rows(tmp_path / "gm" / "report.csv")
    assert gm[0][2] == "gmres"
    assert int(gm[0][5]) <= int(st[0][5])


def _strip_timing(row):
    # drop variant and setup_seconds, the two legitimately different columns
    return [v for i, v in enumerate(row) if i not in (1, 8)]


def test_bench_zero_weights_reproduces_agg_rows(tmp_path, weight_dirs):
    zero, _ = weight_dirs
    assert run("bench", "--families", "poisson2d", "--n", 16,
               "--instances", 2, "--variants", "agg,rapnet",
               "--modes", "standalone,gmres", "--weights", zero,
               "--out", tmp_path, "--seed", 5) == 0
    _, rows = read_rows(tmp_path / "results.csv")
    agg = [_strip_timing(r) for r in rows if r[1] == "agg"]
    gnn = [_strip_timing(r) for r in rows if r[1] == "gnn"]
    assert len(agg) == len(gnn) == 4
    assert agg == gnn


def test_bench_ablations_remove_all_corrections(tmp_path, weight_dirs):
    _, rand = weight_dirs
    assert run("bench", "--families", "poisson2d", "--n", 16,
               "--instances", 1, "--variants", "agg,gnn",
               "--weights", rand, "--no-dpdr", "--no-da",
               "--out", tmp_path, "--seed", 9) == 0
    _, rows = read_rows(tmp_path / "results.csv")
    assert _strip_timing(rows[0]) == _strip_timing(rows[1])


def test_bench_summary_shape_and_counts(tmp_path):
    assert run("bench", "--families", "poisson2d,geo2d", "--n", 300,
               "--instances", 2, "--variants", "agg,sa",
               "--out", tmp_path, "--seed", 1) == 0
    _, results = read_rows(tmp_path / "results.csv")
    assert len(results) == 8
    header, summary = read_rows(tmp_path / "summary.csv")
    assert header.split(",")[:5] == ["family", "variant", "mode",
                                    "instances", "failures"]
    assert len(summary) == 4
    for row in summary:
        assert row[3] == "2"
        assert row[12] == "0"  # transfer column stays zero


def test_bench_flags_nonconverged_runs(tmp_path):
    # two cycles cannot reach 1e-6 on this problem
    assert run("bench", "--families", "poisson2d", "--n", 16,
               "--instances", 1, "--variants", "agg", "--max-iters", 2,
               "--out", tmp_path) == 0
    _, rows = read_rows(tmp_path / "results.csv")
    assert rows[0][6] == "false"
    assert rows[0][5] == "2"
    _, summary = read_rows(tmp_path / "summary.csv")
    assert summary[0][4] == "1"


def test_export_train_deterministic_and_consistent(tmp_path):
    args = ("export-train", "--families", "poisson2d", "--instances", 2,
            "--n", 16, "--n-b", 4, "--out", tmp_path / "ds", "--seed", 2)
    assert run(*args) == 0
    digest = tree_digest(tmp_path / "ds")
    assert run(*args) == 0
    assert tree_digest(tmp_path / "ds") == digest

    sample = import_training_sample(tmp_path / "ds" / "poisson2d" / "sample_0001")
    assert sample.batch.n_b == 4
    A = sample.hierarchy.levels[0].A._csr64
    for r, e in zip(sample.batch.residuals.astype(np.float64),
                    sample.batch.errors.astype(np.float64)):
        assert np.linalg.norm(A @ e - r) <= 1e-4 * np.linalg.norm(r)

    manifest = (tmp_path / "ds" / "manifest.txt").read_text()
    assert "samples=2\n" in manifest
    assert "sample_0000=poisson2d/sample_0000 " in manifest


def test_exit_code_for_coarsening_stall(tmp_path):
    import scipy.sparse as sp

    from amglearn.sparse import SparseMatrix, save_matrix_market

    save_matrix_market(SparseMatrix.from_scipy(sp.identity(100, format="csr")),
                       tmp_path / "eye.mtx")
    assert run("setup", "--matrix", tmp_path / "eye.mtx", "--variant", "agg",
               "--out", tmp_path / "h") == 3


def test_exit_code_for_missing_files(tmp_path):
    assert run("setup", "--matrix", tmp_path / "nope.mtx", "--variant", "agg",
               "--out", tmp_path) == 4
    assert run("solve", "--hierarchy", tmp_path / "nodir",
               "--out", tmp_path) == 4


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "amglearn.cli", "gen", "--family", "tba",
         "--n", "30", "--T", "10", "--out", str(tmp_path), "--seed", "1"],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert (tmp_path / "matrix.mtx").is_file()
    assert "wrote" in proc.stdout
