"""Training-pair generation, reference loss, sample serialization."""
import numpy as np
import pytest

from amglearn.errors import FormatError, SolverError, UsageError
from amglearn.export import (
    FAMILY_POLICY,
    ResidualBatch,
    export_training_sample,
    gen_residual_batch,
    import_training_sample,
    reference_loss,
    train_cycle_config,
)
from amglearn.gnn import build_composite
from amglearn.hierarchy import Hierarchy, Level, SetupConfig, build_hierarchy
from amglearn.problems import gen_poisson2d
from amglearn.sparse import SparseMatrix


def poisson_hierarchy(grid=16, seed=0):
    A = gen_poisson2d(grid).A
    return build_hierarchy(A, "agg", SetupConfig(min_coarse_size=16), seed=seed)


# ------------------------------------------------------------------ batches


def test_batch_error_residual_identity():
    h = poisson_hierarchy()
    M = h.levels[0].A._csr64
    batch = gen_residual_batch(h, 16, seed=3)
    assert batch.n_b == 16
    assert batch.resampled == 0
    assert np.all((batch.cycles_applied >= 1) & (batch.cycles_applied <= 30))
    for r, e in zip(batch.residuals, batch.errors):
        gap = np.linalg.norm(M @ e.astype(np.float64) - r) / np.linalg.norm(r)
        assert gap <= 1e-4


def test_batch_k_zero_hook_gives_raw_initial_residual():
    h = poisson_hierarchy(grid=8)
    M = h.levels[0].A._csr64
    n = h.levels[0].A.n_rows
    batch = gen_residual_batch(h, 4, seed=5, k_override=0)
    assert np.all(batch.cycles_applied == 0)
    for i in range(4):
        rng = np.random.default_rng([5, 71, i, 0])
        x_true = rng.standard_normal(n)
        x0 = rng.standard_normal(n)
        b = M @ x_true
        assert np.allclose(batch.residuals[i], (b - M @ x0).astype(np.float32),
                           atol=0.0)
        assert np.allclose(batch.errors[i], (x_true - x0).astype(np.float32),
                           atol=0.0)


def test_batch_cycles_reduce_residual():
    h = poisson_hierarchy()
    raw = gen_residual_batch(h, 8, seed=1, k_override=0)
    cooked = gen_residual_batch(h, 8, seed=1, k_override=3)
    for r0, rk in zip(raw.residuals, cooked.residuals):
        assert np.linalg.norm(rk) < np.linalg.norm(r0)


def test_batch_errors_get_smoother_with_k():
    # ||A e|| / ||e|| falls as more cycles are applied; sign test across the
    # batch guards against a fluke on any single sample
    h = poisson_hierarchy()
    M = h.levels[0].A._csr64

    def roughness(batch):
        out = []
        for e in batch.errors.astype(np.float64):
            out.append(np.linalg.norm(M @ e) / np.linalg.norm(e))
        return np.array(out)

    r1 = roughness(gen_residual_batch(h, 32, seed=7, k_override=1))
    r5 = roughness(gen_residual_batch(h, 32, seed=7, k_override=5))
    r15 = roughness(gen_residual_batch(h, 32, seed=7, k_override=15))
    assert (r1 > r5).sum() >= 24
    assert (r5 > r15).sum() >= 24
    assert r1.mean() > r5.mean() > r15.mean()


def test_batch_determinism_and_seed_sensitivity():
    h = poisson_hierarchy(grid=8)
    a = gen_residual_batch(h, 6, seed=2)
    b = gen_residual_batch(h, 6, seed=2)
    c = gen_residual_batch(h, 6, seed=3)
    assert np.array_equal(a.residuals, b.residuals)
    assert np.array_equal(a.errors, b.errors)
    assert np.array_equal(a.cycles_applied, b.cycles_applied)
    assert not np.array_equal(a.residuals, c.residuals)


def test_batch_rejects_bad_inputs():
    h = poisson_hierarchy(grid=8)
    with pytest.raises(UsageError):
        gen_residual_batch(h, 0, seed=0)
    with pytest.raises(UsageError):
        gen_residual_batch(h, 2, seed=0, k_override=31)
    A = gen_poisson2d(8).A
    h_sa = build_hierarchy(A, "sa", SetupConfig(min_coarse_size=16), seed=0)
    with pytest.raises(UsageError):
        gen_residual_batch(h_sa, 2, seed=0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_batch_divergence_exhausts_resamples():
    A = SparseMatrix.from_dense([[1.0]])
    blow = SparseMatrix.from_dense([[1e30]])
    h = Hierarchy([Level(A, blow, blow)], A, "dense_lu", "agg")
    with pytest.raises(SolverError, match="resamples"):
        gen_residual_batch(h, 1, seed=0)


def test_train_cycle_config_settings():
    cfg = train_cycle_config()
    assert (cfg.nu_pre, cfg.nu_post, cfg.omega) == (2, 2, 0.6)
    assert cfg.coarse_solver == "jacobi:2"


# ------------------------------------------------------------------- loss


def test_reference_loss_values():
    rng = np.random.default_rng(0)
    e = rng.standard_normal((3, 20))
    assert reference_loss(e, e) == 0.0
    assert reference_loss(np.zeros_like(e), e) == pytest.approx(1.0, abs=1e-9)
    assert reference_loss(2 * e, e) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(UsageError):
        reference_loss(e, e[:, :10])


def test_reference_loss_single_vector():
    e = np.array([3.0, 4.0])
    assert reference_loss([3.0, 0.0], e) == pytest.approx(16.0 / 25.0, rel=1e-9)


# ---------------------------------------------------------------- sample I/O


def test_sample_roundtrip_bitwise(tmp_path):
    h = poisson_hierarchy(grid=8)
    batch = gen_residual_batch(h, 5, seed=9)
    export_training_sample(tmp_path / "s", h, batch, "poisson2d", 0, 9)
    s = import_training_sample(tmp_path / "s")
    assert s.family == "poisson2d"
    assert (s.problem_seed, s.batch_seed) == (0, 9)
    assert s.depth == h.depth
    assert np.array_equal(s.batch.residuals, batch.residuals)
    assert np.array_equal(s.batch.errors, batch.errors)
    assert np.array_equal(s.batch.cycles_applied, batch.cycles_applied)
    for a, b in zip(h.operators(), s.hierarchy.operators()):
        assert a.same_pattern(b) and np.array_equal(a.values, b.values)

    # composite dumps reproduce what build_composite emits
    a_chain = [lev.A for lev in h.levels] + [h.coarsest_A]
    assert len(s.composites) == len(h.levels)
    for l, lev in enumerate(h.levels):
        g = build_composite(a_chain[l], lev.P, lev.R, a_chain[l + 1])
        dump = s.composites[l]
        assert (dump.n_fine, dump.n_coarse) == (g.n_fine, g.n_coarse)
        assert np.array_equal(dump.src, g.src)
        assert np.array_equal(dump.dst, g.dst)
        assert np.array_equal(dump.edge_features,
                              g.edge_features.astype(np.float32))


def test_sample_export_is_deterministic(tmp_path):
    h = poisson_hierarchy(grid=8)
    batch = gen_residual_batch(h, 3, seed=1)
    export_training_sample(tmp_path / "a", h, batch, "poisson2d", 0, 1)
    export_training_sample(tmp_path / "b", h, batch, "poisson2d", 0, 1)
    for name in ("residuals.bin", "errors.bin", "cycles.bin", "composite_0.bin",
                 "manifest.txt"):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()


def test_sample_import_errors(tmp_path):
    h = poisson_hierarchy(grid=8)
    batch = gen_residual_batch(h, 3, seed=1)
    d = tmp_path / "s"
    export_training_sample(d, h, batch, "poisson2d", 0, 1)

    with pytest.raises(FormatError, match="manifest"):
        import_training_sample(tmp_path / "missing")

    mf = (d / "manifest.txt").read_text()
    (d / "manifest.txt").write_text(mf.replace("format_version=1",
                                               "format_version=2"))
    with pytest.raises(FormatError, match="version"):
        import_training_sample(d)
    (d / "manifest.txt").write_text(mf)

    blob = (d / "residuals.bin").read_bytes()
    (d / "residuals.bin").write_bytes(blob[:-4])
    with pytest.raises(FormatError, match="truncated.*residuals"):
        import_training_sample(d)
    (d / "residuals.bin").write_bytes(blob)

    (d / "composite_0.bin").unlink()
    with pytest.raises(FormatError, match="composite_0"):
        import_training_sample(d)


def test_sample_export_validates_batch_width(tmp_path):
    h = poisson_hierarchy(grid=8)
    bad = ResidualBatch(np.zeros((2, 7), dtype=np.float32),
                        np.zeros((2, 7), dtype=np.float32), [1, 1])
    with pytest.raises(UsageError):
        export_training_sample(tmp_path / "s", h, bad, "poisson2d", 0, 0)


def test_residual_batch_validation():
    with pytest.raises(UsageError):
        ResidualBatch(np.zeros((2, 4)), np.zeros((3, 4)), [1, 1])
    with pytest.raises(UsageError):
        ResidualBatch(np.zeros((2, 4)), np.zeros((2, 4)), [1])
    with pytest.raises(UsageError):
        ResidualBatch(np.zeros((2, 4)), np.zeros((2, 4)), [1, 31])


def test_family_policy_table():
    assert FAMILY_POLICY["ws"].train_depth == 5
    assert FAMILY_POLICY["social"].eval_sweeps == 2
    assert FAMILY_POLICY["social"].gnn_eval_coarse == "jacobi:100"
    assert FAMILY_POLICY["geo2d"].gnn_eval_coarse == "jacobi:2"
    assert all(p.train_sweeps == 2 for p in FAMILY_POLICY.values())
