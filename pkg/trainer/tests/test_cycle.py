import numpy as np
import torch

from amgtrainer import (CorrectionNet, error_cycle, read_sample,
                        relative_loss, sample_tensors)
from conftest import solver


def zero_corrections(st):
    torch.manual_seed(0)
    return CorrectionNet().to(st.ops[0].values.dtype).augment(st)


def test_cycle_matches_solver_single_iteration(smoke_dataset, tmp_path):
    """One zero-correction cycle equals the solver's first standalone
    V-cycle under the training configuration."""
    from amgtrainer.formats import scan_dataset
    sample = scan_dataset(smoke_dataset)[0]
    s = read_sample(sample)
    st = sample_tensors(s, dtype=torch.float64)
    rhs = s.residuals[0].astype(np.float64)
    np.savetxt(tmp_path / "rhs.txt", rhs, fmt="%.17e")
    solver("solve", "--hierarchy", sample / "hierarchy",
           "--rhs", tmp_path / "rhs.txt", "--mode", "standalone",
           "--max-iters", "1", "--nu-pre", "2", "--nu-post", "2",
           "--omega", "0.6", "--coarse-solver", "jacobi:2",
           "--tol", "1e-30", "--out", tmp_path / "run")
    ref = np.loadtxt(tmp_path / "run" / "solution.txt")
    with torch.no_grad():
        mine = error_cycle(st, zero_corrections(st),
                           torch.from_numpy(rhs).unsqueeze(0))[0].numpy()
    assert np.abs(mine - ref).max() <= 1e-5 * max(np.abs(ref).max(), 1e-30)


def test_zero_rhs_maps_to_zero_error(tiny_sample):
    st = sample_tensors(read_sample(tiny_sample), dtype=torch.float64)
    rhs = torch.zeros(3, 16, dtype=torch.float64)
    with torch.no_grad():
        out = error_cycle(st, zero_corrections(st), rhs)
    assert torch.equal(out, rhs)


def test_relative_loss_matches_reference_formula():
    rng = np.random.default_rng(8)
    e_hat = rng.standard_normal((5, 12))
    e = rng.standard_normal((5, 12))
    want = float(np.mean(((e_hat - e) ** 2).sum(axis=1)
                         / ((e ** 2).sum(axis=1) + 1e-12)))
    got = float(relative_loss(torch.from_numpy(e_hat), torch.from_numpy(e)))
    assert abs(got - want) <= 1e-12 * abs(want)


def test_zero_correction_loss_equals_baseline_cycle(tiny_sample):
    """A fresh model scores exactly the un-augmented hierarchy's loss."""
    s = read_sample(tiny_sample)
    st = sample_tensors(s, dtype=torch.float64)
    cv = zero_corrections(st)
    with torch.no_grad():
        via_model = relative_loss(error_cycle(st, cv, st.residuals), st.errors)
        from amgtrainer.model import CorrectedValues
        base = CorrectedValues([op.values for op in st.ops],
                               [p.values for p in st.P],
                               [r.values for r in st.R])
        via_base = relative_loss(error_cycle(st, base, st.residuals), st.errors)
    assert torch.equal(via_model, via_base)
