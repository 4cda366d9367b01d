"""Fixtures drive the solver CLI as a subprocess; the trainer sees only
the files it leaves behind."""
import subprocess
import sys

import pytest


def solver(*args, cwd=None, expect=0):
    r = subprocess.run([sys.executable, "-m", "amglearn.cli",
                        *[str(a) for a in args]],
                       capture_output=True, text=True, cwd=cwd)
    assert r.returncode == expect, f"amglearn {args}\n{r.stdout}\n{r.stderr}"
    return r


@pytest.fixture(scope="session")
def smoke_dataset(tmp_path_factory):
    """Ten exported 2D Poisson samples, 64 unknowns each."""
    root = tmp_path_factory.mktemp("smoke") / "data"
    solver("export-train", "--families", "poisson2d", "--n", "8",
           "--instances", "10", "--n-b", "8", "--min-coarse-size", "8",
           "--seed", "0", "--out", root)
    return root


@pytest.fixture(scope="session")
def tiny_sample(tmp_path_factory):
    """One 16-node sample with a couple of right-hand sides."""
    root = tmp_path_factory.mktemp("tiny") / "data"
    solver("export-train", "--families", "poisson2d", "--n", "4",
           "--instances", "1", "--n-b", "4", "--min-coarse-size", "2",
           "--seed", "7", "--out", root)
    sample = root / "poisson2d" / "sample_0000"
    assert sample.is_dir()
    return sample
