"""Compiled and numpy kernels must agree, ties included."""

import numpy as np
import pytest

from jamaica.mlengine import kernels

pytestmark = pytest.mark.skipif(len(kernels.available()) < 2,
                                reason="compiled extension not built")


@pytest.fixture(scope="module")
def impls():
    return kernels.load("cython"), kernels.load("python")


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_knn_identical(impls, dim):
    rng = np.random.default_rng(dim)
    ref = rng.normal(size=(300, dim))
    q = rng.normal(size=(100, dim))
    (dc, ic), (dp, ip) = (m.knn(ref, q, 7) for m in impls)
    np.testing.assert_array_equal(ic, ip)
    np.testing.assert_allclose(dc, dp, rtol=1e-15)


def test_ties_break_by_index(impls):
    ref = np.array([[0.0], [2.0], [1.0], [3.0], [1.0]])
    q = np.array([[2.0]])
    for m in impls:
        d, i = m.knn(ref, q, 4)
        assert i[0].tolist() == [1, 2, 3, 4]
        assert d[0].tolist() == [0.0, 1.0, 1.0, 1.0]


def test_self_exclusion(impls):
    ref = np.array([[0.0], [0.0], [5.0]])
    for m in impls:
        d, i = m.knn(ref, ref, 1, True)
        assert i[:, 0].tolist() == [1, 0, 0]


def test_scores_agree(impls):
    rng = np.random.default_rng(9)
    ref = rng.uniform(5, 45, size=(1000, 1))
    q = np.concatenate([rng.uniform(-10, 100, size=(2000, 1)), ref[:10]])
    out = [m.score(ref, *m.fit(ref, 5, 1e-12), q, 5, 1e-12) for m in impls]
    np.testing.assert_allclose(out[0], out[1], rtol=1e-12)


def test_env_forces_fallback(monkeypatch):
    monkeypatch.setenv("JAMAICA_PURE_PYTHON", "1")
    backend, impl = kernels._select()
    assert backend == "python" and impl is kernels.load("python")


def test_benchmark_smoke():
    import subprocess
    import sys
    from pathlib import Path

    script = Path(__file__).parents[1] / "benchmarks" / "bench_lof.py"
    out = subprocess.run([sys.executable, str(script), "--train", "50", "--stream", "200",
                          "--repeat", "1"], capture_output=True, text=True, check=True).stdout
    assert "points/s" in out
