"""The numba and numpy kernel paths must produce identical results."""

import numpy as np
import pytest

from lossfda import _kernels


@pytest.fixture
def both_backends():
    original = _kernels.backend()
    yield
    _kernels.set_backend(original)


def _run_both(fn, *args):
    _kernels.set_backend("numpy")
    a = fn(*args)
    if _kernels._HAVE_NUMBA:
        _kernels.set_backend("numba")
        b = fn(*args)
    else:
        b = a
    return a, b


def test_lasso_cd_backends_agree(both_backends, rng):
    for _ in range(25):
        p = int(rng.integers(2, 12))
        N = int(rng.integers(p + 1, 60))
        X = rng.standard_normal((N, p))
        X = (X - X.mean(axis=0)) / X.std(axis=0)
        y = rng.standard_normal(N)
        G = X.T @ X / N
        c = X.T @ (y - y.mean()) / N
        lam = float(rng.uniform(0, 0.5))
        (t1, i1, ok1), (t2, i2, ok2) = _run_both(_kernels.lasso_cd, G, c, lam)
        assert np.array_equal(t1, t2)
        assert (i1, ok1) == (i2, ok2)


def test_lasso_cd_skips_dropped_columns(both_backends):
    G = np.eye(3)
    G[1, 1] = 0.0  # dropped column encoded by a zero diagonal
    c = np.array([0.4, 0.9, -0.2])
    for backend in ("numpy", "numba") if _kernels._HAVE_NUMBA else ("numpy",):
        _kernels.set_backend(backend)
        theta, _, ok = _kernels.lasso_cd(G, c, 0.1)
        assert ok
        assert theta[1] == 0.0
        assert theta[0] == pytest.approx(0.3)


def test_exd_counts_backends_agree(both_backends, rng):
    for _ in range(25):
        M = int(rng.integers(2, 40))
        L = int(rng.integers(1, 11))
        E = np.sort(rng.integers(1, M + 1, size=(M, L)), axis=1)
        a, b = _run_both(_kernels.exd_dominance_counts, E)
        assert np.array_equal(a, b)


def test_exd_counts_ties_share_count(both_backends):
    E = np.array([[1, 2], [1, 2], [2, 2]])
    for backend in ("numpy", "numba") if _kernels._HAVE_NUMBA else ("numpy",):
        _kernels.set_backend(backend)
        counts = _kernels.exd_dominance_counts(E)
        # the two tied rows each dominate both tied rows; the last row all three
        assert counts.tolist() == [2, 2, 3]


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        _kernels.set_backend("gpu")
