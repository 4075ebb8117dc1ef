"""Hot numeric kernels with two interchangeable backends.

The bootstrap loop refits one LASSO per factor per replicate and ranks
replicate paths by extremal depth, so these two inner loops dominate
runtime on large runs. Each kernel has a numba ``@njit`` implementation
and a pure-numpy implementation that produce identical results; the
active backend is chosen at import time from the ``LOSSFDA_NUMBA``
environment variable (``0`` forces the numpy path) and can be switched
at runtime with :func:`set_backend`. ``benchmarks/bench_kernels.py``
times the two paths against each other.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if len(args) == 1 and callable(args[0]):
            return args[0]
        return wrap


def _env_backend() -> str:
    flag = os.environ.get("LOSSFDA_NUMBA", "1").strip().lower()
    if flag in ("0", "false", "off", "numpy"):
        return "numpy"
    return "numba" if _HAVE_NUMBA else "numpy"


_BACKEND = _env_backend()


def backend() -> str:
    """Name of the active kernel backend, ``"numba"`` or ``"numpy"``."""
    return _BACKEND


def set_backend(name: str) -> None:
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not _HAVE_NUMBA:
        raise ValueError("numba is not importable in this environment")
    _BACKEND = name


# ---------------------------------------------------------------------------
# LASSO cyclic coordinate descent on the Gram matrix.
#
# Solves   min_theta  (1/2) theta' G theta - c' theta + lam * ||theta||_1
# which is the standardized-feature LASSO objective
#   (1/2N) ||y - X theta||^2 + lam ||theta||_1
# up to a constant, with G = X'X/N and c = X'y/N. Features are expected
# to be centered and unit-variance so diag(G) == 1 for retained columns;
# zero-variance columns are encoded as G[j, j] == 0 and are left at 0.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _lasso_cd_numba(G, c, lam, theta, max_iter, tol):
    p = G.shape[0]
    n_iter = 0
    for it in range(max_iter):
        n_iter = it + 1
        max_delta = 0.0
        for j in range(p):
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            rho = c[j] - np.dot(G[j], theta) + gjj * theta[j]
            if rho > lam:
                new = (rho - lam) / gjj
            elif rho < -lam:
                new = (rho + lam) / gjj
            else:
                new = 0.0
            delta = abs(new - theta[j])
            if delta > max_delta:
                max_delta = delta
            theta[j] = new
        if max_delta < tol:
            return n_iter, True
    return n_iter, False


def _lasso_cd_numpy(G, c, lam, theta, max_iter, tol):
    p = G.shape[0]
    for it in range(max_iter):
        max_delta = 0.0
        for j in range(p):
            gjj = G[j, j]
            if gjj <= 0.0:
                continue
            rho = c[j] - G[j] @ theta + gjj * theta[j]
            if rho > lam:
                new = (rho - lam) / gjj
            elif rho < -lam:
                new = (rho + lam) / gjj
            else:
                new = 0.0
            max_delta = max(max_delta, abs(new - theta[j]))
            theta[j] = new
        if max_delta < tol:
            return it + 1, True
    return max_iter, False


def lasso_cd(G, c, lam, theta0=None, max_iter=100_000, tol=1e-8):
    """Cyclic coordinate descent for the Gram-form LASSO.

    Parameters
    ----------
    G : (p, p) ndarray
        X'X/N for centered, unit-variance features. Dropped columns carry
        a zero diagonal and keep a zero coefficient.
    c : (p,) ndarray
        X'y/N with y centered.
    lam : float
        Nonnegative l1 penalty.
    theta0 : (p,) ndarray, optional
        Warm start; zeros by default.

    Returns
    -------
    theta : (p,) ndarray
    n_iter : int
        Full sweeps performed.
    converged : bool
        Whether the max coefficient change fell below ``tol``.
    """
    G = np.ascontiguousarray(G, dtype=np.float64)
    c = np.ascontiguousarray(c, dtype=np.float64)
    theta = (
        np.zeros(G.shape[0]) if theta0 is None else np.array(theta0, dtype=np.float64)
    )
    if _BACKEND == "numba":
        n_iter, ok = _lasso_cd_numba(G, c, float(lam), theta, int(max_iter), float(tol))
    else:
        n_iter, ok = _lasso_cd_numpy(G, c, float(lam), theta, int(max_iter), float(tol))
    return theta, int(n_iter), bool(ok)


# ---------------------------------------------------------------------------
# Extremal-depth dominance counts.
#
# Input rows are the per-curve pointwise depths on the integer scale
# e(x) = M - |2 R(x) - M - 1|  (so d(x) = e(x)/M), each row SORTED
# ascending. Comparing two depth CDFs by the left-tail stochastic order
# is equivalent to comparing the sorted depth vectors lexicographically:
# the lex-greater row is the deeper curve. The kernel returns, per row,
# the number of rows that are lex <= it (itself included), i.e.
# M * EXD for the reflexive ordering.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _exd_counts_numba(E):
    M, L = E.shape
    counts = np.zeros(M, dtype=np.int64)
    for i in range(M):
        n_le = 0
        for m in range(M):
            le = True
            for x in range(L):
                if E[m, x] < E[i, x]:
                    break
                if E[m, x] > E[i, x]:
                    le = False
                    break
            if le:
                n_le += 1
        counts[i] = n_le
    return counts


def _exd_counts_numpy(E):
    M = E.shape[0]
    order = np.lexsort(E.T[::-1])
    Es = E[order]
    new_group = np.ones(M, dtype=bool)
    new_group[1:] = np.any(Es[1:] != Es[:-1], axis=1)
    group_id = np.cumsum(new_group) - 1
    group_last = np.zeros(group_id[-1] + 1, dtype=np.int64)
    group_last[group_id] = np.arange(M)
    counts = np.empty(M, dtype=np.int64)
    counts[order] = group_last[group_id] + 1
    return counts


def exd_dominance_counts(E):
    """Per-row count of rows lexicographically <= that row (ties included).

    ``E`` must be an integer matrix whose rows are ascending-sorted
    pointwise depths; ``counts / M`` is the extremal depth of each curve.
    """
    E = np.ascontiguousarray(E, dtype=np.int64)
    if _BACKEND == "numba":
        return _exd_counts_numba(E)
    return _exd_counts_numpy(E)
