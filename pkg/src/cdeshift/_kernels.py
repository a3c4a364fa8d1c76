"""Hot numeric kernels: neighbor search, radius counts, kernel sums.

Every kernel has a pure-numpy implementation and a numba ``@njit``
implementation with identical semantics.  The numba path is used when numba
imports cleanly and the environment variable ``CDESHIFT_DISABLE_NUMBA`` is
unset (or ``0``).  Set it to ``1`` to force the numpy path.

Distances are always computed as sums of squared coordinate differences (no
``|a|^2 + |b|^2 - 2ab`` expansion) so that coincident points are at distance
exactly zero and radius tests at the boundary are reproducible.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLE = os.environ.get("CDESHIFT_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    if _DISABLE:
        raise ImportError("numba disabled by CDESHIFT_DISABLE_NUMBA")
    from numba import njit

    NUMBA_OK = True
except ImportError:
    NUMBA_OK = False

BACKEND = "numba" if NUMBA_OK else "numpy"

# rows of queries processed per block in the numpy path (bounds memory)
_CHUNK = 256


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _np_sqdist(Q, X):
    out = np.empty((Q.shape[0], X.shape[0]))
    for s in range(0, Q.shape[0], _CHUNK):
        diff = Q[s:s + _CHUNK, None, :] - X[None, :, :]
        out[s:s + _CHUNK] = np.sum(diff * diff, axis=2)
    return out


def _np_knn(X, Q, k):
    idx = np.empty((Q.shape[0], k), dtype=np.int64)
    kth = np.empty(Q.shape[0])
    for s in range(0, Q.shape[0], _CHUNK):
        d2 = _np_sqdist(Q[s:s + _CHUNK], X)
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        idx[s:s + _CHUNK] = order
        kth[s:s + _CHUNK] = np.take_along_axis(d2, order[:, -1:], axis=1)[:, 0]
    return idx, kth


def _np_radius_count(Y, Q, r2):
    counts = np.empty(Q.shape[0], dtype=np.int64)
    for s in range(0, Q.shape[0], _CHUNK):
        d2 = _np_sqdist(Q[s:s + _CHUNK], Y)
        counts[s:s + _CHUNK] = np.sum(d2 <= r2[s:s + _CHUNK, None], axis=1)
    return counts


def _np_gaussian_gram(A, B, eps):
    return np.exp(-_np_sqdist(A, B) / (4.0 * eps))


def _np_kernel_grid(zn, wn, grid, eps):
    out = np.empty((zn.shape[0], grid.shape[0]))
    for s in range(0, zn.shape[0], _CHUNK):
        diff = grid[None, None, :] - zn[s:s + _CHUNK, :, None]
        k = np.exp(-(diff * diff) / (4.0 * eps))
        out[s:s + _CHUNK] = np.sum(wn[s:s + _CHUNK, :, None] * k, axis=1)
    return out


def _np_hist_grid(zn, wn, grid, nbins):
    nq = zn.shape[0]
    zbin = np.minimum((zn * nbins).astype(np.int64), nbins - 1)
    zbin = np.clip(zbin, 0, nbins - 1)
    mass = np.zeros((nq, nbins))
    rows = np.repeat(np.arange(nq), zn.shape[1])
    np.add.at(mass, (rows, zbin.ravel()), wn.ravel())
    total = mass.sum(axis=1)
    gbin = np.clip(np.minimum((grid * nbins).astype(np.int64), nbins - 1), 0, nbins - 1)
    out = np.zeros((nq, grid.shape[0]))
    ok = total > 0
    out[ok] = mass[ok][:, gbin] * nbins / total[ok, None]
    return out


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if NUMBA_OK:

    @njit(cache=True)
    def _nb_sqdist(Q, X):
        nq, n, d = Q.shape[0], X.shape[0], X.shape[1]
        out = np.empty((nq, n))
        for i in range(nq):
            for j in range(n):
                acc = 0.0
                for c in range(d):
                    t = Q[i, c] - X[j, c]
                    acc += t * t
                out[i, j] = acc
        return out

    @njit(cache=True)
    def _nb_knn(X, Q, k):
        nq, n, d = Q.shape[0], X.shape[0], X.shape[1]
        idx = np.empty((nq, k), dtype=np.int64)
        kth = np.empty(nq)
        d2 = np.empty(n)
        for i in range(nq):
            for j in range(n):
                acc = 0.0
                for c in range(d):
                    t = Q[i, c] - X[j, c]
                    acc += t * t
                d2[j] = acc
            order = np.argsort(d2, kind="mergesort")
            for m in range(k):
                idx[i, m] = order[m]
            kth[i] = d2[order[k - 1]]
        return idx, kth

    @njit(cache=True)
    def _nb_radius_count(Y, Q, r2):
        nq, n, d = Q.shape[0], Y.shape[0], Y.shape[1]
        counts = np.zeros(nq, dtype=np.int64)
        for i in range(nq):
            cnt = 0
            for j in range(n):
                acc = 0.0
                for c in range(d):
                    t = Q[i, c] - Y[j, c]
                    acc += t * t
                if acc <= r2[i]:
                    cnt += 1
            counts[i] = cnt
        return counts

    @njit(cache=True)
    def _nb_gaussian_gram(A, B, eps):
        out = _nb_sqdist(A, B)
        scale = 1.0 / (4.0 * eps)
        for i in range(out.shape[0]):
            for j in range(out.shape[1]):
                out[i, j] = np.exp(-out[i, j] * scale)
        return out

    @njit(cache=True)
    def _nb_kernel_grid(zn, wn, grid, eps):
        nq, nn, g = zn.shape[0], zn.shape[1], grid.shape[0]
        out = np.zeros((nq, g))
        scale = 1.0 / (4.0 * eps)
        for i in range(nq):
            for m in range(nn):
                w = wn[i, m]
                if w == 0.0:
                    continue
                zk = zn[i, m]
                for t in range(g):
                    u = grid[t] - zk
                    out[i, t] += w * np.exp(-u * u * scale)
        return out

    @njit(cache=True)
    def _nb_hist_grid(zn, wn, grid, nbins):
        nq, nn, g = zn.shape[0], zn.shape[1], grid.shape[0]
        out = np.zeros((nq, g))
        mass = np.empty(nbins)
        for i in range(nq):
            mass[:] = 0.0
            total = 0.0
            for m in range(nn):
                b = int(zn[i, m] * nbins)
                if b > nbins - 1:
                    b = nbins - 1
                if b < 0:
                    b = 0
                mass[b] += wn[i, m]
                total += wn[i, m]
            if total <= 0.0:
                continue
            for t in range(g):
                b = int(grid[t] * nbins)
                if b > nbins - 1:
                    b = nbins - 1
                if b < 0:
                    b = 0
                out[i, t] = mass[b] * nbins / total
        return out


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _pick(nb_name, np_fn):
    if NUMBA_OK:
        return globals()[nb_name]
    return np_fn


def sqdist(Q, X):
    """Squared Euclidean distances, shape ``(len(Q), len(X))``."""
    return _pick("_nb_sqdist", _np_sqdist)(_f64(Q), _f64(X))


def knn(X, Q, k):
    """Indices of the ``k`` nearest rows of ``X`` for every query row.

    Neighbors are ordered by distance, ties broken by lower row index.
    Returns ``(idx, kth_sqdist)``; ``kth_sqdist`` is the squared distance to
    the ``k``-th neighbor.
    """
    X, Q = _f64(X), _f64(Q)
    if not 1 <= k <= X.shape[0]:
        raise ValueError(f"k={k} outside [1, {X.shape[0]}]")
    return _pick("_nb_knn", _np_knn)(X, Q, int(k))


def radius_count(Y, Q, r2):
    """Count rows of ``Y`` within squared radius ``r2[i]`` of ``Q[i]`` (inclusive)."""
    return _pick("_nb_radius_count", _np_radius_count)(_f64(Y), _f64(Q), _f64(r2))


def gaussian_gram(A, B, eps):
    """``exp(-|a - b|^2 / (4 eps))`` for all pairs."""
    return _pick("_nb_gaussian_gram", _np_gaussian_gram)(_f64(A), _f64(B), float(eps))


def kernel_grid(zn, wn, grid, eps):
    """Weighted Gaussian kernel sums of neighbor responses evaluated on ``grid``."""
    return _pick("_nb_kernel_grid", _np_kernel_grid)(_f64(zn), _f64(wn), _f64(grid), float(eps))


def hist_grid(zn, wn, grid, nbins):
    """Weighted histogram density (mass * nbins / total) sampled on ``grid``.

    Rows whose neighbor weights sum to zero come back as all zeros.
    """
    return _pick("_nb_hist_grid", _np_hist_grid)(_f64(zn), _f64(wn), _f64(grid), int(nbins))


NUMPY_KERNELS = {
    "sqdist": _np_sqdist,
    "knn": _np_knn,
    "radius_count": _np_radius_count,
    "gaussian_gram": _np_gaussian_gram,
    "kernel_grid": _np_kernel_grid,
    "hist_grid": _np_hist_grid,
}

NUMBA_KERNELS = (
    {
        "sqdist": _nb_sqdist,
        "knn": _nb_knn,
        "radius_count": _nb_radius_count,
        "gaussian_gram": _nb_gaussian_gram,
        "kernel_grid": _nb_kernel_grid,
        "hist_grid": _nb_hist_grid,
    }
    if NUMBA_OK
    else {}
)
