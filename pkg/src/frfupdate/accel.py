"""Hot numeric kernels with a numba backend and a pure-numpy fallback.

The backend is chosen once at import time: numba when importable (the
default), or numpy when ``FRFUPDATE_BACKEND=numpy`` is set or numba is
missing.  Both backends expose the same five functions and produce the
same values up to floating-point rounding; each is individually
deterministic.  ``benchmarks/bench_backends.py`` compares them.

Kernels:

- ``pairwise_sq_dists(x)``: squared Euclidean distances between rows.
- ``cross_sq_dists(a, b)``: squared distances between rows of two sets.
- ``kernel_from_sq_dists(d2, sf2, ell)``: squared-exponential covariance
  ``sf2 * exp(-d2 / (2 ell))`` (note the ``2 ell`` denominator).
- ``profiled_nll(d2, h, y, sf2, ell, diag_add)``: negative profiled
  log-likelihood of the multi-output GP with the regression matrix and
  the inter-response correlation matrix profiled out analytically.
  When the profiled response correlation is rank deficient (fewer
  samples than response channels) the density is evaluated on its
  support: eigenvalues below the relative floor are dropped and the
  effective channel count replaces the nominal one.  Returns
  ``(ok, value)``; ``ok`` is False when the covariance cannot be
  factorized at the given diagonal augmentation or the value is not
  finite.
- ``frf_batch(khat, mhat, chat, force, omegas)``: complex harmonic
  response solves at a batch of circular frequencies.
"""

import logging
import os
from types import SimpleNamespace

import numpy as np
from scipy.linalg import cholesky as _sp_cholesky
from scipy.linalg import solve_triangular as _sp_solve_triangular

log = logging.getLogger(__name__)

_LOG_2PI = float(np.log(2.0 * np.pi))

# Relative eigenvalue floor for the log-determinant of a rank-deficient
# inter-response correlation matrix.
Q_EIG_FLOOR_REL = 1e-12


# ---------------------------------------------------------------------------
# numpy backend


def _np_pairwise_sq_dists(x):
    sq = np.einsum("ij,ij->i", x, x)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def _np_cross_sq_dists(a, b):
    sa = np.einsum("ij,ij->i", a, a)
    sb = np.einsum("ij,ij->i", b, b)
    d2 = sa[:, None] + sb[None, :] - 2.0 * (a @ b.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def _np_kernel_from_sq_dists(d2, sf2, ell):
    return sf2 * np.exp(d2 / (-2.0 * ell))


def _np_profiled_nll(d2, h, y, sf2, ell, diag_add):
    r, q = y.shape
    sigma = sf2 * np.exp(d2 / (-2.0 * ell))
    sigma[np.diag_indices_from(sigma)] += diag_add
    try:
        lo = _sp_cholesky(sigma, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return False, np.nan
    a = _sp_solve_triangular(lo, h, lower=True, check_finite=False)
    b = _sp_solve_triangular(lo, y, lower=True, check_finite=False)
    g = a.T @ a
    try:
        beta = np.linalg.solve(g, a.T @ b)
    except np.linalg.LinAlgError:
        return False, np.nan
    resid = b - a @ beta
    qhat = resid.T @ resid / r
    qhat = 0.5 * (qhat + qhat.T)
    logdet_sigma = 2.0 * np.log(np.diag(lo)).sum()
    w = np.linalg.eigvalsh(qhat)
    floor = Q_EIG_FLOOR_REL * np.trace(qhat) / q
    keep = w > floor
    k_eff = int(keep.sum())
    if k_eff == 0:
        return False, np.nan
    logdet_q = np.log(w[keep]).sum()
    nll = 0.5 * (r * k_eff * _LOG_2PI + r * logdet_q + k_eff * logdet_sigma
                 + r * k_eff)
    if not np.isfinite(nll):
        return False, np.nan
    return True, float(nll)


def _np_frf_batch(khat, mhat, chat, force, omegas):
    dyn = (
        khat[None, :, :]
        - omegas[:, None, None] ** 2 * mhat[None, :, :]
        + 1j * omegas[:, None, None] * chat[None, :, :]
    )
    return np.linalg.solve(dyn, force.astype(np.complex128))


_numpy_impl = SimpleNamespace(
    name="numpy",
    pairwise_sq_dists=_np_pairwise_sq_dists,
    cross_sq_dists=_np_cross_sq_dists,
    kernel_from_sq_dists=_np_kernel_from_sq_dists,
    profiled_nll=_np_profiled_nll,
    frf_batch=_np_frf_batch,
)


# ---------------------------------------------------------------------------
# numba backend

def _build_numba_impl():
    from numba import njit

    @njit(cache=True)
    def pairwise_sq_dists(x):
        r, d = x.shape
        out = np.zeros((r, r))
        for i in range(r):
            for j in range(i + 1, r):
                acc = 0.0
                for k in range(d):
                    diff = x[i, k] - x[j, k]
                    acc += diff * diff
                out[i, j] = acc
                out[j, i] = acc
        return out

    @njit(cache=True)
    def cross_sq_dists(a, b):
        na, d = a.shape
        nb = b.shape[0]
        out = np.empty((na, nb))
        for i in range(na):
            for j in range(nb):
                acc = 0.0
                for k in range(d):
                    diff = a[i, k] - b[j, k]
                    acc += diff * diff
                out[i, j] = acc
        return out

    @njit(cache=True)
    def kernel_from_sq_dists(d2, sf2, ell):
        return sf2 * np.exp(d2 / (-2.0 * ell))

    @njit(cache=True)
    def _fwd_substitute(lo, z):
        # In-place solve of lo @ z = rhs for lower-triangular lo.
        r, m = z.shape
        for i in range(r):
            for k in range(i):
                lik = lo[i, k]
                for j in range(m):
                    z[i, j] -= lik * z[k, j]
            inv = 1.0 / lo[i, i]
            for j in range(m):
                z[i, j] *= inv

    @njit(cache=True)
    def profiled_nll(d2, h, y, sf2, ell, diag_add):
        r, q = y.shape
        sigma = sf2 * np.exp(d2 / (-2.0 * ell))
        for i in range(r):
            sigma[i, i] += diag_add
        try:
            lo = np.linalg.cholesky(sigma)
        except Exception:
            return False, np.nan
        a = h.copy()
        b = y.copy()
        _fwd_substitute(lo, a)
        _fwd_substitute(lo, b)
        g = a.T @ a
        try:
            beta = np.linalg.solve(g, a.T @ b)
        except Exception:
            return False, np.nan
        resid = b - a @ beta
        qhat = resid.T @ resid / r
        qhat = 0.5 * (qhat + qhat.T)
        logdet_sigma = 0.0
        for i in range(r):
            logdet_sigma += 2.0 * np.log(lo[i, i])
        w = np.linalg.eigvalsh(qhat)
        trace = 0.0
        for i in range(q):
            trace += qhat[i, i]
        floor = Q_EIG_FLOOR_REL * trace / q
        k_eff = 0
        logdet_q = 0.0
        for i in range(q):
            if w[i] > floor:
                k_eff += 1
                logdet_q += np.log(w[i])
        if k_eff == 0:
            return False, np.nan
        nll = 0.5 * (r * k_eff * _LOG_2PI + r * logdet_q + k_eff * logdet_sigma
                     + r * k_eff)
        if not np.isfinite(nll):
            return False, np.nan
        return True, nll

    @njit(cache=True)
    def frf_batch(khat, mhat, chat, force, omegas):
        n = khat.shape[0]
        p = omegas.shape[0]
        out = np.empty((p, n), dtype=np.complex128)
        dyn = np.empty((n, n), dtype=np.complex128)
        fc = force.astype(np.complex128)
        for t in range(p):
            w = omegas[t]
            for i in range(n):
                for j in range(n):
                    dyn[i, j] = complex(
                        khat[i, j] - w * w * mhat[i, j], w * chat[i, j]
                    )
            out[t] = np.linalg.solve(dyn, fc)
        return out

    return SimpleNamespace(
        name="numba",
        pairwise_sq_dists=pairwise_sq_dists,
        cross_sq_dists=cross_sq_dists,
        kernel_from_sq_dists=kernel_from_sq_dists,
        profiled_nll=profiled_nll,
        frf_batch=frf_batch,
    )


def _select_backend():
    choice = os.environ.get("FRFUPDATE_BACKEND", "").strip().lower()
    if choice not in ("", "numba", "numpy"):
        log.warning("unknown FRFUPDATE_BACKEND=%r, falling back to numpy", choice)
        choice = "numpy"
    if choice == "numpy":
        return _numpy_impl
    try:
        return _build_numba_impl()
    except ImportError:
        if choice == "numba":
            log.warning("numba requested but not importable; using numpy backend")
        return _numpy_impl


active = _select_backend()

pairwise_sq_dists = active.pairwise_sq_dists
cross_sq_dists = active.cross_sq_dists
kernel_from_sq_dists = active.kernel_from_sq_dists
profiled_nll = active.profiled_nll
frf_batch = active.frf_batch


def backend_name():
    """Name of the active kernel backend ('numba' or 'numpy')."""
    return active.name


def numpy_backend():
    """The pure-numpy kernel set (always available)."""
    return _numpy_impl


def numba_backend():
    """The numba kernel set, or None when numba is not importable."""
    try:
        return _build_numba_impl()
    except ImportError:
        return None
