# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled look-ahead entropy kernels; same contract as ``_fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()

cdef double _TINY = 1e-24


cdef inline double _band(double mu, double eps, double shat, double xr) noexcept nogil:
    cdef double a = (mu + eps) / shat
    cdef double b = (mu - eps) / shat
    return (exp(-0.5 * (a + xr) * (a + xr)) + exp(-0.5 * (a - xr) * (a - xr))
            + exp(-0.5 * (b + xr) * (b + xr)) + exp(-0.5 * (b - xr) * (b - xr)))


def approx_entropy(mu, var, double c_eps, double xbar, double c):
    cdef const double[::1] m = np.ascontiguousarray(mu, dtype=np.float64).ravel()
    cdef const double[::1] v = np.ascontiguousarray(var, dtype=np.float64).ravel()
    cdef Py_ssize_t n = m.shape[0], k
    out = np.zeros(n)
    cdef double[::1] o = out
    cdef double s
    with nogil:
        for k in range(n):
            if v[k] > _TINY:
                s = sqrt(v[k])
                o[k] = -c * _band(m[k], c_eps * s, s, xbar)
    return out.reshape(np.shape(mu))


def lookahead_entropy_sums(cross, var_grid, mu_grid, denom, weights,
                           double c_eps, bint fantasy_eps, double xbar, double c):
    cdef const double[:, ::1] C = np.ascontiguousarray(cross, dtype=np.float64)
    cdef const double[::1] vg = np.ascontiguousarray(var_grid, dtype=np.float64)
    cdef const double[::1] mg = np.ascontiguousarray(mu_grid, dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef double[::1] inv_dn = 1.0 / np.ascontiguousarray(denom, dtype=np.float64)
    cdef Py_ssize_t n_i = C.shape[0], n_a = C.shape[1], i
    out = np.zeros(n_a)
    cdef double[::1] o = out
    cdef double vi, m, wi, inv_v
    # exponent arguments are m + al[k] + r * be[k], k = 0..3
    cdef double al[4]
    cdef double be[4]
    if fantasy_eps:
        al[:] = [0.0, 0.0, 0.0, 0.0]
        be[:] = [c_eps + xbar, -(c_eps + xbar), c_eps - xbar, -(c_eps - xbar)]
    else:
        al[:] = [c_eps, -c_eps, c_eps, -c_eps]
        be[:] = [xbar, -xbar, -xbar, xbar]
    if n_a == 0:
        return out
    with nogil:
        for i in range(n_i):
            vi = vg[i]
            if vi <= _TINY:
                continue
            # sigma_hat^2 = Sigma^{n+1} + sigma_bar^2 is the current variance
            inv_v = 1.0 / vi
            m = mg[i] / sqrt(vi)
            wi = -c * w[i]
            _accumulate(&C[i, 0], &inv_dn[0], &o[0], n_a, vi, inv_v, m, wi, al, be)
    return out


cdef void _accumulate(const double* crow, const double* inv_dn, double* o, Py_ssize_t n_a,
                      double vi, double inv_v, double m, double wi,
                      const double* al, const double* be) noexcept nogil:
    cdef Py_ssize_t a
    cdef double vnext, r, e1, e2, e3, e4
    cdef double a0 = m + al[0], a1 = m + al[1], a2 = m + al[2], a3 = m + al[3]
    cdef double b0 = be[0], b1 = be[1], b2 = be[2], b3 = be[3]
    for a in range(n_a):
        vnext = vi - crow[a] * crow[a] * inv_dn[a]
        # a non-positive fantasy variance contributes nothing (r = 0)
        vnext = vnext if vnext > 0.0 else 0.0
        r = sqrt(vnext * inv_v)
        e1 = a0 + r * b0
        e2 = a1 + r * b1
        e3 = a2 + r * b2
        e4 = a3 + r * b3
        o[a] += wi * r * (exp(-0.5 * e1 * e1) + exp(-0.5 * e2 * e2) + exp(-0.5 * e3 * e3) + exp(-0.5 * e4 * e4))
