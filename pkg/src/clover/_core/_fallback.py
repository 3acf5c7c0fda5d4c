"""Pure-numpy look-ahead entropy kernels (reference implementation)."""

from __future__ import annotations

import numpy as np

_CHUNK = 256
_TINY = 1e-24


def _band_terms(mu, eps, shat, xr):
    """``sum_{i,j} exp(-0.5 * ((mu + (-1)^i eps) / shat + (-1)^j xr)^2)``."""
    a = (mu + eps) / shat
    b = (mu - eps) / shat
    return (np.exp(-0.5 * (a + xr) ** 2) + np.exp(-0.5 * (a - xr) ** 2)
            + np.exp(-0.5 * (b + xr) ** 2) + np.exp(-0.5 * (b - xr) ** 2))


def approx_entropy(mu, var, c_eps, xbar, c):
    """Closed-form (Gaussian-bump) entropy of ``W_x`` for ``N(mu, var)``."""
    mu = np.asarray(mu, dtype=float)
    var = np.asarray(var, dtype=float)
    ok = var > _TINY
    s = np.sqrt(np.where(ok, var, 1.0))
    h = -c * _band_terms(mu, c_eps * s, s, xbar)
    return np.where(ok, h, 0.0)


def lookahead_entropy_sums(cross, var_grid, mu_grid, denom, weights, c_eps, fantasy_eps, xbar, c):
    """Weighted node sums of the expected look-ahead entropy, one per candidate.

    Parameters
    ----------
    cross : (n_i, n_a) posterior covariance between grid nodes and candidates
    var_grid, mu_grid, weights : (n_i,) current posterior moments at the nodes
    denom : (n_a,) noise + posterior variance (+ jitter) at the candidates
    """
    cross = np.asarray(cross, dtype=float)
    n_i, n_a = cross.shape
    out = np.zeros(n_a)
    var = np.asarray(var_grid, dtype=float)
    live = var > _TINY
    if not live.any():
        return out
    cross = cross[live]
    vg = var[live][:, None]
    # sigma_hat^2 = Sigma^{n+1} + sigma_bar^2 is the current variance
    m = (np.asarray(mu_grid, dtype=float)[live] / np.sqrt(var[live]))[:, None]
    w = np.asarray(weights, dtype=float)[live]
    inv_dn = 1.0 / np.asarray(denom, dtype=float)
    p, q = c_eps + xbar, c_eps - xbar
    for start in range(0, n_a, _CHUNK):
        sl = slice(start, min(start + _CHUNK, n_a))
        vnext = vg - cross[:, sl] * cross[:, sl] * inv_dn[sl]
        ok = vnext > 0
        r = np.sqrt(np.where(ok, vnext, 0.0) / vg)
        if fantasy_eps:
            terms = (np.exp(-0.5 * (m + r * p) ** 2) + np.exp(-0.5 * (m - r * p) ** 2)
                     + np.exp(-0.5 * (m + r * q) ** 2) + np.exp(-0.5 * (m - r * q) ** 2))
        else:
            terms = (np.exp(-0.5 * (m + c_eps + r * xbar) ** 2) + np.exp(-0.5 * (m - c_eps - r * xbar) ** 2)
                     + np.exp(-0.5 * (m + c_eps - r * xbar) ** 2) + np.exp(-0.5 * (m - c_eps + r * xbar) ** 2))
        h = -c * r * terms
        out[sl] = w @ np.where(ok, h, 0.0)
    return out
