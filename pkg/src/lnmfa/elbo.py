"""Variational lower bounds for the logistic normal multinomial model.

Two bounds are used by the fitting engine:

* the cycle-1 bound, where q(y) = N(m, diag(v**2)) and y ~ N(mu, Sigma);
* the cycle-2 bound, where additionally y | u ~ N(mu + Lambda u, D) and
  q(u) = N(m_tilde, V_tilde).

The expectation of the log-normaliser is replaced by the Jensen bound
``log(sum_k exp(m_k + v_k**2 / 2) + 1)``. The multinomial coefficient is kept
in every value so bounds from different models share a scale.

The ``*_batch`` functions broadcast over leading axes and are what the engine
calls; the per-site functions are thin wrappers for a single observation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import gammaln

from .errors import NumericError


@dataclass(frozen=True)
class VariationalSite:
    """Mean ``m`` and standard deviations ``v`` of the diagonal Gaussian q(y)."""

    m: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.m, dtype=float))
        v = np.atleast_1d(np.asarray(self.v, dtype=float))
        if m.shape != v.shape or m.ndim != 1:
            raise ValueError(f"m and v must be matching vectors, got {m.shape} and {v.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("m must be finite")
        if not np.all(v > 0):
            raise ValueError("v must be strictly positive")
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "v", v)

    @property
    def V(self) -> np.ndarray:
        return np.diag(self.v**2)


@dataclass(frozen=True)
class FactorSite:
    """Mean and covariance of the Gaussian q(u) over latent factors."""

    m_tilde: np.ndarray
    V_tilde: np.ndarray

    def __post_init__(self):
        mt = np.atleast_1d(np.asarray(self.m_tilde, dtype=float))
        Vt = np.atleast_2d(np.asarray(self.V_tilde, dtype=float))
        if Vt.shape != (mt.size, mt.size):
            raise ValueError(f"V_tilde shape {Vt.shape} does not match m_tilde length {mt.size}")
        if not np.allclose(Vt, Vt.T, rtol=0, atol=1e-12):
            raise ValueError("V_tilde must be symmetric")
        object.__setattr__(self, "m_tilde", mt)
        object.__setattr__(self, "V_tilde", Vt)


def multinomial_log_coeff(w):
    """log((sum w)! / prod w_k!) via log-gamma; rows of ``w`` are count vectors."""
    w = np.asarray(w, dtype=float)
    return gammaln(w.sum(axis=-1) + 1.0) - gammaln(w + 1.0).sum(axis=-1)


def log1p_sum_exp(a):
    """Return ``log(sum_k exp(a_k) + 1)`` and the softmax weights ``exp(a_k) / (...)``.

    The implicit ``+ 1`` is the reference category, so it takes part in the
    max-shift.
    """
    a = np.asarray(a, dtype=float)
    shift = np.maximum(a.max(axis=-1, keepdims=True), 0.0)
    e = np.exp(a - shift)
    denom = e.sum(axis=-1, keepdims=True) + np.exp(-shift)
    lse = np.log(denom[..., 0]) + shift[..., 0]
    return lse, e / denom


def _split_counts(w):
    w = np.asarray(w, dtype=float)
    return w[..., :-1], w.sum(axis=-1), multinomial_log_coeff(w)


def _quad(diff, A):
    """diff^T A diff with broadcasting over leading axes."""
    return np.sum((diff[..., None, :] @ A)[..., 0, :] * diff, axis=-1)


def cycle1_batch(w_star, total, C, m, v, mu, Sinv, logdet):
    """Cycle-1 bound with a precomputed inverse and log-determinant of Sigma."""
    lse, _ = log1p_sum_exp(m + 0.5 * v**2)
    diff = m - mu
    K = m.shape[-1]
    trace = np.sum(np.diagonal(Sinv, axis1=-2, axis2=-1) * v**2, axis=-1)
    return (
        C
        + np.sum(w_star * m, axis=-1)
        - total * lse
        + np.sum(np.log(v), axis=-1)
        + 0.5 * K
        - 0.5 * logdet
        - 0.5 * _quad(diff, Sinv)
        - 0.5 * trace
    )


def cycle1_grad_batch(w_star, total, m, v, mu, Sinv):
    """Scores of the cycle-1 bound with respect to m and v."""
    _, p = log1p_sum_exp(m + 0.5 * v**2)
    diff = m - mu
    dm = w_star - (Sinv @ diff[..., None])[..., 0] - total[..., None] * p
    dv = 1.0 / v - v * np.diagonal(Sinv, axis1=-2, axis2=-1) - total[..., None] * v * p
    return dm, dv


def cycle2_batch(w_star, total, C, m, v, mu, Lam, D, m_tilde, V_tilde):
    """Cycle-2 bound. ``D`` holds the diagonal of the noise covariance."""
    if np.any(D <= 0):
        raise NumericError("noise variances D must be strictly positive")
    lse, _ = log1p_sum_exp(m + 0.5 * v**2)
    K = m.shape[-1]
    q = m_tilde.shape[-1]
    diff = m - mu
    Dinv = 1.0 / D
    LtDL = np.swapaxes(Lam, -1, -2) @ (Dinv[..., :, None] * Lam)
    sign, logdet_Vt = np.linalg.slogdet(V_tilde)
    if np.any(sign <= 0):
        raise NumericError("V_tilde is not positive definite")
    Lm = (Lam @ m_tilde[..., None])[..., 0]
    inner = (
        2.0 * np.sum(np.log(v), axis=-1)
        + logdet_Vt
        + q
        + K
        - np.sum(np.log(D), axis=-1)
        - np.sum(m_tilde**2, axis=-1)
        - np.trace(V_tilde, axis1=-2, axis2=-1)
        - np.sum(Dinv * (v**2 + diff**2), axis=-1)
        + 2.0 * np.sum(diff * Dinv * Lm, axis=-1)
        - _quad(m_tilde, LtDL)
        - np.sum(LtDL * V_tilde, axis=(-2, -1))
    )
    return C + np.sum(w_star * m, axis=-1) - total * lse + 0.5 * inner


def _chol(Sigma):
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    try:
        return linalg.cho_factor(Sigma, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericError(f"Sigma is not positive definite: {exc}") from exc


def _inverse_and_logdet(Sigma):
    cf = _chol(Sigma)
    Sinv = linalg.cho_solve(cf, np.eye(cf[0].shape[0]))
    return 0.5 * (Sinv + Sinv.T), 2.0 * np.sum(np.log(np.diag(cf[0])))


def elbo_cycle1(w, site: VariationalSite, mu, Sigma) -> float:
    """Cycle-1 lower bound on log f(w) for one observation."""
    w_star, total, C = _split_counts(w)
    Sinv, logdet = _inverse_and_logdet(Sigma)
    return float(cycle1_batch(w_star, total, C, site.m, site.v, np.asarray(mu, float), Sinv, logdet))


def elbo_cycle1_grad(w, site: VariationalSite, mu, Sigma):
    """Return ``(dF/dm, dF/dv)`` for the cycle-1 bound."""
    w_star, total, _ = _split_counts(w)
    Sinv, _ = _inverse_and_logdet(Sigma)
    return cycle1_grad_batch(w_star, np.asarray(total), site.m, site.v, np.asarray(mu, float), Sinv)


def elbo_cycle2(w, site: VariationalSite, fsite: FactorSite, mu, Lambda, D) -> float:
    """Cycle-2 lower bound for one observation; ``D`` may be a vector or diagonal matrix."""
    w_star, total, C = _split_counts(w)
    D = np.asarray(D, dtype=float)
    if D.ndim == 2:
        if np.any(D - np.diag(np.diag(D))):
            raise ValueError("D must be diagonal")
        D = np.diag(D)
    Lam = np.asarray(Lambda, dtype=float).reshape(site.m.size, -1)
    return float(
        cycle2_batch(w_star, total, C, site.m, site.v, np.asarray(mu, float), Lam, D, fsite.m_tilde, fsite.V_tilde)
    )
