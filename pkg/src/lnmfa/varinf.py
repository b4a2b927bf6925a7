"""Per-observation variational updates.

(m, v) are moved by safeguarded Newton steps on the cycle-1 bound, which is
jointly concave in (m, v) for v > 0. Each step is backtracked by halving until
the bound does not decrease. The factor posterior q(u) has a closed form.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numba import njit

from .elbo import FactorSite, VariationalSite, _inverse_and_logdet, _split_counts
from .errors import NumericError

logger = logging.getLogger(__name__)

# fast-math without the no-NaN/no-Inf assumptions; the line search relies on isfinite
_FAST = {"nsz", "arcp", "contract", "afn", "reassoc"}


@dataclass(frozen=True)
class NewtonConfig:
    max_iters: int = 20
    grad_tol: float = 1e-6
    step_halvings: int = 30
    v_floor: float = 1e-4

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if not self.v_floor > 0:
            raise ValueError("v_floor must be positive")
        if self.step_halvings < 0:
            raise ValueError("step_halvings must be >= 0")


@dataclass
class NewtonInfo:
    converged: np.ndarray
    iterations: np.ndarray
    # bound at the returned site without C + K/2 - log|Sigma|/2
    partial_bound: np.ndarray | None = None

    @property
    def all_converged(self) -> bool:
        return bool(np.all(self.converged))


@njit(cache=True, fastmath=_FAST)
def _v_terms(v, S):
    # sum_k log v_k - 1/2 sum_k Sinv_kk v_k^2
    out = 0.0
    for k in range(v.shape[0]):
        out += np.log(v[k]) - 0.5 * S[k, k] * v[k] * v[k]
    return out


@njit(cache=True, fastmath=_FAST)
def _chol_solve(A, b, x):
    # in-place Cholesky of the SPD matrix A, then solve A x = b
    K = A.shape[0]
    for j in range(K):
        d = A[j, j]
        for k in range(j):
            d -= A[j, k] * A[j, k]
        if d <= 0.0:
            return False
        d = np.sqrt(d)
        A[j, j] = d
        for i in range(j + 1, K):
            t = A[i, j]
            for k in range(j):
                t -= A[i, k] * A[j, k]
            A[i, j] = t / d
    for i in range(K):
        t = b[i]
        for k in range(i):
            t -= A[i, k] * x[k]
        x[i] = t / A[i, i]
    for i in range(K - 1, -1, -1):
        t = x[i]
        for k in range(i + 1, K):
            t -= A[k, i] * x[k]
        x[i] = t / A[i, i]
    return True


@njit(cache=True, fastmath=_FAST)
def _accept(fc, f0):
    # slack at the rounding level of f so converged sites are not stuck halving
    return np.isfinite(fc) and fc >= f0 - 8 * 2.220446049250313e-16 * (1.0 + abs(f0))


@njit(cache=True, fastmath=_FAST)
def _lse_probs(m, v, p):
    # log(sum_k exp(m_k + v_k^2/2) + 1), filling p with the matching softmax weights
    K = m.shape[0]
    amax = 0.0
    for k in range(K):
        p[k] = m[k] + 0.5 * v[k] * v[k]
        if p[k] > amax:
            amax = p[k]
    s = np.exp(-amax)
    for k in range(K):
        p[k] = np.exp(p[k] - amax)
        s += p[k]
    for k in range(K):
        p[k] /= s
    return amax + np.log(s)


@njit(cache=True, fastmath=_FAST)
def _newton_kernel(w_star, total, m, v, mu, Sinv, gidx, max_iters, grad_tol, halvings, v_floor, converged, iterations, fout):
    B, K = m.shape
    p = np.empty(K)
    pt = np.empty(K)
    Sd = np.empty(K)
    Ss = np.empty(K)
    gm = np.empty(K)
    gv = np.empty(K)
    step = np.empty(K)
    H = np.empty((K, K))
    trial = np.empty(K)
    for b in range(B):
        g = gidx[b]
        S = Sinv[g]
        mu_b = mu[g]
        w = w_star[b]
        N = total[b]
        mb = m[b]
        vb = v[b]
        for k in range(K):
            if vb[k] < v_floor:
                vb[k] = v_floor
        # p and Sd = Sinv (m - mu) are kept in step with (mb, vb) below
        fm = 0.0
        for k in range(K):
            r = 0.0
            for l in range(K):
                r += S[k, l] * (mb[l] - mu_b[l])
            Sd[k] = r
            fm += w[k] * mb[k] - 0.5 * (mb[k] - mu_b[k]) * r
        fv = _v_terms(vb, S)
        f = fm + fv - N * _lse_probs(mb, vb, p)
        it = 0
        while True:
            # scores and convergence test
            gmax = 0.0
            for k in range(K):
                gv[k] = 1.0 / vb[k] - vb[k] * S[k, k] - N * vb[k] * p[k]
                if vb[k] <= v_floor and gv[k] < 0.0:
                    gv[k] = 0.0
                gmax = max(gmax, abs(w[k] - Sd[k] - N * p[k]), abs(gv[k]))
            if gmax < grad_tol:
                converged[b] = True
                break
            if it >= max_iters:
                break
            it += 1

            # v-step: -H = A - N u u^T with A = diag(1/v^2 + Sinv_kk + N p (1 + v^2)), u = v p;
            # solved by Sherman-Morrison, positive definite iff 1 - N u'A^-1 u > 0
            uAu = 0.0
            uAg = 0.0
            for k in range(K):
                a = 1.0 / (vb[k] * vb[k]) + S[k, k] + N * p[k] * (1.0 + vb[k] * vb[k])
                u = vb[k] * p[k]
                trial[k] = u / a  # A^-1 u, overwritten by the line search
                step[k] = gv[k] / a
                uAu += u * trial[k]
                uAg += u * step[k]
            denom = 1.0 - N * uAu
            if denom > 0.0:
                c = N * uAg / denom
                for k in range(K):
                    step[k] += c * trial[k]
                t = 1.0
                for _ in range(halvings + 1):
                    for k in range(K):
                        trial[k] = max(vb[k] + t * step[k], v_floor)
                    tv = _v_terms(trial, S)
                    fc = fm + tv - N * _lse_probs(mb, trial, pt)
                    if _accept(fc, f):
                        for k in range(K):
                            vb[k] = trial[k]
                            p[k] = pt[k]
                        f = fc
                        fv = tv
                        break
                    t *= 0.5

            # m-step: -H = Sinv + N (diag(p) - p p^T)
            for k in range(K):
                for l in range(K):
                    H[k, l] = S[k, l] - N * p[k] * p[l]
                H[k, k] += N * p[k]
                gm[k] = w[k] - Sd[k] - N * p[k]
            if _chol_solve(H, gm, step):
                # along m + t s the m-terms are quadratic in t
                ws = 0.0
                sSd = 0.0
                sSs = 0.0
                for k in range(K):
                    r = 0.0
                    for l in range(K):
                        r += S[k, l] * step[l]
                    Ss[k] = r
                    ws += w[k] * step[k]
                    sSd += step[k] * Sd[k]
                    sSs += step[k] * r
                t = 1.0
                for _ in range(halvings + 1):
                    for k in range(K):
                        trial[k] = mb[k] + t * step[k]
                    tm = fm + t * (ws - sSd) - 0.5 * t * t * sSs
                    fc = tm + fv - N * _lse_probs(trial, vb, pt)
                    if _accept(fc, f):
                        for k in range(K):
                            mb[k] = trial[k]
                            Sd[k] += t * Ss[k]
                            p[k] = pt[k]
                        f = fc
                        fm = tm
                        break
                    t *= 0.5
        iterations[b] = it
        fout[b] = f


def update_sites(w_star, total, m, v, mu, Sinv, cfg: NewtonConfig = NewtonConfig(), gidx=None):
    """Polish a batch of variational sites.

    ``w_star``, ``m``, ``v`` are (B, K) and ``total`` is (B,). ``mu`` and
    ``Sinv`` are either per site, (B, K) and (B, K, K), or per component,
    (G, K) and (G, K, K), with ``gidx`` mapping each site to its component.
    Returns new ``(m, v, info)``; the inputs are not modified.
    """
    m = np.array(m, dtype=float, order="C")
    v = np.array(v, dtype=float, order="C")
    B = m.shape[0]
    if gidx is None:
        gidx = np.arange(B)
    converged = np.zeros(B, dtype=np.bool_)
    iterations = np.zeros(B, dtype=np.int64)
    fout = np.empty(B)
    _newton_kernel(
        np.ascontiguousarray(w_star, dtype=float),
        np.ascontiguousarray(total, dtype=float),
        m,
        v,
        np.ascontiguousarray(mu, dtype=float),
        np.ascontiguousarray(Sinv, dtype=float),
        np.ascontiguousarray(gidx, dtype=np.int64),
        cfg.max_iters,
        cfg.grad_tol,
        cfg.step_halvings,
        cfg.v_floor,
        converged,
        iterations,
        fout,
    )
    return m, v, NewtonInfo(converged, iterations, fout)


def update_site(w, site: VariationalSite, mu, Sigma, cfg: NewtonConfig = NewtonConfig(), return_info=False):
    """Newton-polish a single site against N(mu, Sigma)."""
    w_star, total, _ = _split_counts(w)
    Sinv, _ = _inverse_and_logdet(Sigma)
    m, v, info = update_sites(
        w_star[None], np.atleast_1d(total), site.m[None], site.v[None], np.asarray(mu, float)[None], Sinv[None], cfg
    )
    if not info.all_converged:
        logger.debug("site update stopped after %d iterations without converging", info.iterations[0])
    out = VariationalSite(m[0], v[0])
    return (out, info) if return_info else out


def factor_posterior(Lam, D):
    """Return ``(beta, V_tilde)`` for loadings ``Lam`` (..., K, q) and noise diagonal ``D`` (..., K).

    V_tilde = (Lam' D^-1 Lam + I)^-1 and beta = V_tilde Lam' D^-1, so the
    posterior mean of u is ``beta @ (m - mu)``.
    """
    Lam = np.asarray(Lam, dtype=float)
    D = np.asarray(D, dtype=float)
    if np.any(D <= 0):
        raise NumericError("noise variances D must be strictly positive")
    q = Lam.shape[-1]
    LtDinv = np.swapaxes(Lam, -1, -2) / D[..., None, :]
    M = LtDinv @ Lam + np.eye(q)
    # M >= I, so the Cholesky factorisation cannot fail for finite input
    L = np.linalg.cholesky(M)
    Linv = np.linalg.inv(L)
    V_tilde = np.swapaxes(Linv, -1, -2) @ Linv
    V_tilde = 0.5 * (V_tilde + np.swapaxes(V_tilde, -1, -2))
    return V_tilde @ LtDinv, V_tilde


def update_factor_site(site: VariationalSite, mu, Lambda, D) -> FactorSite:
    """Closed-form optimum of the cycle-2 bound over q(u)."""
    D = np.asarray(D, dtype=float)
    if D.ndim == 2:
        D = np.diag(D)
    Lam = np.asarray(Lambda, dtype=float).reshape(site.m.size, -1)
    beta, V_tilde = factor_posterior(Lam, D)
    return FactorSite(beta @ (site.m - np.asarray(mu, float)), V_tilde)
