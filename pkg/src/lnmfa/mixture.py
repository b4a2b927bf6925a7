"""Mixture bookkeeping for the factor-analyzer family.

Parameters are held as stacked arrays: ``mu`` (G, K), ``Lam`` (G, K, q) and
``D`` (G, K) with the diagonal of each noise covariance. Constrained models
simply carry identical slices across components.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.special import logsumexp

from .elbo import cycle1_batch, cycle2_batch, multinomial_log_coeff
from .errors import DegenerateComponentError, NumericError
from .varinf import factor_posterior

MODEL_CODES = ("UUU", "UUC", "UCU", "UCC", "CUU", "CUC", "CCU", "CCC")


@dataclass(frozen=True)
class ModelConstraint:
    """One member of the eight-model family.

    The three letters of the code say whether the loadings are shared
    across components (C) or not (U), whether the noise covariance is shared,
    and whether it is isotropic.
    """

    lambda_shared: bool
    d_shared: bool
    d_isotropic: bool

    @property
    def code(self) -> str:
        return "".join("C" if f else "U" for f in (self.lambda_shared, self.d_shared, self.d_isotropic))

    @classmethod
    def from_code(cls, code: str) -> "ModelConstraint":
        code = code.strip().upper()
        if code not in MODEL_CODES:
            raise ValueError(f"unknown model code {code!r}; expected one of {', '.join(MODEL_CODES)}")
        return cls(*(c == "C" for c in code))

    @classmethod
    def all(cls) -> list["ModelConstraint"]:
        return [cls(*flags) for flags in product((False, True), repeat=3)]

    def __str__(self):
        return self.code


def as_model(model) -> ModelConstraint:
    return model if isinstance(model, ModelConstraint) else ModelConstraint.from_code(model)


@dataclass(frozen=True)
class ComponentParams:
    mu: np.ndarray
    Lambda: np.ndarray
    D: np.ndarray

    @property
    def Sigma(self) -> np.ndarray:
        return self.Lambda @ self.Lambda.T + np.diag(self.D)


@dataclass(frozen=True)
class CountData:
    """Count matrix split into the pieces every bound evaluation needs."""

    w: np.ndarray
    w_star: np.ndarray
    total: np.ndarray
    C: np.ndarray

    @classmethod
    def from_counts(cls, w) -> "CountData":
        w = np.asarray(getattr(w, "counts", w), dtype=float)
        return cls(w, w[:, :-1], w.sum(axis=1), multinomial_log_coeff(w))

    @property
    def n(self):
        return self.w.shape[0]

    @property
    def K(self):
        return self.w.shape[1] - 1


@dataclass
class MixtureState:
    pi: np.ndarray  # (G,)
    mu: np.ndarray  # (G, K)
    Lam: np.ndarray  # (G, K, q)
    D: np.ndarray  # (G, K)
    m: np.ndarray  # (n, G, K)
    v: np.ndarray  # (n, G, K)
    resp: np.ndarray  # (n, G)
    m_tilde: np.ndarray | None = None  # (n, G, q)
    V_tilde: np.ndarray | None = None  # (G, q, q)

    @property
    def G(self):
        return self.pi.shape[0]

    @property
    def components(self) -> list[ComponentParams]:
        return [ComponentParams(self.mu[g], self.Lam[g], self.D[g]) for g in range(self.G)]

    @property
    def Sigma(self) -> np.ndarray:
        return self.Lam @ np.swapaxes(self.Lam, -1, -2) + self.D[:, :, None] * np.eye(self.D.shape[1])


@dataclass(frozen=True)
class MStepStats:
    S: np.ndarray
    Sigma_hat: np.ndarray
    beta: np.ndarray
    theta: np.ndarray
    n_g: float


def woodbury_inverse(Lambda, D):
    """Inverse and log-determinant of ``Lambda Lambda^T + diag(D)``.

    Only a q x q matrix is factorised. Works on a single component
    (Lambda (K, q), D (K,)) or a stack of them.
    """
    Lam = np.asarray(Lambda, dtype=float)
    D = np.asarray(D, dtype=float)
    if D.ndim == Lam.ndim:
        D = np.diagonal(D, axis1=-2, axis2=-1)
    if np.any(D <= 0):
        raise NumericError("noise variances D must be strictly positive")
    q = Lam.shape[-1]
    Dinv = 1.0 / D
    DinvL = Dinv[..., :, None] * Lam
    M = np.eye(q) + np.swapaxes(Lam, -1, -2) @ DinvL
    L = np.linalg.cholesky(M)
    # Sigma^-1 = D^-1 - (D^-1 Lam L^-T)(D^-1 Lam L^-T)^T
    X = np.swapaxes(np.linalg.solve(L, np.swapaxes(DinvL, -1, -2)), -1, -2)
    Sinv = Dinv[..., :, None] * np.eye(D.shape[-1]) - X @ np.swapaxes(X, -1, -2)
    logdet = np.sum(np.log(D), axis=-1) + 2.0 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    return Sinv, logdet


def cycle1_bounds(data: CountData, m, v, mu, Lam, D):
    """(n, G) matrix of cycle-1 bounds for every observation and component."""
    Sinv, logdet = woodbury_inverse(Lam, D)
    return cycle1_batch(data.w_star[:, None], data.total[:, None], data.C[:, None], m, v, mu, Sinv, logdet)


def cycle2_bounds(data: CountData, m, v, mu, Lam, D, m_tilde, V_tilde):
    return cycle2_batch(
        data.w_star[:, None], data.total[:, None], data.C[:, None], m, v, mu, Lam, D, m_tilde, V_tilde
    )


def softmax_responsibilities(F, pi):
    """Row-normalise ``pi_g exp(F_ig)`` in log space."""
    with np.errstate(divide="ignore"):
        logits = np.asarray(F, dtype=float) + np.log(pi)
    row_max = logits.max(axis=1)
    bad = np.flatnonzero(~np.isfinite(row_max))
    if bad.size:
        raise NumericError(f"observation {bad[0]} has no finite component bound")
    resp = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
    return resp / resp.sum(axis=1, keepdims=True)


def responsibilities(state: MixtureState, data: CountData, cycle: int = 1):
    """Approximate posterior memberships from the cycle-1 or cycle-2 bound."""
    if cycle == 1:
        F = cycle1_bounds(data, state.m, state.v, state.mu, state.Lam, state.D)
    elif cycle == 2:
        if state.m_tilde is None:
            raise ValueError("factor sites are not set; run the cycle-2 site update first")
        F = cycle2_bounds(data, state.m, state.v, state.mu, state.Lam, state.D, state.m_tilde, state.V_tilde)
    else:
        raise ValueError(f"cycle must be 1 or 2, got {cycle}")
    return softmax_responsibilities(F, state.pi)


def check_masses(resp, n_min: float = 1.0):
    n_g = resp.sum(axis=0)
    low = np.flatnonzero(n_g < n_min)
    if low.size:
        raise DegenerateComponentError(int(low[0]), float(n_g[low[0]]), n_min)
    return n_g


def update_pi_mu(resp, m, n_min: float = 1.0):
    """Closed-form mixing proportions and means; ``m`` is (n, G, K)."""
    n_g = check_masses(resp, n_min)
    pi = n_g / resp.shape[0]
    mu = np.einsum("ng,ngk->gk", resp, m) / n_g[:, None]
    return pi, mu


def mstep_stats(resp_g, m_g, v_g, mu_g, Lam_g, D_g, n_min: float = 1.0) -> MStepStats:
    """Sufficient statistics for one component, computed with the current (old) Lam, D."""
    n_g = float(np.sum(resp_g))
    if n_g < n_min:
        raise DegenerateComponentError(-1, n_g, n_min)
    diff = m_g - mu_g
    wd = resp_g[:, None] * diff
    S = wd.T @ diff / n_g
    S = 0.5 * (S + S.T)
    Sigma_hat = S + np.diag(resp_g @ v_g**2 / n_g)
    beta, V_tilde = factor_posterior(Lam_g, D_g)
    theta = V_tilde + beta @ S @ beta.T
    return MStepStats(S, Sigma_hat, beta, 0.5 * (theta + theta.T), n_g)


def residual_diag(stats: MStepStats, Lam):
    """diag(Sigma_hat - 2 Lam beta S + Lam theta Lam^T)."""
    cross = np.sum(Lam * (stats.S @ stats.beta.T), axis=1)
    return np.diag(stats.Sigma_hat) - 2.0 * cross + np.sum((Lam @ stats.theta) * Lam, axis=1)


def update_lambda_d(stats: list[MStepStats], model, Lam_old, D_old=None, d_floor: float = 1e-8):
    """Conditional maximisation of the noise variances, then the loadings.

    D is updated holding the loadings at their old values; the loadings are
    then updated given the new D (which only matters when they are shared).
    Returns ``(Lam_new, D_new)`` as stacked (G, K, q) and (G, K) arrays.
    """
    model = as_model(model)
    G = len(stats)
    Lam_old = np.asarray(Lam_old, dtype=float)
    K = Lam_old.shape[1]
    n_g = np.array([s.n_g for s in stats])
    n = n_g.sum()

    R = np.stack([residual_diag(stats[g], Lam_old[g]) for g in range(G)])
    if model.d_shared and model.d_isotropic:
        D = np.full((G, K), np.sum(n_g * R.sum(axis=1)) / (K * n))
    elif model.d_shared:
        D = np.broadcast_to((n_g[:, None] * R).sum(axis=0) / n, (G, K)).copy()
    elif model.d_isotropic:
        D = np.repeat(R.mean(axis=1, keepdims=True), K, axis=1)
    else:
        D = R
    D = np.maximum(D, d_floor)

    if model.lambda_shared:
        # row i solves lambda_i (sum_g n_g / d_g(i) theta_g) = r_i
        r = sum(n_g[g] * (stats[g].S @ stats[g].beta.T) / D[g][:, None] for g in range(G))
        A = sum((n_g[g] / D[g])[:, None, None] * stats[g].theta for g in range(G))
        shared = np.linalg.solve(A, r[:, :, None])[:, :, 0]
        Lam = np.broadcast_to(shared, Lam_old.shape).copy()
    else:
        Lam = np.stack([s.S @ s.beta.T @ np.linalg.inv(s.theta) for s in stats])
    return Lam, D


def surrogate_objective(F, pi):
    """sum_i log sum_g pi_g exp(F_ig)."""
    with np.errstate(divide="ignore"):
        return float(np.sum(logsumexp(F + np.log(pi), axis=1)))
