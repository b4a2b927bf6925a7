"""Variational AECM fitting of a G-component, q-factor mixture.

One sweep runs:

1. Newton polish of every site (m_ig, v_ig) against the current parameters;
2. cycle-1 responsibilities, then pi and mu;
3. closed-form factor posteriors q(u) under the old loadings and noise;
4. cycle-2 responsibilities, then D and Lambda under the model constraint.

The objective tracked for convergence and BIC is
``sum_i log sum_g pi_g exp(F_ig)`` with F the cycle-1 bound evaluated at the
updated parameters. The true log-likelihood is intractable; this surrogate
stands in for it everywhere.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .compositional import initial_latent
from .criteria import PARAM_COUNTS, aitken_converged, aitken_estimate, bic, free_params
from .errors import DegenerateComponentError, FitFailure, NumericError
from .mixture import (
    CountData,
    MixtureState,
    ModelConstraint,
    as_model,
    check_masses,
    cycle1_bounds,
    cycle2_bounds,
    mstep_stats,
    softmax_responsibilities,
    surrogate_objective,
    update_lambda_d,
    update_pi_mu,
    woodbury_inverse,
)
from .varinf import NewtonConfig, factor_posterior, update_sites

logger = logging.getLogger(__name__)

INIT_METHODS = ("gmm", "kmeans", "random", "labels")


@dataclass(frozen=True)
class InitSpec:
    """How to obtain the starting partition.

    ``gmm`` fits Gaussian mixtures with a shared and with a group-specific
    full covariance to the ALR of the zero-replaced compositions and keeps the
    partition of the one with the better BIC. ``kmeans`` clusters the same
    data with k-means, ``random`` allocates observations uniformly at random
    and ``labels`` uses the partition supplied in ``labels`` (values are
    relabelled to 0..G-1 in order of first appearance).
    """

    method: str = "gmm"
    seed: int = 0
    labels: tuple | None = None
    v_init: float = float(np.sqrt(0.1))
    pseudo: float = 0.001
    kmeans_n_init: int = 10

    def __post_init__(self):
        if self.method not in INIT_METHODS:
            raise ValueError(f"unknown init method {self.method!r}; choose from {INIT_METHODS}")
        if self.method == "labels" and self.labels is None:
            raise ValueError("init method 'labels' needs labels")


@dataclass(frozen=True)
class FitConfig:
    eps: float = 1e-2
    max_sweeps: int = 500
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    retries: int = 3
    n_min: float = 1.0
    d_floor: float = 1e-8
    debug_checks: bool = False
    param_count: str = "free"

    def __post_init__(self):
        if self.param_count not in PARAM_COUNTS:
            raise ValueError(f"param_count must be one of {PARAM_COUNTS}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")


@dataclass
class FitResult:
    model: str
    G: int
    q: int
    pi: np.ndarray
    mu: np.ndarray
    Lambda: np.ndarray
    D: np.ndarray
    resp: np.ndarray
    labels: np.ndarray  # 1-based hard labels
    trace: list[float]
    objective: float
    bic: float
    n_params: int
    converged: bool
    n_sweeps: int
    seed: int
    attempts: int = 1
    state: MixtureState | None = field(default=None, repr=False)

    @property
    def Sigma(self) -> np.ndarray:
        return self.Lambda @ np.swapaxes(self.Lambda, -1, -2) + self.D[:, :, None] * np.eye(self.D.shape[1])

    @property
    def n(self) -> int:
        return self.resp.shape[0]


def _relabel(labels):
    _, inv = np.unique(np.asarray(labels), return_inverse=True)
    # order of first appearance keeps user labelling stable
    first = {}
    for lab in inv:
        first.setdefault(int(lab), len(first))
    return np.array([first[int(lab)] for lab in inv])


def initial_partition(Y, G: int, init: InitSpec) -> np.ndarray:
    n = Y.shape[0]
    if init.method == "labels":
        z = _relabel(init.labels)
        if z.size != n:
            raise ValueError(f"{z.size} initial labels for {n} observations")
        if z.max() + 1 != G:
            raise ValueError(f"initial labels have {z.max() + 1} groups, expected {G}")
        return z
    if G == 1:
        return np.zeros(n, dtype=int)
    if init.method == "random":
        rng = np.random.default_rng(init.seed)
        return rng.integers(G, size=n)
    if init.method == "gmm":
        from sklearn.mixture import GaussianMixture

        fits = [
            GaussianMixture(G, covariance_type=ct, random_state=init.seed).fit(Y) for ct in ("tied", "full")
        ]
        return min(fits, key=lambda f: f.bic(Y)).predict(Y)
    from sklearn.cluster import KMeans

    km = KMeans(n_clusters=G, n_init=init.kmeans_n_init, random_state=init.seed)
    return km.fit_predict(Y)


def _loadings_from_cov(S, q):
    evals, evecs = np.linalg.eigh(S)
    order = np.argsort(evals)[::-1][:q]
    return evecs[:, order] * np.sqrt(np.maximum(evals[order], 0.0))


def initialize(data: CountData, G: int, q: int, model, init: InitSpec) -> MixtureState:
    """Starting state: partition, group moments, eigen-based loadings and ALR sites."""
    model = as_model(model)
    n, K = data.n, data.K
    Y = initial_latent(data.w, init.pseudo)
    z = initial_partition(Y, G, init)
    resp = np.zeros((n, G))
    resp[np.arange(n), z] = 1.0
    n_g = resp.sum(axis=0)
    if np.any(n_g < 2):
        raise DegenerateComponentError(int(np.argmin(n_g)), float(n_g.min()), 2.0)

    pi = n_g / n
    mu = (resp.T @ Y) / n_g[:, None]
    S = np.stack([np.cov(Y[z == g], rowvar=False, bias=True).reshape(K, K) for g in range(G)])
    floor = 1e-3 * np.mean(np.diagonal(S, axis1=1, axis2=2), axis=1) + 1e-10

    if model.lambda_shared:
        pooled = np.einsum("g,gkl->kl", pi, S)
        Lam = np.broadcast_to(_loadings_from_cov(pooled, q), (G, K, q)).copy()
    else:
        Lam = np.stack([_loadings_from_cov(S[g], q) for g in range(G)])
    D = np.diagonal(S, axis1=1, axis2=2) - np.sum(Lam**2, axis=2)
    D = np.maximum(D, floor[:, None])
    if model.d_shared:
        D = np.broadcast_to(pi @ D, (G, K)).copy()
    if model.d_isotropic:
        D = np.repeat(D.mean(axis=1, keepdims=True), K, axis=1)

    m = np.repeat(Y[:, None, :], G, axis=1)
    v = np.full((n, G, K), init.v_init)
    return MixtureState(pi, mu, Lam, D, m, v, resp)


def polish_sites(data: CountData, state: MixtureState, cfg: NewtonConfig):
    """Newton-update every (i, g) site against the state's current parameters.

    Returns ``(m, v, F1, info)`` where F1 is the (n, G) cycle-1 bound at the new sites.
    """
    n, G, K = state.m.shape
    Sinv, logdet = woodbury_inverse(state.Lam, state.D)
    m, v, info = update_sites(
        np.repeat(data.w_star, G, axis=0),
        np.repeat(data.total, G),
        state.m.reshape(n * G, K),
        state.v.reshape(n * G, K),
        state.mu,
        Sinv,
        cfg,
        gidx=np.tile(np.arange(G), n),
    )
    F1 = info.partial_bound.reshape(n, G) + data.C[:, None] + 0.5 * K - 0.5 * logdet
    return m.reshape(n, G, K), v.reshape(n, G, K), F1, info


def aecm_sweep(data: CountData, state: MixtureState, model, cfg: FitConfig):
    """One full sweep; returns ``(new_state, objective, newton_info)``."""
    model = as_model(model)
    # cycle 1
    m, v, F1, info = polish_sites(data, state, cfg.newton)
    resp = softmax_responsibilities(F1, state.pi)
    pi, mu = update_pi_mu(resp, m, cfg.n_min)

    # cycle 2: factor posteriors and memberships under the old Lambda, D
    beta, V_tilde = factor_posterior(state.Lam, state.D)
    m_tilde = np.einsum("gqk,ngk->ngq", beta, m - mu)
    F2 = cycle2_bounds(data, m, v, mu, state.Lam, state.D, m_tilde, V_tilde)
    resp = softmax_responsibilities(F2, pi)
    check_masses(resp, cfg.n_min)
    stats = [mstep_stats(resp[:, g], m[:, g], v[:, g], mu[g], state.Lam[g], state.D[g], cfg.n_min) for g in range(len(pi))]
    Lam, D = update_lambda_d(stats, model, state.Lam, state.D, cfg.d_floor)

    F = cycle1_bounds(data, m, v, mu, Lam, D)
    objective = surrogate_objective(F, pi)
    if not np.isfinite(objective):
        raise NumericError("surrogate objective is not finite")
    new = MixtureState(pi, mu, Lam, D, m, v, softmax_responsibilities(F, pi), m_tilde, V_tilde)
    if cfg.debug_checks:
        _check_woodbury(Lam, D)
    return new, objective, info


def _check_woodbury(Lam, D):
    Sinv, logdet = woodbury_inverse(Lam, D)
    Sigma = Lam @ np.swapaxes(Lam, -1, -2) + D[:, :, None] * np.eye(D.shape[1])
    dense_inv = np.linalg.inv(Sigma)
    _, dense_logdet = np.linalg.slogdet(Sigma)
    if not (np.allclose(Sinv, dense_inv, rtol=1e-8, atol=1e-10) and np.allclose(logdet, dense_logdet, atol=1e-10)):
        raise NumericError("Woodbury and dense inverses disagree")


def run_from_state(data: CountData, state: MixtureState, model, cfg: FitConfig, seed: int = 0, attempts: int = 1):
    """Iterate sweeps from a given starting state until the Aitken rule fires."""
    model = as_model(model)
    trace: list[float] = []
    l_inf_prev = None
    converged = False
    for sweep in range(1, cfg.max_sweeps + 1):
        state, objective, info = aecm_sweep(data, state, model, cfg)
        trace.append(objective)
        if len(trace) >= 3:
            if l_inf_prev is not None and aitken_converged(*trace[-3:], eps=cfg.eps, l_inf_prev=l_inf_prev):
                converged = True
                break
            l_inf_prev = aitken_estimate(*trace[-3:])
    G, K, q = state.Lam.shape
    p = free_params(model, G, K, q, cfg.param_count)
    objective = trace[-1]
    return FitResult(
        model=model.code,
        G=G,
        q=q,
        pi=state.pi,
        mu=state.mu,
        Lambda=state.Lam,
        D=state.D,
        resp=state.resp,
        labels=np.argmax(state.resp, axis=1) + 1,
        trace=trace,
        objective=objective,
        bic=bic(objective, p, data.n),
        n_params=p,
        converged=converged,
        n_sweeps=len(trace),
        seed=seed,
        attempts=attempts,
        state=state,
    )


def attempt_seed(seed: int, attempt: int) -> int:
    if attempt == 0:
        return seed
    return int(np.random.SeedSequence([seed, attempt]).generate_state(1)[0])


def fit_aecm(w, G: int, q: int, model="UUU", init: InitSpec | None = None, cfg: FitConfig | None = None) -> FitResult:
    """Fit one (G, q, model) cell, restarting on degenerate components."""
    model = as_model(model)
    init = init or InitSpec()
    cfg = cfg or FitConfig()
    data = w if isinstance(w, CountData) else CountData.from_counts(w)
    if not 1 <= q <= data.K:
        raise ValueError(f"q must be in 1..{data.K}, got {q}")
    if G < 1:
        raise ValueError("G must be >= 1")
    if data.n <= G:
        raise ValueError(f"need more observations than components (n={data.n}, G={G})")

    tries = 1 if init.method == "labels" else cfg.retries + 1
    causes = []
    for attempt in range(tries):
        spec = replace(init, seed=attempt_seed(init.seed, attempt))
        try:
            state = initialize(data, G, q, model, spec)
            return run_from_state(data, state, model, cfg, seed=spec.seed, attempts=attempt + 1)
        except (NumericError, np.linalg.LinAlgError, FloatingPointError) as exc:
            logger.info("fit %s G=%d q=%d attempt %d failed: %s", model.code, G, q, attempt + 1, exc)
            causes.append(exc)
    raise FitFailure(f"{model.code} G={G} q={q}: all {tries} attempts failed ({causes[-1]})", causes)
