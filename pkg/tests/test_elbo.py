import math
from fractions import Fraction

import numpy as np
import pytest

from oracles import log_marginal_k1

from lnmfa.elbo import (
    FactorSite,
    VariationalSite,
    elbo_cycle1,
    elbo_cycle1_grad,
    elbo_cycle2,
    log1p_sum_exp,
    multinomial_log_coeff,
)
from lnmfa.errors import NumericError
from lnmfa.varinf import NewtonConfig, update_factor_site, update_site


def _cycle1_by_terms(w, m, v, mu, Sigma):
    # independent term-by-term evaluation with plain loops
    K = len(m)
    N = sum(w)
    C = math.lgamma(N + 1) - sum(math.lgamma(x + 1) for x in w)
    lin = sum(w[k] * m[k] for k in range(K))
    lse = math.log(sum(math.exp(m[k] + v[k] ** 2 / 2) for k in range(K)) + 1)
    Sinv = np.linalg.inv(Sigma)
    ent = sum(math.log(v[k]) for k in range(K)) + K / 2
    sign, logdet = np.linalg.slogdet(Sigma)
    d = [m[k] - mu[k] for k in range(K)]
    quad = sum(d[k] * Sinv[k, l] * d[l] for k in range(K) for l in range(K))
    tr = sum(Sinv[k, k] * v[k] ** 2 for k in range(K))
    return C + lin - N * lse + ent - 0.5 * logdet - 0.5 * quad - 0.5 * tr


def _random_instance(rng, K):
    A = rng.normal(size=(K, K))
    Sigma = A @ A.T / K + 0.2 * np.eye(K)
    mu = rng.normal(scale=0.7, size=K)
    p = rng.dirichlet(np.ones(K + 1))
    w = rng.multinomial(rng.integers(5, 200), p)
    site = VariationalSite(rng.normal(size=K), rng.uniform(0.05, 1.0, size=K))
    return w, site, mu, Sigma


def test_multinomial_coeff_trivial():
    assert multinomial_log_coeff([1, 0, 0]) == pytest.approx(0.0, abs=1e-14)
    assert multinomial_log_coeff([2, 2]) == pytest.approx(math.log(6), rel=1e-14)


def test_multinomial_coeff_exact_rational():
    w = [3, 4, 5]
    exact = Fraction(math.factorial(12), math.factorial(3) * math.factorial(4) * math.factorial(5))
    assert multinomial_log_coeff(w) == pytest.approx(math.log(exact), rel=1e-13)


def test_log1p_sum_exp_stable():
    lse, p = log1p_sum_exp(np.array([1000.0, 999.0]))
    assert np.isfinite(lse) and np.all(np.isfinite(p))
    assert lse == pytest.approx(1000 + math.log1p(math.exp(-1)), rel=1e-15)
    lse, p = log1p_sum_exp(np.array([-1000.0]))
    assert lse == pytest.approx(0.0, abs=1e-300) and p[0] >= 0


def test_cycle1_scalar_oracle():
    val = elbo_cycle1([3, 2], VariationalSite([0.0], [0.1]), [0.0], [[1.0]])
    assert val == pytest.approx(_cycle1_by_terms([3, 2], [0.0], [0.1], [0.0], np.eye(1)), abs=1e-8)


def test_cycle1_random_oracle():
    rng = np.random.default_rng(11)
    for K in (1, 2, 4, 7):
        for _ in range(5):
            w, site, mu, Sigma = _random_instance(rng, K)
            assert elbo_cycle1(w, site, mu, Sigma) == pytest.approx(
                _cycle1_by_terms(list(w), site.m, site.v, mu, Sigma), rel=1e-11, abs=1e-9
            )


def test_cycle1_gaussian_terms_cancel_when_q_equals_prior():
    # m = mu and V = Sigma diagonal: only the multinomial part remains
    v = np.array([0.3, 0.5])
    mu = np.array([0.2, -0.1])
    w = np.array([4, 1, 2])
    val = elbo_cycle1(w, VariationalSite(mu, v), mu, np.diag(v**2))
    lse, _ = log1p_sum_exp(mu + v**2 / 2)
    assert val == pytest.approx(multinomial_log_coeff(w) + w[:2] @ mu - w.sum() * lse, abs=1e-12)


def test_cycle1_non_spd_raises():
    with pytest.raises(NumericError):
        elbo_cycle1([1, 1, 1], VariationalSite([0, 0], [1, 1]), [0, 0], [[1, 2], [2, 1]])


def test_cycle1_below_quadrature_marginal():
    rng = np.random.default_rng(5)
    for _ in range(20):
        N = int(rng.integers(1, 60))
        n1 = int(rng.integers(0, N + 1))
        w = [n1, N - n1]
        mu, s2 = rng.normal(), rng.uniform(0.05, 2.0)
        site = update_site(w, VariationalSite([mu], [0.5]), [mu], [[s2]], NewtonConfig(max_iters=100))
        gap = log_marginal_k1(w, mu, s2) - elbo_cycle1(w, site, [mu], [[s2]])
        assert gap >= -1e-10


def test_grad_matches_finite_differences():
    rng = np.random.default_rng(2)
    h = 1e-6
    for _ in range(50):
        w, site, mu, Sigma = _random_instance(rng, int(rng.integers(1, 6)))
        dm, dv = elbo_cycle1_grad(w, site, mu, Sigma)
        for vec, grad, which in ((site.m, dm, "m"), (site.v, dv, "v")):
            for k in range(vec.size):
                e = np.zeros(vec.size)
                e[k] = h
                up = VariationalSite(site.m + e, site.v) if which == "m" else VariationalSite(site.m, site.v + e)
                dn = VariationalSite(site.m - e, site.v) if which == "m" else VariationalSite(site.m, site.v - e)
                fd = (elbo_cycle1(w, up, mu, Sigma) - elbo_cycle1(w, dn, mu, Sigma)) / (2 * h)
                assert abs(fd - grad[k]) <= 1e-5 * max(1.0, abs(grad[k]))


def test_cycle2_zero_loadings_decouple():
    rng = np.random.default_rng(8)
    K, q = 3, 1
    w = rng.multinomial(40, np.ones(K + 1) / (K + 1))
    site = VariationalSite(rng.normal(size=K), np.full(K, 0.3))
    mu, D = rng.normal(size=K), rng.uniform(0.1, 0.5, K)
    Lam = np.zeros((K, q))
    opt = elbo_cycle2(w, site, FactorSite([0.0], [[1.0]]), mu, Lam, D)
    assert opt == pytest.approx(elbo_cycle1(w, site, mu, np.diag(D)), abs=1e-10)
    for mt, vt in ((0.3, 1.0), (0.0, 0.5), (-1.0, 2.0)):
        assert elbo_cycle2(w, site, FactorSite([mt], [[vt]]), mu, Lam, D) < opt


def test_cycle2_at_factor_optimum_equals_cycle1():
    # The exact factor posterior closes the inner gap; see the ledger for the trace term
    rng = np.random.default_rng(9)
    for _ in range(20):
        K = int(rng.integers(1, 5))
        q = int(rng.integers(1, min(2, K) + 1))
        w = rng.multinomial(50, rng.dirichlet(np.ones(K + 1)))
        Lam = rng.normal(scale=0.5, size=(K, q))
        D = rng.uniform(0.05, 0.5, K)
        mu = rng.normal(size=K)
        site = VariationalSite(rng.normal(size=K), rng.uniform(0.05, 0.6, K))
        fs = update_factor_site(site, mu, Lam, D)
        F1 = elbo_cycle1(w, site, mu, Lam @ Lam.T + np.diag(D))
        F2 = elbo_cycle2(w, site, fs, mu, Lam, D)
        # the bounds differ only by the factor-posterior expectation of the site variance
        V = site.v**2
        gap = 0.5 * np.trace((Lam / D[:, None]).T * V @ (Lam / D[:, None]) @ fs.V_tilde)
        assert F1 - F2 == pytest.approx(gap, abs=1e-8)


def test_cycle2_concave_in_factor_mean():
    rng = np.random.default_rng(10)
    K, q = 4, 2
    w = rng.multinomial(80, rng.dirichlet(np.ones(K + 1)))
    Lam, D, mu = rng.normal(size=(K, q)), rng.uniform(0.1, 0.4, K), rng.normal(size=K)
    site = VariationalSite(rng.normal(size=K), np.full(K, 0.2))
    fs = update_factor_site(site, mu, Lam, D)
    best = elbo_cycle2(w, site, fs, mu, Lam, D)
    for _ in range(20):
        pert = FactorSite(fs.m_tilde + rng.normal(scale=0.1, size=q), fs.V_tilde)
        assert elbo_cycle2(w, site, pert, mu, Lam, D) < best


def test_cycle2_rejects_nonpositive_D():
    site = VariationalSite([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(NumericError):
        elbo_cycle2([1, 1, 1], site, FactorSite([0.0], [[1.0]]), [0, 0], np.zeros((2, 1)), [1.0, 0.0])


def test_site_types_validate():
    with pytest.raises(ValueError):
        VariationalSite([0.0], [0.0])
    with pytest.raises(ValueError):
        VariationalSite([0.0, 1.0], [1.0])
    with pytest.raises(ValueError):
        FactorSite([0.0, 0.0], [[1.0, 0.1], [0.0, 1.0]])
    np.testing.assert_array_equal(VariationalSite([1.0, 2.0], [0.5, 2.0]).V, np.diag([0.25, 4.0]))
