import numpy as np
import pytest

from lnmfa.errors import DegenerateComponentError, NumericError
from lnmfa.mixture import (
    MODEL_CODES,
    CountData,
    ModelConstraint,
    cycle2_bounds,
    mstep_stats,
    softmax_responsibilities,
    surrogate_objective,
    update_lambda_d,
    update_pi_mu,
    woodbury_inverse,
)
from lnmfa.varinf import factor_posterior


def test_model_codes_round_trip():
    assert [m.code for m in ModelConstraint.all()] == list(MODEL_CODES)
    assert ModelConstraint.from_code("cuc") == ModelConstraint(True, False, True)
    with pytest.raises(ValueError):
        ModelConstraint.from_code("XYZ")


def test_woodbury_zero_loadings_and_scalar():
    D = np.array([0.5, 2.0, 3.0])
    Sinv, logdet = woodbury_inverse(np.zeros((3, 2)), D)
    np.testing.assert_allclose(Sinv, np.diag(1 / D), atol=1e-15)
    assert logdet == pytest.approx(np.log(D).sum())
    Sinv, logdet = woodbury_inverse([[1.5]], [0.25])
    assert Sinv[0, 0] == pytest.approx(1 / (1.5**2 + 0.25), rel=1e-14)
    assert logdet == pytest.approx(np.log(1.5**2 + 0.25), rel=1e-14)


def test_woodbury_matches_dense():
    rng = np.random.default_rng(0)
    for _ in range(100):
        K = int(rng.integers(1, 51))
        q = int(rng.integers(1, min(5, K) + 1))
        Lam = rng.normal(size=(K, q))
        D = rng.uniform(0.1, 2.0, K)
        Sigma = Lam @ Lam.T + np.diag(D)
        Sinv, logdet = woodbury_inverse(Lam, np.diag(D))
        np.testing.assert_allclose(Sinv, np.linalg.inv(Sigma), rtol=0, atol=1e-10)
        assert abs(logdet - np.linalg.slogdet(Sigma)[1]) < 1e-10


def test_woodbury_rejects_nonpositive_D():
    with pytest.raises(NumericError):
        woodbury_inverse(np.ones((2, 1)), [1.0, 0.0])


def test_responsibilities_trivial_cases():
    F = np.random.default_rng(1).normal(size=(5, 1)) * 100
    np.testing.assert_array_equal(softmax_responsibilities(F, np.array([1.0])), np.ones((5, 1)))
    F2 = np.repeat(F, 2, axis=1)
    np.testing.assert_allclose(softmax_responsibilities(F2, np.array([0.5, 0.5])), 0.5, rtol=1e-15)


def test_responsibilities_shift_invariant_and_stable():
    rng = np.random.default_rng(2)
    F = rng.normal(size=(4, 3)) - 5000.0
    pi = np.array([0.2, 0.3, 0.5])
    a = softmax_responsibilities(F, pi)
    b = softmax_responsibilities(F + rng.normal(size=(4, 1)) * 1e3, pi)
    np.testing.assert_allclose(a, b, atol=1e-10)
    np.testing.assert_allclose(a.sum(axis=1), 1.0, rtol=1e-15)


def test_responsibilities_all_neg_inf_row_named():
    F = np.zeros((3, 2))
    F[1] = -np.inf
    with pytest.raises(NumericError, match="observation 1"):
        softmax_responsibilities(F, np.array([0.5, 0.5]))


def test_pi_mu_updates():
    rng = np.random.default_rng(3)
    m = rng.normal(size=(10, 2, 3))
    pi, mu = update_pi_mu(np.ones((10, 1)), m[:, :1])
    np.testing.assert_array_equal(pi, [1.0])
    np.testing.assert_allclose(mu[0], m[:, 0].mean(axis=0), rtol=1e-14)
    hard = np.zeros((10, 2))
    hard[:4, 0] = hard[4:, 1] = 1
    pi, mu = update_pi_mu(hard, m)
    np.testing.assert_allclose(pi, [0.4, 0.6])
    np.testing.assert_allclose(mu[1], m[4:, 1].mean(axis=0), rtol=1e-13)
    soft = rng.dirichlet([1, 1], size=10)
    pi, mu = update_pi_mu(soft, m)
    for g in range(2):
        oracle = sum(soft[i, g] * m[i, g] for i in range(10)) / sum(soft[:, g])
        np.testing.assert_allclose(mu[g], oracle, rtol=1e-12, atol=1e-12)


def test_degenerate_component_raises():
    resp = np.zeros((5, 2))
    resp[:, 0] = 1.0
    with pytest.raises(DegenerateComponentError) as exc:
        update_pi_mu(resp, np.zeros((5, 2, 3)))
    assert exc.value.component == 1


def _stats_setup(rng, n=40, K=4, q=2):
    resp = rng.dirichlet([1.0, 1.0], size=n)
    m = rng.normal(size=(n, 2, K))
    v = rng.uniform(0.05, 0.5, (n, 2, K))
    Lam = rng.normal(scale=0.6, size=(2, K, q))
    D = rng.uniform(0.1, 0.6, (2, K))
    pi, mu = update_pi_mu(resp, m)
    return resp, m, v, mu, Lam, D


def test_mstep_stats_identities():
    rng = np.random.default_rng(4)
    resp, m, v, mu, Lam, D = _stats_setup(rng)
    s0 = mstep_stats(resp[:, 0], m[:, 0], np.zeros_like(v[:, 0]), mu[0], Lam[0], D[0])
    np.testing.assert_array_equal(s0.Sigma_hat, s0.S)
    sz = mstep_stats(resp[:, 0], m[:, 0], v[:, 0], mu[0], np.zeros_like(Lam[0]), D[0])
    np.testing.assert_array_equal(sz.beta, 0.0)
    np.testing.assert_allclose(sz.theta, np.eye(2), atol=1e-15)
    s = mstep_stats(resp[:, 1], m[:, 1], v[:, 1], mu[1], Lam[1], D[1])
    beta, Vt = factor_posterior(Lam[1], D[1])
    mt = (m[:, 1] - mu[1]) @ beta.T
    oracle = sum(resp[i, 1] * (np.outer(mt[i], mt[i]) + Vt) for i in range(len(resp))) / resp[:, 1].sum()
    np.testing.assert_allclose(s.theta, oracle, atol=1e-10)


def _expected_cycle2(resp, data, m, v, mu, Lam, D, m_tilde, V_tilde):
    return float(np.sum(resp * cycle2_bounds(data, m, v, mu, Lam, D, m_tilde, V_tilde)))


@pytest.mark.parametrize("code", MODEL_CODES)
def test_lambda_d_updates_increase_cycle2_objective(code):
    rng = np.random.default_rng(5)
    model = ModelConstraint.from_code(code)
    n, K, q = 60, 5, 2
    data = CountData.from_counts(rng.multinomial(300, np.ones(K + 1) / (K + 1), size=n))
    resp, m, v, mu, Lam, D = _stats_setup(rng, n, K, q)
    # start from a member of the constrained family
    if model.lambda_shared:
        Lam[1] = Lam[0]
    if model.d_shared:
        D[1] = D[0]
    if model.d_isotropic:
        D[:] = D.mean(axis=1, keepdims=True)
    beta, Vt = factor_posterior(Lam, D)
    mt = np.einsum("gqk,ngk->ngq", beta, m - mu)
    stats = [mstep_stats(resp[:, g], m[:, g], v[:, g], mu[g], Lam[g], D[g]) for g in range(2)]
    Lam_new, D_new = update_lambda_d(stats, model, Lam, D)
    before = _expected_cycle2(resp, data, m, v, mu, Lam, D, mt, Vt)
    mid = _expected_cycle2(resp, data, m, v, mu, Lam, D_new, mt, Vt)
    after = _expected_cycle2(resp, data, m, v, mu, Lam_new, D_new, mt, Vt)
    assert mid >= before - 1e-8
    assert after >= mid - 1e-8
    assert after > before
    # constraint structure is respected
    if model.lambda_shared:
        np.testing.assert_array_equal(Lam_new[0], Lam_new[1])
    if model.d_shared:
        np.testing.assert_array_equal(D_new[0], D_new[1])
    if model.d_isotropic:
        assert np.ptp(D_new, axis=1).max() == 0.0
    # each conditional step is a maximiser within the family
    for _ in range(10):
        dD = rng.normal(scale=0.01, size=D.shape)
        if model.d_shared:
            dD[1] = dD[0]
        if model.d_isotropic:
            dD[:] = dD[:, :1]
        assert _expected_cycle2(resp, data, m, v, mu, Lam, D_new + dD, mt, Vt) <= mid + 1e-9
        dL = rng.normal(scale=0.01, size=Lam.shape)
        if model.lambda_shared:
            dL[1] = dL[0]
        assert _expected_cycle2(resp, data, m, v, mu, Lam_new + dL, D_new, mt, Vt) <= after + 1e-9


def test_single_group_models_coincide():
    rng = np.random.default_rng(6)
    resp, m, v, mu, Lam, D = _stats_setup(rng)
    resp = np.ones((len(resp), 1))
    pi, mu = update_pi_mu(resp, m[:, :1])
    stats = [mstep_stats(resp[:, 0], m[:, 0], v[:, 0], mu[0], Lam[:1][0], D[:1][0])]
    out = {c: update_lambda_d(stats, c, Lam[:1], D[:1]) for c in MODEL_CODES}
    for a, b in (("UUU", "CUU"), ("UUU", "UCU"), ("UCU", "CCU"), ("UUC", "CUC"), ("UCC", "CCC"), ("UUC", "UCC")):
        np.testing.assert_allclose(out[a][0], out[b][0], atol=1e-12)
        np.testing.assert_allclose(out[a][1], out[b][1], atol=1e-12)


def test_surrogate_objective_matches_direct_sum():
    rng = np.random.default_rng(7)
    F = rng.normal(size=(6, 3)) * 3
    pi = np.array([0.1, 0.6, 0.3])
    direct = sum(np.log(sum(pi[g] * np.exp(F[i, g]) for g in range(3))) for i in range(6))
    assert surrogate_objective(F, pi) == pytest.approx(direct, rel=1e-13)
