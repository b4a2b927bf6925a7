"""Reference computations shared by several test modules."""

import itertools
import math

import numpy as np
from scipy import integrate, optimize, special


def log_marginal_k1(w, mu, s2):
    """log f(w) for K=1 by adaptive quadrature over the latent log-ratio."""
    n1, N = w[0], sum(w)
    C = math.lgamma(N + 1) - sum(math.lgamma(x + 1) for x in w)

    def log_integrand(y):
        return n1 * y - N * np.logaddexp(0.0, y) - (y - mu) ** 2 / (2 * s2) - 0.5 * math.log(2 * math.pi * s2)

    # centre the window on the posterior mode; the score is decreasing and |n1 - N p| <= N
    def score(y):
        return n1 - N * special.expit(y) - (y - mu) / s2

    mode = optimize.brentq(score, mu - N * s2 - 1, mu + N * s2 + 1, xtol=1e-14)
    p = float(special.expit(mode))
    h = -N * p * (1 - p) - 1 / s2
    scale = math.sqrt(-1 / h)
    peak = log_integrand(mode)
    val, _ = integrate.quad(
        lambda y: math.exp(log_integrand(y) - peak), mode - 40 * scale, mode + 40 * scale, epsabs=0, epsrel=1e-12, limit=200
    )
    return C + peak + math.log(val)


def table1_count(code, G, K, q):
    # one row per model, written out independently of the implementation
    a = K * q - q * (q - 1) / 2
    rows = {
        "CCC": a + 1,
        "CCU": a + K,
        "CUC": a + G,
        "CUU": a + G * K,
        "UCC": G * a + 1,
        "UCU": G * a + K,
        "UUC": G * a + G,
        "UUU": G * a + G * K,
    }
    return int(rows[code] + (G - 1) + K)


def ari_by_pairs(a, b):
    n = len(a)
    pairs = list(itertools.combinations(range(n), 2))
    index = sum(a[i] == a[j] and b[i] == b[j] for i, j in pairs)
    sa = sum(a[i] == a[j] for i, j in pairs)
    sb = sum(b[i] == b[j] for i, j in pairs)
    total = len(pairs)
    expected = sa * sb / total
    max_index = (sa + sb) / 2
    if max_index == expected:
        return 1.0
    return (index - expected) / (max_index - expected)
