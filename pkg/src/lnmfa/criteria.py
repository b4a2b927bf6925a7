"""Convergence test, parameter counts, BIC and the adjusted Rand index."""

from __future__ import annotations

import math

import numpy as np

from .mixture import as_model


def aitken_estimate(l_prev2, l_prev, l_curr):
    """Aitken-extrapolated limit of the objective sequence, or None.

    None is returned when the acceleration is >= 1 (no contraction) or the
    previous increment is zero while the current one is not.
    """
    num = l_curr - l_prev
    den = l_prev - l_prev2
    if den == 0.0:
        return l_curr if num == 0.0 else None
    a = num / den
    if not np.isfinite(a) or a >= 1.0:
        return None
    return l_prev + num / (1.0 - a)


def aitken_converged(l_prev2, l_prev, l_curr, eps: float = 1e-2, l_inf_prev=None) -> bool:
    """Aitken stopping rule.

    With ``l_inf_prev`` (the estimate from the previous step) the test is
    ``|l_inf_new - l_inf_prev| < eps``; without it the new estimate is compared
    against ``l_curr``.
    """
    l_inf = aitken_estimate(l_prev2, l_prev, l_curr)
    if l_inf is None:
        return False
    ref = l_curr if l_inf_prev is None else l_inf_prev
    return abs(l_inf - ref) < eps


def count_params(model, G: int, K: int, q: int) -> int:
    """Free parameters of a fitted model, as tabulated for the family."""
    model = as_model(model)
    loadings = K * q - q * (q - 1) // 2
    n_lambda = loadings if model.lambda_shared else G * loadings
    if model.d_shared:
        n_d = 1 if model.d_isotropic else K
    else:
        n_d = G if model.d_isotropic else K * G
    return n_lambda + n_d + (G - 1) + K


PARAM_COUNTS = ("free", "table")


def free_params(model, G: int, K: int, q: int, convention: str = "free") -> int:
    """Parameter count used for BIC.

    ``"table"`` is the tabulated count, which adds K for the means whatever
    G is. ``"free"`` counts all G mean vectors, i.e. ``(G - 1) * K`` more;
    that is the number of free parameters of the fitted mixture.
    """
    if convention not in PARAM_COUNTS:
        raise ValueError(f"unknown parameter-count convention {convention!r}; choose from {PARAM_COUNTS}")
    p = count_params(model, G, K, q)
    return p + (G - 1) * K if convention == "free" else p


def bic(objective: float, p: int, n: int) -> float:
    """2 * objective - p * log(n); larger is better."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return 2.0 * objective - p * math.log(n)


def ari(labels_a, labels_b) -> float:
    """Adjusted Rand index between two labelings of the same items."""
    a = np.asarray(labels_a).ravel()
    b = np.asarray(labels_b).ravel()
    if a.shape != b.shape:
        raise ValueError(f"label vectors differ in length: {a.size} vs {b.size}")
    n = a.size
    if n < 2:
        return 1.0
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)

    def pairs(x):
        x = x.astype(np.int64)
        return int(np.sum(x * (x - 1) // 2))

    index = pairs(table)
    rows = pairs(table.sum(axis=1))
    cols = pairs(table.sum(axis=0))
    total = n * (n - 1) // 2
    expected = rows * cols / total
    max_index = 0.5 * (rows + cols)
    if max_index == expected:
        # both partitions trivial (all singletons or one block): agreement is perfect
        return 1.0
    return (index - expected) / (max_index - expected)
