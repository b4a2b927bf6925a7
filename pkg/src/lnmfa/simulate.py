"""Synthetic count data from a mixture of logistic normal multinomial factor analyzers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .compositional import CountMatrix, alr_inv
from .mixture import ComponentParams


@dataclass(frozen=True)
class SimSpec:
    pi: tuple
    components: tuple
    n: int = 1000
    total_range: tuple = (5000, 10000)
    seed: int = 0

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        if abs(pi.sum() - 1.0) > 1e-12 or np.any(pi <= 0):
            raise ValueError("pi must be positive and sum to 1")
        if len(self.components) != pi.size:
            raise ValueError(f"{len(self.components)} components for {pi.size} mixing proportions")
        lo, hi = self.total_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad total range {self.total_range}")
        if self.n < 1:
            raise ValueError("n must be >= 1")

    @property
    def G(self):
        return len(self.components)

    @property
    def K(self):
        return self.components[0].mu.size

    def with_(self, **kw) -> "SimSpec":
        from dataclasses import replace

        return replace(self, **kw)


@dataclass(frozen=True)
class SimOutput:
    counts: CountMatrix
    true_labels: np.ndarray  # 1..G
    true_y: np.ndarray


def generate(spec: SimSpec) -> SimOutput:
    """Draw label, latent y, total and counts for each observation in turn."""
    rng = np.random.default_rng(spec.seed)
    pi = np.asarray(spec.pi, dtype=float)
    chols = [np.linalg.cholesky(c.Sigma) for c in spec.components]
    lo, hi = spec.total_range
    K = spec.K
    labels = np.empty(spec.n, dtype=int)
    Y = np.empty((spec.n, K))
    W = np.empty((spec.n, K + 1), dtype=np.int64)
    for i in range(spec.n):
        g = rng.choice(spec.G, p=pi)
        y = spec.components[g].mu + chols[g] @ rng.standard_normal(K)
        total = rng.integers(lo, hi + 1)
        W[i] = rng.multinomial(total, alr_inv(y))
        labels[i] = g + 1
        Y[i] = y
    return SimOutput(CountMatrix(W), labels, Y)


_LAMBDA_1 = [
    [-0.003, 0.386, -0.242],
    [-0.278, 0.090, 0.128],
    [-0.131, 0.187, 0.375],
    [0.424, 0.092, -0.983],
    [0.038, -0.796, -0.423],
    [0.275, 0.062, 0.242],
    [-0.222, 0.204, -0.574],
    [-0.100, 0.116, -0.265],
    [0.284, 0.422, -0.205],
    [0.030, -0.353, 0.153],
]
_LAMBDA_2 = [
    [-0.426, -0.289, 0.050],
    [-0.070, 0.267, 0.120],
    [0.126, -0.184, -0.140],
    [0.276, -0.690, 0.394],
    [0.085, -0.243, -0.400],
    [-0.137, 0.104, -0.305],
    [0.400, 0.491, -0.434],
    [0.199, 0.334, 0.054],
    [0.167, 0.022, -0.167],
    [0.299, -0.133, -0.338],
]
_LAMBDA_3 = [
    [0.082, -0.167, 0.050],
    [0.146, 0.123, -0.033],
    [0.164, -0.075, -0.142],
    [-0.107, -0.062, 0.002],
    [0.086, 0.054, -0.143],
    [-0.078, -0.051, 0.155],
    [-0.074, -0.252, -0.048],
    [-0.059, 0.112, 0.076],
    [0.047, 0.054, -0.019],
    [0.220, -0.122, -0.026],
]

STUDY1_MU = [
    [-0.17, 0.03, 0.08, 0.24, 0.24, -0.06, -0.03, 0.14, -0.11, 0.14],
    [0.33, 0.63, 0.44, 0.60, 0.32, 0.52, 0.39, 0.50, 0.51, 0.45],
    [-0.59, -0.66, -0.55, -0.45, -0.60, -0.68, -0.53, -0.41, -0.65, -0.46],
]
STUDY2_MU = [
    [0.16, -0.13, 0.06, 0.13, 0.00, -0.06, -0.02, -0.11, 0.00, 0.03],
    [0.79, 1.01, 0.66, 0.76, 0.86, 0.83, 0.66, 0.68, 0.85, 0.84],
    [-0.77, -0.89, -0.88, -0.78, -0.71, -0.89, -0.86, -0.82, -0.86, -0.80],
]
STUDY2_D = [
    [0.03, 0.004, 0.028, 0.015, 0.005, 0.029, 0.003, 0.016, 0.014, 0.015],
    [0.004, 0.03, 0.015, 0.003, 0.029, 0.015, 0.028, 0.03, 0.005, 0.03],
    [0.022, 0.006, 0.03, 0.018, 0.011, 0.002, 0.004, 0.015, 0.025, 0.005],
]


def builtin_specs(n: int = 1000, seed: int = 0) -> dict[str, SimSpec]:
    """The two ten-dimensional, three-component simulation designs.

    ``study1`` shares one set of loadings and an isotropic noise 0.01 I across
    components (a CCC truth); ``study2`` has component-specific loadings and
    diagonal noise (a UUU truth).
    """
    lam1 = np.array(_LAMBDA_1)
    study1 = SimSpec(
        pi=(0.5, 0.3, 0.2),
        components=tuple(ComponentParams(np.array(mu), lam1.copy(), np.full(10, 0.01)) for mu in STUDY1_MU),
        n=n,
        seed=seed,
    )
    study2 = SimSpec(
        pi=(0.5, 0.3, 0.2),
        components=tuple(
            ComponentParams(np.array(mu), np.array(lam), np.array(d))
            for mu, lam, d in zip(STUDY2_MU, (_LAMBDA_1, _LAMBDA_2, _LAMBDA_3), STUDY2_D)
        ),
        n=n,
        seed=seed,
    )
    return {"study1": study1, "study2": study2}
