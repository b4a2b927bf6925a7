"""Additive log-ratio geometry and count-matrix hygiene.

The last coordinate of every composition is the ALR reference. Callers that
want a different reference taxon must reorder columns first (see
:meth:`CountMatrix.with_reference`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class DomainError(ValueError):
    """Input lies outside the domain of a transform."""


def alr(p):
    """Map compositions (last entry = reference) to log-ratio coordinates.

    Accepts a single composition of length K+1 or an array of them stacked
    along the last axis.
    """
    p = np.asarray(p, dtype=float)
    if p.shape[-1] < 2:
        raise DomainError("a composition needs at least two parts")
    bad = np.argwhere(~(p > 0))
    if bad.size:
        idx = tuple(int(i) for i in bad[0])
        where = idx[0] if len(idx) == 1 else idx
        raise DomainError(f"composition entry at index {where} is not strictly positive")
    logp = np.log(p)
    return logp[..., :-1] - logp[..., -1:]


def alr_inv(y):
    """Inverse ALR: log-ratio coordinates back onto the open simplex.

    The implicit reference coordinate contributes exp(0) = 1 to the
    normaliser; everything is shifted by the running max so that large
    coordinates do not overflow.
    """
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise DomainError("log-ratio coordinates must be finite")
    full = np.concatenate([y, np.zeros(y.shape[:-1] + (1,))], axis=-1)
    shift = full.max(axis=-1, keepdims=True)
    e = np.exp(full - shift)
    return e / e.sum(axis=-1, keepdims=True)


def replace_zeros(w, pseudo: float = 0.001):
    """Swap zero counts for ``pseudo``. For initialisation only."""
    if not pseudo > 0:
        raise ValueError(f"pseudo-count must be positive, got {pseudo}")
    w = np.asarray(getattr(w, "counts", w), dtype=float)
    return np.where(w == 0, pseudo, w)


def closure(x):
    """Rescale rows to sum to one."""
    x = np.asarray(x, dtype=float)
    return x / x.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class CountMatrix:
    """n samples by K+1 taxa of nonnegative integer counts.

    The last column is the ALR reference.
    """

    counts: np.ndarray
    taxa_names: tuple[str, ...] = field(default=())
    sample_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        w = np.asarray(self.counts)
        if w.ndim != 2:
            raise ValueError(f"counts must be 2-D, got shape {w.shape}")
        if w.shape[1] < 2:
            raise ValueError("need at least two taxa (one plus the reference)")
        if not np.all(np.isfinite(w)) or np.any(w < 0) or np.any(w != np.round(w)):
            r, c = np.argwhere(~np.isfinite(w) | (w < 0) | (w != np.round(w)))[0]
            raise ValueError(f"cell (row {r}, col {c}) is not a nonnegative integer: {w[r, c]}")
        w = w.astype(np.int64)
        zero_rows = np.flatnonzero(w.sum(axis=1) < 1)
        if zero_rows.size:
            raise ValueError(f"sample at row {zero_rows[0]} has zero total count")
        taxa = tuple(self.taxa_names) or tuple(f"taxon{j + 1}" for j in range(w.shape[1]))
        samples = tuple(self.sample_ids) or tuple(f"sample{i + 1}" for i in range(w.shape[0]))
        if len(taxa) != w.shape[1]:
            raise ValueError(f"{len(taxa)} taxa names for {w.shape[1]} columns")
        if len(samples) != w.shape[0]:
            raise ValueError(f"{len(samples)} sample ids for {w.shape[0]} rows")
        w.setflags(write=False)
        object.__setattr__(self, "counts", w)
        object.__setattr__(self, "taxa_names", taxa)
        object.__setattr__(self, "sample_ids", samples)

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    @property
    def K(self) -> int:
        """Latent dimension (number of taxa minus the reference)."""
        return self.counts.shape[1] - 1

    @property
    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def compositions(self) -> np.ndarray:
        return closure(self.counts)

    def with_reference(self, name: str) -> "CountMatrix":
        """Move taxon ``name`` to the last (reference) column."""
        if name not in self.taxa_names:
            raise KeyError(f"unknown taxon {name!r}")
        j = self.taxa_names.index(name)
        order = [k for k in range(len(self.taxa_names)) if k != j] + [j]
        return CountMatrix(self.counts[:, order], tuple(self.taxa_names[k] for k in order), self.sample_ids)

    def subset(self, rows: Sequence[int]) -> "CountMatrix":
        rows = list(rows)
        return CountMatrix(self.counts[rows], self.taxa_names, tuple(self.sample_ids[i] for i in rows))


def initial_latent(w, pseudo: float = 0.001) -> np.ndarray:
    """ALR of the zero-replaced observed compositions, one row per sample."""
    return alr(closure(replace_zeros(w, pseudo)))
