"""Model selection over a (G, q, model) grid by BIC."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from .aecm import FitConfig, FitResult, InitSpec, attempt_seed, fit_aecm, initial_partition
from .compositional import initial_latent
from .criteria import aitken_converged, aitken_estimate, ari, bic, count_params, free_params  # noqa: F401
from .errors import FitFailure
from .mixture import MODEL_CODES, CountData, ModelConstraint, as_model

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GridSpec:
    G_values: tuple = (1, 2, 3)
    q_values: tuple = (1, 2, 3)
    models: tuple = MODEL_CODES
    seeds: tuple = (0, 1, 2)

    def __post_init__(self):
        for name in ("G_values", "q_values", "models", "seeds"):
            if not len(getattr(self, name)):
                raise ValueError(f"{name} must not be empty")
        if min(self.q_values) < 1 or min(self.G_values) < 1:
            raise ValueError("G and q values must be >= 1")
        object.__setattr__(self, "models", tuple(as_model(m).code for m in self.models))

    def cells(self, K: int | None = None):
        for G, q, model in product(self.G_values, self.q_values, self.models):
            if K is None or q <= K:
                yield G, q, model


@dataclass
class CellResult:
    G: int
    q: int
    model: str
    bic: float | None = None
    objective: float | None = None
    converged: bool = False
    sweeps: int = 0
    n_params: int | None = None
    seed: int | None = None
    seed_objectives: dict = field(default_factory=dict)
    error: str | None = None
    fit: FitResult | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def key(self):
        return (self.G, self.q, self.model)

    def to_dict(self):
        return {
            "G": self.G,
            "q": self.q,
            "model": self.model,
            "bic": self.bic,
            "objective": self.objective,
            "converged": self.converged,
            "sweeps": self.sweeps,
            "n_params": self.n_params,
            "seed": self.seed,
            "seed_objectives": {str(k): v for k, v in self.seed_objectives.items()},
            "error": self.error,
        }


@dataclass
class SelectionReport:
    cells: list[CellResult]
    winner: CellResult

    @property
    def best_fit(self) -> FitResult:
        return self.winner.fit

    def cell(self, G, q, model) -> CellResult:
        model = as_model(model).code
        for c in self.cells:
            if c.key == (G, q, model):
                return c
        raise KeyError((G, q, model))

    def to_dict(self):
        return {
            "winner": {"G": self.winner.G, "q": self.winner.q, "model": self.winner.model, "bic": self.winner.bic},
            "cells": [c.to_dict() for c in self.cells],
        }


def _canonical(labels) -> tuple:
    first: dict = {}
    return tuple(first.setdefault(int(x), len(first)) for x in labels)


def fit_cell(data: CountData, G: int, q: int, model: str, seeds, init: InitSpec, cfg: FitConfig) -> CellResult:
    """Fit one cell from every seed and keep the best objective.

    Seeds whose starting partitions coincide (up to relabelling) share one
    fit, since the engine is deterministic given the partition.
    """
    cell = CellResult(G, q, model)
    Y = initial_latent(data.w, init.pseudo) if init.method != "labels" else None
    done: dict = {}
    errors = []
    best: FitResult | None = None
    for seed in seeds:
        spec = replace(init, seed=seed)
        key = None
        if Y is not None:
            key = _canonical(initial_partition(Y, G, spec))
        if key is not None and key in done:
            res = done[key]
        else:
            try:
                res = fit_aecm(data, G, q, model, spec, cfg)
                res.state = None
            except FitFailure as exc:
                res = exc
            if key is not None:
                done[key] = res
        if isinstance(res, FitFailure):
            errors.append(f"seed {seed}: {res}")
            continue
        cell.seed_objectives[seed] = res.objective
        if best is None or res.objective > best.objective:
            best = res
            cell.seed = seed
    if best is None:
        cell.error = "; ".join(errors)
        return cell
    cell.fit = best
    cell.bic = best.bic
    cell.objective = best.objective
    cell.converged = best.converged
    cell.sweeps = best.n_sweeps
    cell.n_params = best.n_params
    return cell


def _fit_cell_job(args):
    return fit_cell(*args)


def _rank_key(c: CellResult):
    # larger BIC first, then fewer parameters, lower G, lower q
    return (-c.bic, c.n_params, c.G, c.q, c.model)


def pick_winner(cells: list[CellResult]) -> CellResult:
    ok = [c for c in cells if c.ok]
    if not ok:
        raise FitFailure(
            "every grid cell failed: " + " | ".join(f"{c.model} G={c.G} q={c.q}: {c.error}" for c in cells),
            [c.error for c in cells],
        )
    pool = [c for c in ok if c.converged] or ok
    return min(pool, key=_rank_key)


def grid_search(w, spec: GridSpec, cfg: FitConfig | None = None, init: InitSpec | None = None, workers: int = 1):
    """Fit every cell of ``spec`` and select the BIC winner among converged cells.

    Cells with no converged fit are only considered when nothing converged.
    """
    cfg = cfg or FitConfig()
    init = init or InitSpec()
    data = w if isinstance(w, CountData) else CountData.from_counts(w)
    jobs = [
        (data, G, q, model, tuple(spec.seeds), init, cfg)
        for G, q, model in spec.cells(data.K)
        if G < data.n
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_fit_cell_job, jobs))
    else:
        cells = [_fit_cell_job(j) for j in jobs]
    winner = pick_winner(cells)
    for c in cells:
        if c is not winner and c.fit is not None:
            c.fit.resp = None
    return SelectionReport(cells, winner)


__all__ = [
    "GridSpec",
    "CellResult",
    "SelectionReport",
    "grid_search",
    "fit_cell",
    "pick_winner",
    "aitken_converged",
    "aitken_estimate",
    "count_params",
    "free_params",
    "bic",
    "ari",
    "ModelConstraint",
    "attempt_seed",
]
