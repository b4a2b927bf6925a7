"""Count tables, label files, run configuration and result documents.

Count tables are delimited text: a header row whose first cell names the
sample-id column followed by one name per taxon, then one row per sample.
The last taxon column is the ALR reference. Results are JSON.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from .aecm import FitConfig, FitResult, InitSpec
from .compositional import CountMatrix
from .mixture import MODEL_CODES
from .selection import GridSpec, SelectionReport
from .varinf import NewtonConfig

FORMAT = "lnmfa-result/1"


def library_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _delimiter(path: Path, delimiter: str | None) -> str:
    if delimiter:
        return delimiter
    return "\t" if path.suffix.lower() in (".tsv", ".tab", ".txt") else ","


def read_counts(path, delimiter: str | None = None, reference: str | None = None) -> CountMatrix:
    """Read a delimited count table; ``reference`` moves that taxon to the last column."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter=_delimiter(path, delimiter)) if any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if len(header) < 3:
        raise ValueError(f"{path}: header needs a sample-id column and at least two taxa")
    if not body:
        raise ValueError(f"{path}: no samples after the header")
    taxa = tuple(h.strip() for h in header[1:])
    counts = np.empty((len(body), len(taxa)), dtype=np.int64)
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {i + 1} has {len(row)} fields, expected {len(header)}")
        for j, cell in enumerate(row[1:]):
            try:
                x = float(cell)
            except ValueError:
                raise ValueError(f"{path}: row {i + 1}, column {j + 1} ({taxa[j]}): not a number: {cell!r}") from None
            if not np.isfinite(x) or x < 0 or x != int(x):
                raise ValueError(f"{path}: row {i + 1}, column {j + 1} ({taxa[j]}): not a nonnegative integer: {cell!r}")
            counts[i, j] = int(x)
    samples = tuple(r[0].strip() for r in body)
    bad = np.flatnonzero(counts.sum(axis=1) == 0)
    if bad.size:
        raise ValueError(f"{path}: row {bad[0] + 1} ({samples[bad[0]]}) has zero total count")
    cm = CountMatrix(counts, taxa, samples)
    return cm.with_reference(reference) if reference else cm


def write_counts(cm: CountMatrix, path, delimiter: str | None = None, id_header: str = "sample_id"):
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh, delimiter=_delimiter(path, delimiter), lineterminator="\n")
        wr.writerow([id_header, *cm.taxa_names])
        for sid, row in zip(cm.sample_ids, cm.counts):
            wr.writerow([sid, *(int(x) for x in row)])


def write_labels(labels, path, sample_ids=None):
    labels = np.asarray(labels)
    ids = sample_ids if sample_ids is not None else [f"sample{i + 1}" for i in range(labels.size)]
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["sample_id", "label"])
        for sid, lab in zip(ids, labels):
            wr.writerow([sid, lab.item() if hasattr(lab, "item") else lab])


def read_labels(path) -> list[str]:
    """Labels from a ``sample_id,label`` file or from a file of one label per line."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError(f"{path}: empty label file")
    if [c.strip().lower() for c in rows[0]] == ["sample_id", "label"]:
        rows = rows[1:]
        return [r[1].strip() for r in rows]
    if any(len(r) != 1 for r in rows):
        raise ValueError(f"{path}: expected one label per line or a sample_id,label table")
    return [r[0].strip() for r in rows]


@dataclass
class RunConfig:
    """Everything a CLI run depends on; echoed verbatim into result files."""

    eps: float = 1e-2
    max_sweeps: int = 500
    newton_max_iters: int = 20
    newton_grad_tol: float = 1e-6
    newton_step_halvings: int = 30
    v_floor: float = 1e-4
    retries: int = 3
    seeds: tuple = (0, 1, 2)
    init: str = "gmm"
    v_init: float = float(np.sqrt(0.1))
    pseudo: float = 0.001
    param_count: str = "free"
    workers: int = 1
    G_values: tuple = (1, 2, 3)
    q_values: tuple = (1, 2, 3)
    models: tuple = MODEL_CODES
    input: str | None = None
    output: str | None = None
    reference: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("eps", "newton_grad_tol", "v_floor", "v_init", "pseudo"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not self.seeds:
            raise ValueError("need at least one seed")

    def newton(self) -> NewtonConfig:
        return NewtonConfig(self.newton_max_iters, self.newton_grad_tol, self.newton_step_halvings, self.v_floor)

    def fit_config(self) -> FitConfig:
        return FitConfig(
            eps=self.eps, max_sweeps=self.max_sweeps, newton=self.newton(), retries=self.retries, param_count=self.param_count
        )

    def init_spec(self, seed: int | None = None) -> InitSpec:
        return InitSpec(self.init, self.seeds[0] if seed is None else seed, v_init=self.v_init, pseudo=self.pseudo)

    def grid(self) -> GridSpec:
        return GridSpec(tuple(self.G_values), tuple(self.q_values), tuple(self.models), tuple(self.seeds))

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("seeds", "G_values", "q_values", "models"):
            d[k] = list(d[k])
        return d


def _arr(x):
    return None if x is None else np.asarray(x).tolist()


def fit_to_dict(fit: FitResult, sample_ids=None) -> dict:
    return {
        "model": fit.model,
        "G": fit.G,
        "q": fit.q,
        "seed": fit.seed,
        "attempts": fit.attempts,
        "converged": fit.converged,
        "n_sweeps": fit.n_sweeps,
        "objective": fit.objective,
        "bic": fit.bic,
        "n_params": fit.n_params,
        "pi": _arr(fit.pi),
        "mu": _arr(fit.mu),
        "Lambda": _arr(fit.Lambda),
        "D": _arr(fit.D),
        "Sigma": _arr(fit.Sigma),
        "labels": _arr(fit.labels),
        "resp": _arr(fit.resp),
        "sample_ids": list(sample_ids) if sample_ids is not None else None,
        "trace": list(map(float, fit.trace)),
    }


def result_document(result: FitResult | SelectionReport, config: RunConfig | None = None, sample_ids=None) -> dict:
    doc = {"format": FORMAT, "version": library_version(), "config": (config or RunConfig()).to_dict()}
    if isinstance(result, SelectionReport):
        doc["kind"] = "selection"
        doc["selection"] = result.to_dict()
        doc["fit"] = fit_to_dict(result.best_fit, sample_ids)
    else:
        doc["kind"] = "fit"
        doc["fit"] = fit_to_dict(result, sample_ids)
    return doc


def write_result(result: FitResult | SelectionReport, path, config: RunConfig | None = None, sample_ids=None):
    doc = result_document(result, config, sample_ids)
    with Path(path).open("w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    return doc


def read_result(path) -> dict:
    """Load a result document; array fields of the fit come back as numpy arrays."""
    with Path(path).open() as fh:
        doc = json.load(fh)
    if doc.get("format") != FORMAT:
        raise ValueError(f"{path}: not a result document (format {doc.get('format')!r})")
    fit = doc["fit"]
    for k in ("pi", "mu", "Lambda", "D", "Sigma", "resp", "trace"):
        fit[k] = np.asarray(fit[k], dtype=float)
    fit["labels"] = np.asarray(fit["labels"], dtype=int)
    return doc
