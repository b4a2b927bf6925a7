"""Command-line interface: simulate, fit, select, ari, info.

Exit codes: 0 success, 1 numeric or degenerate fit failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .aecm import fit_aecm
from .criteria import ari
from .errors import FitFailure, NumericError
from .mixture import MODEL_CODES, CountData
from .selection import grid_search
from .simulate import builtin_specs, generate


class UsageError(Exception):
    pass


def parse_range(text: str) -> tuple[int, ...]:
    """``3``, ``1..4`` (inclusive) or a comma list such as ``1,3..5``."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        try:
            if ".." in part:
                lo, hi = (int(x) for x in part.split("..", 1))
                if lo > hi:
                    raise ValueError
                out.extend(range(lo, hi + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad range {text!r}; use a..b, a comma list or an integer") from None
    return tuple(dict.fromkeys(out))


def parse_models(text: str) -> tuple[str, ...]:
    if text.strip().lower() == "all":
        return MODEL_CODES
    codes = tuple(c.strip().upper() for c in text.split(",") if c.strip())
    bad = [c for c in codes if c not in MODEL_CODES]
    if bad or not codes:
        raise argparse.ArgumentTypeError(f"unknown model code(s) {bad}; choose from {', '.join(MODEL_CODES)} or 'all'")
    return codes


def _add_fit_options(p):
    p.add_argument("--input", "-i", required=True, help="count table (CSV, or TSV by extension)")
    p.add_argument("--reference", help="taxon to use as the ALR reference (default: last column)")
    p.add_argument("--delimiter", help="field delimiter (default from extension)")
    p.add_argument("--out", "-o", help="write the JSON result document here")
    p.add_argument("--labels-out", help="write hard labels of the fit here")
    p.add_argument("--init", choices=("gmm", "kmeans", "random"), default="gmm", help="starting partition (default gmm)")
    p.add_argument("--eps", type=float, default=1e-2, help="Aitken tolerance (default 1e-2)")
    p.add_argument("--max-sweeps", type=int, default=500)
    p.add_argument("--newton-iters", type=int, default=20)
    p.add_argument("--newton-tol", type=float, default=1e-6)
    p.add_argument("--retries", type=int, default=3, help="restarts after a degenerate start")
    p.add_argument(
        "--param-count",
        choices=("free", "table"),
        default="free",
        help="BIC parameter count: all G mean vectors (free, default) or the tabulated count (table)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lnmfa", description="Mixtures of logistic normal multinomial factor analyzers.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic count table")
    p.add_argument("--builtin", choices=("study1", "study2"), required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", "-o", required=True, help="count table path")
    p.add_argument("--labels-out", help="true labels (default: <out stem>.labels.csv)")
    p.add_argument("--latent-out", help="optionally write the latent log-ratios")

    p = sub.add_parser("fit", help="fit one (G, q, model) cell")
    _add_fit_options(p)
    p.add_argument("--G", type=int, required=True)
    p.add_argument("--q", type=int, required=True)
    p.add_argument("--model", type=lambda s: parse_models(s)[0], default="UUU")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("select", help="grid search over G, q and models by BIC")
    _add_fit_options(p)
    p.add_argument("--G", type=parse_range, default=(1, 2, 3), help="e.g. 1..4")
    p.add_argument("--q", type=parse_range, default=(1, 2, 3), help="e.g. 1..4")
    p.add_argument("--models", type=parse_models, default=MODEL_CODES, help="'all' or a comma list such as UUU,CCC")
    p.add_argument("--seeds", type=parse_range, default=(0, 1, 2), help="restart seeds per cell (default 0..2)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--table", action="store_true", help="print every cell, not just the winner")

    p = sub.add_parser("ari", help="adjusted Rand index between two label files")
    p.add_argument("a")
    p.add_argument("b")

    p = sub.add_parser("info", help="print built-in simulation parameters")
    p.add_argument("name", nargs="?", choices=("study1", "study2"))
    return parser


def _run_config(args, **kw) -> io.RunConfig:
    return io.RunConfig(
        eps=args.eps,
        max_sweeps=args.max_sweeps,
        newton_max_iters=args.newton_iters,
        newton_grad_tol=args.newton_tol,
        retries=args.retries,
        param_count=args.param_count,
        init=args.init,
        input=str(args.input),
        output=args.out,
        reference=args.reference,
        **kw,
    )


def _load(args):
    try:
        return io.read_counts(args.input, args.delimiter, args.reference)
    except (OSError, KeyError) as exc:
        raise UsageError(str(exc)) from exc


def _summary(fit) -> str:
    status = "converged" if fit.converged else "NOT converged"
    return (
        f"{fit.model} G={fit.G} q={fit.q}: BIC={fit.bic:.3f} objective={fit.objective:.3f} "
        f"params={fit.n_params} sweeps={fit.n_sweeps} ({status}) pi={np.round(fit.pi, 4).tolist()}"
    )


def cmd_simulate(args, out):
    spec = builtin_specs(n=args.n, seed=args.seed)[args.builtin]
    sim = generate(spec)
    path = Path(args.out)
    io.write_counts(sim.counts, path)
    labels_path = Path(args.labels_out) if args.labels_out else path.with_name(path.stem + ".labels.csv")
    io.write_labels(sim.true_labels, labels_path, sim.counts.sample_ids)
    if args.latent_out:
        np.savetxt(args.latent_out, sim.true_y, delimiter=",")
    print(f"wrote {sim.counts.n} samples x {sim.counts.K + 1} taxa to {path}; labels to {labels_path}", file=out)


def cmd_fit(args, out):
    if args.G < 1 or args.q < 1:
        raise UsageError("G and q must be >= 1")
    cm = _load(args)
    if args.q > cm.K:
        raise UsageError(f"q={args.q} exceeds the latent dimension K={cm.K}")
    cfg = _run_config(args, seeds=(args.seed,), G_values=(args.G,), q_values=(args.q,), models=(args.model,))
    fit = fit_aecm(CountData.from_counts(cm.counts), args.G, args.q, args.model, cfg.init_spec(args.seed), cfg.fit_config())
    print(_summary(fit), file=out)
    _write_outputs(args, fit, cfg, cm)


def cmd_select(args, out):
    if min(args.G) < 1 or min(args.q) < 1:
        raise UsageError("G and q must be >= 1")
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    cm = _load(args)
    cfg = _run_config(args, seeds=args.seeds, G_values=args.G, q_values=args.q, models=args.models, workers=args.workers)
    grid = cfg.grid()
    n_cells = sum(1 for _ in grid.cells(cm.K))
    print(f"fitting {n_cells} cells x {len(grid.seeds)} seeds", file=out)
    report = grid_search(cm.counts, grid, cfg.fit_config(), cfg.init_spec(), workers=args.workers)
    if args.table:
        for c in report.cells:
            bic = f"{c.bic:.3f}" if c.bic is not None else "failed"
            print(f"  {c.model} G={c.G} q={c.q} BIC={bic} converged={c.converged} sweeps={c.sweeps}", file=out)
    print("winner: " + _summary(report.best_fit), file=out)
    _write_outputs(args, report, cfg, cm)


def _write_outputs(args, result, cfg, cm):
    fit = result.best_fit if hasattr(result, "best_fit") else result
    if args.out:
        io.write_result(result, args.out, cfg, cm.sample_ids)
    if args.labels_out:
        io.write_labels(fit.labels, args.labels_out, cm.sample_ids)


def cmd_ari(args, out):
    try:
        a, b = io.read_labels(args.a), io.read_labels(args.b)
    except OSError as exc:
        raise UsageError(str(exc)) from exc
    if len(a) != len(b):
        raise UsageError(f"label files differ in length: {len(a)} vs {len(b)}")
    print(repr(float(ari(a, b))), file=out)


def cmd_info(args, out):
    specs = builtin_specs()
    names = [args.name] if args.name else list(specs)
    doc = {}
    for name in names:
        s = specs[name]
        doc[name] = {
            "pi": list(s.pi),
            "n": s.n,
            "total_range": list(s.total_range),
            "components": [
                {"mu": c.mu.tolist(), "Lambda": np.asarray(c.Lambda).tolist(), "D": np.asarray(c.D).tolist()}
                for c in s.components
            ],
        }
    print(json.dumps(doc, indent=1), file=out)


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "select": cmd_select, "ari": cmd_ari, "info": cmd_info}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args, out)
    except (UsageError, ValueError) as exc:
        print(f"lnmfa {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (FitFailure, NumericError, np.linalg.LinAlgError) as exc:
        print(f"lnmfa {args.command}: fit failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
