"""``treejog`` command line.

Exit codes: 0 success, 1 input error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from . import ctmc, pca, pipeline
from .core import read_matrix_csv, write_matrix_csv
from .errors import EmptySimulationError, InputError, NumericalError
from .jog import clade_locations, count_patterns, kde_2d, project_tree
from .nexus import NexusTreeLog, parse_nexus, write_nexus
from .sim import BorrowScenario, DolloConfig, simulate
from .viz import PlotSpec, render_kde, render_tree


def _version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:  # pragma: no cover
        return "0+unknown"


def _read(path) -> str:
    if path == "-":
        return sys.stdin.read()
    return Path(path).read_text(encoding="utf-8")


def _emit(text: str, path) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8", newline="\n")


def _load_log(path, tag="states") -> NexusTreeLog:
    return parse_nexus(_read(path), tag)


def _floats(text: str, n: int, what: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise InputError(f"{what} must be {n} comma-separated numbers") from None
    if len(vals) != n:
        raise InputError(f"{what} must be {n} comma-separated numbers")
    return vals


# --- subcommands -----------------------------------------------------------

def cmd_simulate(args):
    if args.tree in ("skewed", "balanced"):
        tree = pipeline.make_tree(args.tree, args.leaves, args.depth)
    else:
        tree = _load_log(args.tree).select("first")[1].tree
    config = DolloConfig(args.loss, args.mean_traits, args.birth_rate, args.seed)
    if args.borrow == "none":
        scenario = BorrowScenario()
    else:
        limit = args.limit if args.borrow == "local" else None
        if args.borrow_rate is not None:
            scenario = BorrowScenario(args.borrow, limit, borrow_rate=args.borrow_rate,
                                      replacement=not args.no_replacement)
        else:
            scenario = BorrowScenario(args.borrow, limit, target_borrow_fraction=args.borrow_fraction,
                                      replacement=not args.no_replacement)
    res = simulate(tree, config, scenario)
    if args.out_matrix:
        _emit(write_matrix_csv(res.matrix), args.out_matrix)
    if args.out_truth:
        _emit(write_nexus(NexusTreeLog(samples=[("truth", res.truth)])), args.out_truth)
    if args.out_events:
        _emit(res.events.to_csv(), args.out_events)
    print(f"{res.matrix.n} languages x {res.matrix.p} traits; root traits {res.root_trait_count}; "
          f"borrow rate {res.borrow_rate:.6g}", file=sys.stderr)


def cmd_ancestral(args):
    tree = _load_log(args.tree).select(args.tree_index)[1].tree
    matrix = read_matrix_csv(_read(args.matrix)).reorder(tree.leaf_labels)
    if args.fit_rates:
        rates = ctmc.fit_rates(tree, matrix, symmetric=not args.asymmetric, time_scale=args.time_scale)
    else:
        if args.alpha is None or args.beta is None:
            raise InputError("give --alpha and --beta, or --fit-rates")
        rates = ctmc.CtmcRates(args.alpha, args.beta)
    samples = ctmc.ffbs_samples(tree, rates, matrix, args.samples, seed=args.seed, time_scale=args.time_scale)
    out = NexusTreeLog(samples=[(f"STATE_{k}", s) for k, s in enumerate(samples)])
    _emit(write_nexus(out), args.out)
    print(f"alpha={rates.alpha:.6g} beta={rates.beta:.6g}", file=sys.stderr)


def cmd_pca(args):
    matrix = read_matrix_csv(_read(args.matrix))
    model = pca.fit(matrix, args.components, impute="mean" if args.mean_impute else "refuse")
    _emit(model.to_json(), args.out)


def _model(path) -> pca.PcaModel:
    return pca.PcaModel.from_json(_read(path))


def cmd_jog(args):
    sid, sample = _load_log(args.tree, args.tag).select(args.sample_index)
    model = _model(args.model)
    report = pipeline.analyze_sample(sample, model, args.component)
    doc = report.to_dict()
    doc["sample_id"] = sid
    _emit(json.dumps(doc, indent=1, sort_keys=True) + "\n", args.out)


def cmd_patterns(args):
    tlog = _load_log(args.tree, args.tag)
    samples = tlog.samples if args.sample_index == "all" else [tlog.select(args.sample_index)]
    doc = {sid: count_patterns(s) for sid, s in samples}
    _emit(json.dumps(doc, indent=1, sort_keys=True) + "\n", args.out)


def cmd_kde(args):
    tlog = _load_log(args.tree, args.tag)
    model = _model(args.model)
    clade = [c.strip() for c in args.clade.split(",") if c.strip()]
    locs = clade_locations(tlog, clade, model)
    pts = np.array([loc.coords[:2] for loc in locs])
    bw = "auto" if args.bandwidth == "auto" else float(args.bandwidth)
    bounds = tuple(_floats(args.bounds, 4, "--bounds")) if args.bounds else None
    grid = kde_2d(pts, bw, (args.grid, args.grid, bounds))
    _emit(grid.to_csv(), args.out)
    if args.svg:
        spec = PlotSpec(label_mode="none", explained=tuple(pca.explained_variance(model)))
        _emit(render_kde(grid, pts, spec), args.svg)
    flagged = sum(not loc.monophyletic for loc in locs)
    if flagged:
        print(f"{flagged} of {len(locs)} samples: clade not monophyletic", file=sys.stderr)


def cmd_plot(args):
    _, sample = _load_log(args.tree, args.tag).select(args.sample_index)
    model = _model(args.model)
    spec = PlotSpec(width=args.width, height=args.height,
                    viewport=tuple(_floats(args.zoom, 4, "--zoom")) if args.zoom else None,
                    label_mode=args.labels,
                    highlight=frozenset(h.strip() for h in (args.highlight or "").split(",") if h.strip()),
                    explained=tuple(float(x) for x in pca.explained_variance(model)),
                    invert_y=args.invert_y)
    _emit(render_tree(project_tree(sample, model), spec), args.out)


def cmd_synthetic(args):
    cfg = pipeline.load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.replicates is not None:
        cfg.replicates = args.replicates
    results = pipeline.run_synthetic(cfg, args.out)
    for r in results:
        print(f"{r.shape:9s} {r.scenario:10s} mean backtrack {np.mean(r.backtrack):.4f}")


def cmd_analyze(args):
    cfg = pipeline.load_config(args.config)
    if args.sample_index is not None:
        cfg.analysis.sample_index = args.sample_index
    if args.clade:
        cfg.analysis.clade = [c.strip() for c in args.clade.split(",") if c.strip()]
    res = pipeline.run_analysis(cfg, args.trees, args.out, args.matrix)
    print(f"sample {res['sample_id']}: mean backtrack {res['report'].aggregate_mean:.4f}, "
          f"max {res['report'].aggregate_max:.4f}")


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="treejog", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate stochastic-Dollo traits along a tree")
    p.add_argument("--tree", default="skewed", help="skewed, balanced or a NEXUS file")
    p.add_argument("--leaves", type=int, default=16)
    p.add_argument("--depth", type=float, default=10000.0)
    p.add_argument("--loss", type=float, default=0.2, help="losses per trait per 1000 years")
    p.add_argument("--mean-traits", type=float, default=200.0)
    p.add_argument("--birth-rate", type=float, default=None)
    p.add_argument("--borrow", choices=["none", "global", "local"], default="none")
    p.add_argument("--limit", type=float, default=1000.0, help="local borrowing time limit (years)")
    p.add_argument("--borrow-fraction", type=float, default=0.5)
    p.add_argument("--borrow-rate", type=float, default=None, help="raw rate; skips calibration")
    p.add_argument("--no-replacement", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-matrix")
    p.add_argument("--out-truth")
    p.add_argument("--out-events")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ancestral", help="sample ancestral states by FFBS")
    p.add_argument("--tree", required=True)
    p.add_argument("--tree-index", default="first")
    p.add_argument("--matrix", required=True)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--fit-rates", action="store_true")
    p.add_argument("--asymmetric", action="store_true")
    p.add_argument("--time-scale", type=float, default=1000.0, help="years per rate time unit")
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_ancestral)

    p = sub.add_parser("pca", help="fit PCA on a leaf matrix")
    p.add_argument("--matrix", required=True)
    p.add_argument("--components", type=int, default=2)
    p.add_argument("--mean-impute", action="store_true")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_pca)

    def tree_args(p):
        p.add_argument("--tree", required=True)
        p.add_argument("--tag", default="states")
        p.add_argument("--sample-index", default="last")

    p = sub.add_parser("jog", help="jogging report for one sample")
    tree_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--component", type=int, default=0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_jog)

    p = sub.add_parser("patterns", help="count grandparent-parent-child state patterns")
    tree_args(p)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_patterns)

    p = sub.add_parser("kde", help="density of a clade ancestor's location across samples")
    p.add_argument("--tree", required=True)
    p.add_argument("--tag", default="states")
    p.add_argument("--clade", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--bandwidth", default="auto")
    p.add_argument("--grid", type=int, default=100)
    p.add_argument("--bounds", help="x0,x1,y0,y1")
    p.add_argument("--svg")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_kde)

    p = sub.add_parser("plot", help="render a projected tree as SVG")
    tree_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--zoom", help="x0,x1,y0,y1")
    p.add_argument("--invert-y", action="store_true")
    p.add_argument("--labels", choices=["all", "leaves", "none"], default="leaves")
    p.add_argument("--highlight")
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("synthetic", help="simulation study over tree shapes and borrowing scenarios")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synthetic)

    p = sub.add_parser("analyze", help="analyse an external annotated tree log")
    p.add_argument("--trees", required=True, nargs="+", help="one log, or one per partition to merge")
    p.add_argument("--matrix")
    p.add_argument("--config")
    p.add_argument("--sample-index")
    p.add_argument("--clade")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (InputError, OSError) as e:
        print(f"treejog: error: {e}", file=sys.stderr)
        return 1
    except (NumericalError, EmptySimulationError) as e:
        print(f"treejog: numerical failure: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
