"""End-to-end workflows: synthetic simulation study and analysis of external tree logs."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ctmc, pca
from .core import CharacterMatrix, StateAnnotatedTree, TimeTree, make_balanced_tree, make_skewed_tree, read_matrix_csv, write_matrix_csv
from .errors import InputError
from .jog import JogReport, clade_locations, count_patterns, jogging_score, kde_2d, project_tree
from .nexus import NexusTreeLog, merge_state_logs, parse_nexus, write_nexus
from .sim import BorrowScenario, DolloConfig, calibrate_borrow_rate, simulate
from .viz import PlotSpec, render_kde, render_tree

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class TreeSection:
    shapes: list[str] = field(default_factory=lambda: ["skewed", "balanced"])
    leaves: int = 16
    depth: float = 10000.0


@dataclass
class DolloSection:
    loss_rate: float = 0.2
    mean_traits: float = 200.0
    birth_rate: float | None = None


@dataclass
class ScenarioSection:
    name: str = "none"
    kind: str = "none"
    time_limit: float | None = None


def _default_scenarios():
    return [ScenarioSection("none", "none"), ScenarioSection("global", "global"),
            ScenarioSection("local1000", "local", 1000.0), ScenarioSection("local3000", "local", 3000.0)]


@dataclass
class BorrowSection:
    target_fraction: float = 0.5
    borrow_rate: float | None = None       # overrides calibration when set
    replacement: bool = True
    calibration_replicates: int = 20
    scenarios: list[ScenarioSection] = field(default_factory=_default_scenarios)


@dataclass
class AncestralSection:
    rates: str = "symmetric"               # symmetric | asymmetric | fixed
    alpha: float | None = None
    beta: float | None = None
    time_scale: float = 1000.0


@dataclass
class AnalysisSection:
    state_tag: str = "states"
    sample_index: str = "last"             # integer, "last", "first" or "all"
    impute: str = "refuse"                 # refuse | mean
    clade: list[str] = field(default_factory=list)
    kde_bandwidth: float | None = None     # None = Scott's rule
    kde_grid: int = 100


@dataclass
class PlotSection:
    width: int = 640
    height: int = 480
    label_mode: str = "leaves"
    invert_y: bool = False
    zoom: list[float] | None = None
    highlight: list[str] = field(default_factory=list)


@dataclass
class PipelineConfig:
    seed: int = 1
    replicates: int = 5
    components: int = 2
    jog_component: int = 0
    trees: TreeSection = field(default_factory=TreeSection)
    dollo: DolloSection = field(default_factory=DolloSection)
    borrowing: BorrowSection = field(default_factory=BorrowSection)
    ancestral: AncestralSection = field(default_factory=AncestralSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    plot: PlotSection = field(default_factory=PlotSection)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        return _build(cls, doc, "config")

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise InputError(f"config is not valid JSON: {e}") from None
        return cls.from_dict(doc)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True) + "\n"


def _build(cls, doc, where):
    if not isinstance(doc, dict):
        raise InputError(f"{where}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise InputError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name, value in doc.items():
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, f"{where}.{name}")
        elif typing.get_origin(hint) is list and typing.get_args(hint) \
                and dataclasses.is_dataclass(typing.get_args(hint)[0]):
            kwargs[name] = [_build(typing.get_args(hint)[0], v, f"{where}.{name}[{i}]")
                            for i, v in enumerate(value)]
        else:
            kwargs[name] = value
    return cls(**kwargs)


def load_config(path) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    return PipelineConfig.from_json(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Shared steps
# ---------------------------------------------------------------------------

def make_tree(shape: str, leaves: int, depth: float) -> TimeTree:
    if shape == "skewed":
        return make_skewed_tree(leaves, depth)
    if shape == "balanced":
        return make_balanced_tree(leaves, depth)
    raise InputError(f"unknown tree shape {shape!r}")


def estimate_rates(tree: TimeTree, matrix: CharacterMatrix, section: AncestralSection) -> ctmc.CtmcRates:
    if section.rates == "fixed":
        if section.alpha is None or section.beta is None:
            raise InputError("fixed rates need alpha and beta")
        return ctmc.CtmcRates(section.alpha, section.beta)
    if section.rates not in ("symmetric", "asymmetric"):
        raise InputError(f"unknown rate mode {section.rates!r}")
    return ctmc.fit_rates(tree, matrix, symmetric=section.rates == "symmetric",
                          time_scale=section.time_scale)


def analyze_sample(sample: StateAnnotatedTree, model: pca.PcaModel, component: int = 0) -> JogReport:
    """Jog report (PC ``component``) plus triple-pattern counts for one complete sample."""
    patterns = count_patterns(sample)
    report = jogging_score(project_tree(sample, model), component)
    report.pattern_counts = patterns
    return report


def plot_spec(section: PlotSection, model: pca.PcaModel) -> PlotSpec:
    return PlotSpec(width=section.width, height=section.height,
                    viewport=tuple(section.zoom) if section.zoom else None,
                    label_mode=section.label_mode, highlight=frozenset(section.highlight),
                    explained=tuple(float(x) for x in pca.explained_variance(model)),
                    invert_y=section.invert_y)


def _write(path: Path, text: str):
    path.write_text(text, encoding="utf-8", newline="\n")


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Workflow A: synthetic
# ---------------------------------------------------------------------------

@dataclass
class ScenarioResult:
    shape: str
    scenario: str
    borrow_rate: float
    backtrack: list[float]
    pattern_101: list[int]


def scenario_of(sec: ScenarioSection, rate: float, replacement: bool) -> BorrowScenario:
    if sec.kind == "none":
        return BorrowScenario()
    return BorrowScenario(sec.kind, sec.time_limit, borrow_rate=rate, replacement=replacement)


def run_replicate(tree: TimeTree, cfg: PipelineConfig, scenario: BorrowScenario, rep: int):
    """simulate -> fit rates -> one FFBS sample -> PCA on leaves -> jog report."""
    seed = cfg.seed + rep
    dollo = DolloConfig(cfg.dollo.loss_rate, cfg.dollo.mean_traits, cfg.dollo.birth_rate, seed)
    sim = simulate(tree, dollo, scenario, seed=seed)
    rates = estimate_rates(tree, sim.matrix, cfg.ancestral)
    sample = ctmc.ffbs_samples(tree, rates, sim.matrix, 1, seed=seed, time_scale=cfg.ancestral.time_scale)[0]
    model = pca.fit(sim.matrix, cfg.components)
    report = analyze_sample(sample, model, cfg.jog_component)
    return sim, rates, sample, model, report


def run_synthetic(cfg: PipelineConfig, outdir) -> list[ScenarioResult]:
    """Simulate every tree shape x borrowing scenario and write one directory per pair."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.replicates < 1:
        raise InputError("replicates must be >= 1")
    _write(out / "config.json", cfg.to_json())
    results = []
    for shape in cfg.trees.shapes:
        tree = make_tree(shape, cfg.trees.leaves, cfg.trees.depth)
        rate = cfg.borrowing.borrow_rate
        if rate is None and any(s.kind != "none" for s in cfg.borrowing.scenarios):
            # one raw rate per tree, calibrated under global borrowing, shared by all scenarios
            dollo = DolloConfig(cfg.dollo.loss_rate, cfg.dollo.mean_traits, cfg.dollo.birth_rate)
            target = BorrowScenario("global", target_borrow_fraction=cfg.borrowing.target_fraction,
                                    replacement=cfg.borrowing.replacement)
            rate = calibrate_borrow_rate(tree, dollo, target, n_reps=cfg.borrowing.calibration_replicates)
            log.info("%s: calibrated borrow rate %.4f", shape, rate)
        for sec in cfg.borrowing.scenarios:
            scenario = scenario_of(sec, rate or 0.0, cfg.borrowing.replacement)
            d = out / f"{shape}_{sec.name}"
            d.mkdir(exist_ok=True)
            back, p101 = [], []
            for rep in range(cfg.replicates):
                sim, rates, sample, model, report = run_replicate(tree, cfg, scenario, rep)
                back.append(report.aggregate_mean)
                p101.append(report.pattern_counts["101"])
                if rep == 0:
                    _write(d / "matrix.csv", write_matrix_csv(sim.matrix))
                    truth_log = NexusTreeLog(samples=[("truth", sim.truth)])
                    _write(d / "truth.nex", write_nexus(truth_log))
                    _write(d / "events.csv", sim.events.to_csv())
                    _write(d / "samples.nex", write_nexus(NexusTreeLog(samples=[("STATE_0", sample)])))
                    _write(d / "model.json", model.to_json())
                    doc = report.to_dict()
                    doc.update(seed=cfg.seed, alpha=rates.alpha, beta=rates.beta,
                               borrow_rate=scenario.borrow_rate or 0.0)
                    _write(d / "jog.json", _dump(doc))
                    svg = render_tree(project_tree(sample, model), plot_spec(cfg.plot, model))
                    _write(d / "tree.svg", svg)
            results.append(ScenarioResult(shape, sec.name, float(scenario.borrow_rate or 0.0), back, p101))
    _write(out / "summary.csv", summary_csv(results))
    return results


def summary_csv(results: list[ScenarioResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["shape", "scenario", "borrow_rate", "replicates", "mean_backtrack", "sd_backtrack",
                "mean_101"])
    for r in results:
        b = np.array(r.backtrack)
        sd = float(b.std(ddof=1)) if len(b) > 1 else 0.0
        w.writerow([r.shape, r.scenario, repr(r.borrow_rate), len(b), repr(float(b.mean())), repr(sd),
                    repr(float(np.mean(r.pattern_101)))])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Workflow B: external log
# ---------------------------------------------------------------------------

def leaf_matrix_for(sample: StateAnnotatedTree, sidecar: CharacterMatrix | None) -> CharacterMatrix:
    if sidecar is not None:
        return sidecar.reorder(sample.tree.leaf_labels)
    leaves = list(sample.tree.leaves)
    if sample.p == 0 or sample.missing[leaves].all(axis=1).any():
        raise InputError("leaf states are missing from the tree log and no matrix was supplied")
    return sample.leaf_matrix()


def _fill_leaves(sample: StateAnnotatedTree, matrix: CharacterMatrix) -> StateAnnotatedTree:
    """Use the sidecar row for every leaf the log left unannotated."""
    if sample.p == 0:
        return sample.with_leaf_matrix(matrix)
    states = np.array(sample.states)
    missing = np.array(sample.missing)
    for v in sample.tree.leaves:
        if missing[v].all():
            i = matrix.index_of(sample.tree.label[v])
            states[v], missing[v] = matrix.values[i], matrix.missing[i]
    return StateAnnotatedTree(sample.tree, states, missing)


def run_analysis(cfg: PipelineConfig, tree_paths, outdir, matrix_path=None) -> dict:
    """PCA on leaves, projection of the chosen sample, jog report, optional clade KDE."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    a = cfg.analysis
    if isinstance(tree_paths, (str, Path)):
        tree_paths = [tree_paths]
    logs = [parse_nexus(Path(p).read_text(encoding="utf-8"), a.state_tag) for p in tree_paths]
    tlog = logs[0] if len(logs) == 1 else merge_state_logs(logs)
    if not tlog.samples:
        raise InputError("tree log contains no samples")
    sidecar = read_matrix_csv(Path(matrix_path).read_text(encoding="utf-8")) if matrix_path else None
    _write(out / "config.json", cfg.to_json())

    chosen = list(tlog.samples) if a.sample_index == "all" else [tlog.select(a.sample_index)]
    _, last = chosen[-1]
    matrix = leaf_matrix_for(last, sidecar)
    model = pca.fit(matrix, cfg.components, impute=a.impute)
    _write(out / "model.json", model.to_json())

    reports = []
    for sid, sample in chosen:
        if sidecar is not None:
            sample = _fill_leaves(sample, matrix)
        rep = analyze_sample(sample, model, cfg.jog_component)
        reports.append((sid, rep, sample))
    sid, report, sample = reports[-1]
    doc = report.to_dict()
    doc["sample_id"] = sid
    _write(out / "jog.json", _dump(doc))
    if a.sample_index == "all":
        _write(out / "jog_all.json", _dump([{"sample_id": s, "aggregate_mean": r.aggregate_mean,
                                             "aggregate_max": r.aggregate_max,
                                             "pattern_counts": r.pattern_counts} for s, r, _ in reports]))
    _write(out / "tree.svg", render_tree(project_tree(sample, model), plot_spec(cfg.plot, model)))

    result = {"sample_id": sid, "report": report, "model": model}
    if a.clade:
        locs = clade_locations(tlog, a.clade, model)
        pts = np.array([loc.coords[:2] for loc in locs])
        grid = kde_2d(pts, a.kde_bandwidth if a.kde_bandwidth else "auto", (a.kde_grid, a.kde_grid, None))
        _write(out / "density.csv", grid.to_csv())
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sample_id", "node", "pc1", "pc2", "monophyletic"])
        for loc in locs:
            w.writerow([loc.sample_id, loc.node, repr(float(loc.coords[0])), repr(float(loc.coords[1])),
                        int(loc.monophyletic)])
        _write(out / "clade_locations.csv", buf.getvalue())
        spec = dataclasses.replace(plot_spec(cfg.plot, model), label_mode="none", viewport=None)
        _write(out / "density.svg", render_kde(grid, pts, spec))
        result["clade_locations"] = locs
    return result
