import json
import re
from pathlib import Path

import numpy as np
import pytest

from treejog.cli import main
from treejog.core import StateAnnotatedTree
from treejog.errors import InputError, MissingStateError
from treejog.nexus import NexusTreeLog, parse_nexus, write_nexus
from treejog.pca import PcaModel
from treejog.pipeline import PipelineConfig, analyze_sample, run_analysis, run_synthetic

SMALL = {"replicates": 2, "trees": {"leaves": 8, "depth": 6000.0},
         "borrowing": {"borrow_rate": 1.0}}

ARTIFACTS = {"matrix.csv", "truth.nex", "events.csv", "samples.nex", "model.json", "jog.json", "tree.svg"}


def _snapshot(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("syn")
    cfg = PipelineConfig.from_dict(SMALL)
    results = run_synthetic(cfg, out)
    return out, results


def test_synthetic_layout(small_run):
    out, results = small_run
    dirs = sorted(p.name for p in out.iterdir() if p.is_dir())
    assert len(dirs) == 8
    assert {d.split("_")[0] for d in dirs} == {"skewed", "balanced"}
    for d in dirs:
        assert {p.name for p in (out / d).iterdir()} == ARTIFACTS
    assert (out / "config.json").exists()
    summary = (out / "summary.csv").read_text().splitlines()
    assert len(summary) == 9 and summary[0].startswith("shape,scenario")
    assert all(len(r.backtrack) == 2 for r in results)


def test_resolved_config_reproduces(small_run, tmp_path):
    out, _ = small_run
    cfg = PipelineConfig.from_json((out / "config.json").read_text())
    run_synthetic(cfg, tmp_path / "again")
    assert _snapshot(tmp_path / "again") == _snapshot(out)


def test_config_rejects_unknown_keys():
    with pytest.raises(InputError, match="unknown keys"):
        PipelineConfig.from_dict({"seeed": 1})
    with pytest.raises(InputError, match="unknown keys"):
        PipelineConfig.from_dict({"trees": {"leafs": 4}})


def test_analysis_matches_direct_modules(small_run, tmp_path):
    out, _ = small_run
    d = out / "balanced_global"
    cfg = PipelineConfig()
    res = run_analysis(cfg, d / "samples.nex", tmp_path / "an", d / "matrix.csv")
    model = PcaModel.from_json((d / "model.json").read_text())
    _, sample = parse_nexus((d / "samples.nex").read_text()).select("last")
    direct = analyze_sample(sample, model)
    assert res["report"].to_dict() == direct.to_dict()
    assert (tmp_path / "an" / "model.json").read_text() == (d / "model.json").read_text()
    jog = json.loads((tmp_path / "an" / "jog.json").read_text())
    assert jog["pattern_counts"] == direct.pattern_counts


def test_analysis_selects_last_sample(tmp_path, small_run):
    out, _ = small_run
    d = out / "skewed_none"
    _, s = parse_nexus((d / "samples.nex").read_text()).samples[0]
    other = StateAnnotatedTree(s.tree, 1 - s.states)
    log = NexusTreeLog(samples=[("first", other), ("final", s)])
    (tmp_path / "two.nex").write_text(write_nexus(log))
    res = run_analysis(PipelineConfig(), tmp_path / "two.nex", tmp_path / "o")
    assert res["sample_id"] == "final"


def test_zeroed_internal_states_raise(tmp_path, small_run):
    out, _ = small_run
    text = (out / "skewed_none" / "samples.nex").read_text()
    # strip every internal-node annotation, keep the leaf ones
    stripped = re.sub(r"\)\[&states=\"[01?]+\"\]", ")", text)
    (tmp_path / "bare.nex").write_text(stripped)
    with pytest.raises(MissingStateError):
        run_analysis(PipelineConfig(), tmp_path / "bare.nex", tmp_path / "o")
    rc = main(["analyze", "--trees", str(tmp_path / "bare.nex"), "--out", str(tmp_path / "o2")])
    assert rc == 1


def test_analysis_with_clade_and_merge(tmp_path, small_run):
    out, _ = small_run
    d = out / "balanced_none"
    _, s = parse_nexus((d / "samples.nex").read_text()).samples[0]
    p = s.p
    halves = []
    for a, b in ((0, p // 2), (p // 2, p)):
        part = StateAnnotatedTree(s.tree, s.states[:, a:b], s.missing[:, a:b])
        path = tmp_path / f"part{a}.nex"
        path.write_text(write_nexus(NexusTreeLog(samples=[("s0", part), ("s1", part)])))
        halves.append(str(path))
    cfg = PipelineConfig.from_dict({"analysis": {"clade": ["L1", "L2"], "kde_bandwidth": 0.5,
                                                 "kde_grid": 20}})
    res = run_analysis(cfg, halves, tmp_path / "m")
    names = {x.name for x in (tmp_path / "m").iterdir()}
    assert {"density.csv", "clade_locations.csv", "density.svg", "tree.svg", "jog.json"} <= names
    assert len(res["clade_locations"]) == 2
    direct = analyze_sample(s, res["model"])
    assert res["report"].aggregate_mean == pytest.approx(direct.aggregate_mean, abs=1e-12)


def test_cli_chain(tmp_path):
    t = tmp_path
    assert main(["simulate", "--tree", "balanced", "--leaves", "8", "--seed", "3", "--borrow", "global",
                 "--borrow-rate", "1.0", "--out-matrix", str(t / "m.csv"), "--out-truth", str(t / "truth.nex"),
                 "--out-events", str(t / "e.csv")]) == 0
    assert main(["ancestral", "--tree", str(t / "truth.nex"), "--matrix", str(t / "m.csv"), "--fit-rates",
                 "--samples", "3", "--seed", "1", "--out", str(t / "s.nex")]) == 0
    assert main(["pca", "--matrix", str(t / "m.csv"), "--out", str(t / "model.json")]) == 0
    assert main(["jog", "--tree", str(t / "s.nex"), "--model", str(t / "model.json"),
                 "--out", str(t / "jog.json")]) == 0
    assert main(["patterns", "--tree", str(t / "s.nex"), "--sample-index", "all",
                 "--out", str(t / "pat.json")]) == 0
    assert main(["kde", "--tree", str(t / "s.nex"), "--clade", "L1,L2", "--model", str(t / "model.json"),
                 "--grid", "10", "--out", str(t / "d.csv"), "--svg", str(t / "d.svg")]) == 0
    assert main(["plot", "--tree", str(t / "s.nex"), "--model", str(t / "model.json"), "--invert-y",
                 "--highlight", "L1", "--out", str(t / "p.svg")]) == 0
    assert len(json.loads((t / "pat.json").read_text())) == 3
    assert "PC1 (" in (t / "p.svg").read_text()
    jog = json.loads((t / "jog.json").read_text())
    assert jog["sample_id"] == "STATE_2" and 0 <= jog["aggregate_mean"] <= 1


def test_exit_codes(tmp_path, capsys):
    assert main(["pca", "--matrix", str(tmp_path / "nope.csv")]) == 1
    (tmp_path / "flat.csv").write_text("language,a,b\nX,1,0\nY,1,0\n")
    assert main(["pca", "--matrix", str(tmp_path / "flat.csv")]) == 2
    (tmp_path / "bad.nex").write_text("#NEXUS\nbegin trees;\ntree t = ((A:1,B:1;\nend;")
    assert main(["patterns", "--tree", str(tmp_path / "bad.nex")]) == 1
    assert main(["simulate", "--tree", "skewed", "--leaves", "2", "--depth", "1e6", "--loss", "5",
                 "--mean-traits", "1", "--birth-rate", "0"]) == 2
    err = capsys.readouterr().err
    assert "error" in err.lower()


def test_version_and_help(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0
    assert re.search(r"\d+\.\d+", capsys.readouterr().out)
    for sub in ("simulate", "ancestral", "pca", "jog", "patterns", "kde", "plot", "synthetic", "analyze"):
        with pytest.raises(SystemExit) as e:
            main([sub, "--help"])
        assert e.value.code == 0


def test_cli_determinism(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"replicates": 1, "trees": {"shapes": ["balanced"], "leaves": 4},
                               "borrowing": {"borrow_rate": 0.5}}))
    for name in ("a", "b"):
        assert main(["synthetic", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    assert _snapshot(tmp_path / "a") == _snapshot(tmp_path / "b")
