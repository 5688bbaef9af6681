import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from treejog.core import CharacterMatrix, StateAnnotatedTree, TimeTree, make_balanced_tree
from treejog.ctmc import CtmcRates, ffbs_samples, node_marginals
from treejog.errors import DegenerateModelError, InputError, MissingStateError
from treejog.jog import (PATTERNS, ProjectedTree, backtrack_fraction, clade_locations, count_patterns,
                         jogging_score, kde_2d, project_tree, triples)
from treejog.nexus import NexusTreeLog
from treejog.pca import fit, project

from oracles import random_tree


def _chain(n):
    """Unary-free chain: root - a - b - ... with a sibling leaf at each step."""
    # build a caterpillar whose spine carries the interesting values
    parent, age, label = [-1], [float(n)], [None]
    spine = 0
    for i in range(n - 1):
        parent += [spine, spine]
        age += [float(n - i - 1), 0.0]
        label += [None if i < n - 2 else "Z", f"S{i}"]
        spine = len(parent) - 2
    return TimeTree(tuple(parent), np.array(age), tuple(label))


def test_example_path():
    total, net, frac = backtrack_fraction([0, 1, 0.5])
    assert (total, net) == (1.5, 0.5)
    assert frac == pytest.approx(2 / 3, abs=1e-4)


def test_monotone_paths_score_zero():
    tree = _chain(5)
    coords = np.stack([-tree.age, np.zeros(tree.n_nodes)], axis=1)
    rep = jogging_score(ProjectedTree(tree, coords))
    assert all(p.backtrack_fraction == 0 for p in rep.per_path)
    assert rep.aggregate_mean == 0 == rep.aggregate_max


def test_zero_movement_defined():
    assert backtrack_fraction([2.0, 2.0, 2.0])[2] == 0.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=12), st.floats(-100, 100))
def test_invariances(vals, shift):
    v = np.array(vals)
    base = backtrack_fraction(v)[2]
    assert 0.0 <= base <= 1.0
    assert backtrack_fraction(-v)[2] == pytest.approx(base, abs=1e-9)
    assert backtrack_fraction(v + shift)[2] == pytest.approx(base, abs=1e-6)
    assert backtrack_fraction(v[:2])[2] == 0.0


def test_sign_flip_on_tree():
    rng = np.random.default_rng(1)
    tree = random_tree(rng, 7)
    c = rng.normal(size=(tree.n_nodes, 2))
    a = jogging_score(ProjectedTree(tree, c))
    b = jogging_score(ProjectedTree(tree, -c))
    assert a.aggregate_mean == pytest.approx(b.aggregate_mean)
    assert [p.leaf for p in a.per_path] == sorted(tree.leaf_labels)
    assert jogging_score(ProjectedTree(tree, c), component=1).component == 1
    with pytest.raises(InputError):
        jogging_score(ProjectedTree(tree, c), component=2)


def test_identical_states_only_constant_patterns():
    rng = np.random.default_rng(2)
    tree = random_tree(rng, 6)
    row = rng.integers(0, 2, 9)
    counts = count_patterns(StateAnnotatedTree(tree, np.tile(row, (tree.n_nodes, 1))))
    assert set(k for k, v in counts.items() if v) <= {"000", "111"}
    assert sum(counts.values()) == 9 * len(triples(tree))


def test_hand_built_regain():
    tree = TimeTree((-1, 0, 0, 1, 1, 3, 3), np.array([3.0, 2, 0, 1, 0, 0, 0]),
                    (None, None, "x", None, "y", "z", "w"))
    states = np.zeros((7, 1), int)
    states[[0, 3, 5]] = 1      # root=1, node1=0, node3=1, leaf5=1
    counts = count_patterns(StateAnnotatedTree(tree, states))
    assert counts["101"] == 1


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 6), p=st.integers(1, 6))
def test_pattern_recount_brute_force(seed, n, p):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, n)
    s = rng.integers(0, 2, (tree.n_nodes, p))
    counts = count_patterns(StateAnnotatedTree(tree, s))
    brute = dict.fromkeys(PATTERNS, 0)
    for c in range(tree.n_nodes):
        par = tree.parent[c]
        if par < 0 or tree.parent[par] < 0:
            continue
        g = tree.parent[par]
        for j in range(p):
            brute[f"{s[g, j]}{s[par, j]}{s[c, j]}"] += 1
    assert counts == brute


def test_patterns_need_complete_states():
    tree = random_tree(np.random.default_rng(0), 3)
    miss = np.zeros((tree.n_nodes, 2), bool)
    miss[tree.root] = True
    with pytest.raises(MissingStateError):
        count_patterns(StateAnnotatedTree(tree, np.zeros((tree.n_nodes, 2)), miss))


def _fitted(rng, tree, p=12):
    s = rng.integers(0, 2, (tree.n_nodes, p))
    leaves = list(tree.leaves)
    return StateAnnotatedTree(tree, s), fit(s[leaves])


def test_clade_all_leaves_is_root():
    rng = np.random.default_rng(3)
    tree = random_tree(rng, 6)
    sample, model = _fitted(rng, tree)
    log = NexusTreeLog(samples=[("a", sample), ("b", sample)])
    locs = clade_locations(log, tree.leaf_labels, model)
    assert [l.node for l in locs] == [tree.root, tree.root]
    assert all(l.monophyletic for l in locs)
    assert np.allclose(locs[0].coords, project(model, sample.states[tree.root]))
    assert np.allclose(project_tree(sample, model).coords[tree.root], locs[0].coords)


def test_clade_flags_non_monophyly_and_unknown_label():
    tree = make_balanced_tree(4, 4)
    rng = np.random.default_rng(0)
    sample, model = _fitted(rng, tree)
    log = NexusTreeLog(samples=[("s", sample)])
    (loc,) = clade_locations(log, ["L1", "L3"], model)
    assert not loc.monophyletic and loc.node == tree.root
    with pytest.raises(InputError):
        clade_locations(log, ["L1", "nope"], model)


def test_clade_mean_matches_marginals():
    tree = make_balanced_tree(8, 8000)
    rng = np.random.default_rng(5)
    vals = rng.integers(0, 2, (8, 20))
    m = CharacterMatrix(tree.leaf_labels, vals, np.zeros(vals.shape, bool))
    model = fit(m)
    r = CtmcRates(0.4, 0.4)
    draws = ffbs_samples(tree, r, m, 100, seed=1)
    log = NexusTreeLog(samples=[(str(i), d) for i, d in enumerate(draws)])
    pcs = np.array([l.coords[0] for l in clade_locations(log, ["L1", "L2"], model)])
    node = tree.mrca(["L1", "L2"])
    marg = node_marginals(tree, r, m)[node]
    expected = project(model, marg)[0]
    var = np.sum(model.axes[0] ** 2 * marg * (1 - marg))
    assert abs(pcs.mean() - expected) <= 3 * np.sqrt(var / len(pcs))


def test_kde_single_point_peak():
    g = kde_2d([[0.3, -0.2]], bandwidth=0.5, grid=(41, 31, (-2, 2, -1.5, 1.5)))
    j, i = np.unravel_index(np.argmax(g.density), g.density.shape)
    assert i == np.argmin(np.abs(g.xs - 0.3)) and j == np.argmin(np.abs(g.ys + 0.2))
    assert g.density.min() >= 0
    row = g.density[j, i:]
    assert np.all(np.diff(row) <= 0)


def test_kde_symmetric_points():
    g = kde_2d([[1.0, 0.5], [-1.0, -0.5]], bandwidth=(0.4, 0.3), grid=(50, 40, (-3, 3, -2, 2)))
    assert np.allclose(g.density, g.density[::-1, ::-1], atol=1e-12, rtol=0)


def test_kde_normalised():
    rng = np.random.default_rng(7)
    g = kde_2d(rng.normal(size=(30, 2)))
    assert (g.density.sum() * g.cell_area) == pytest.approx(1.0, abs=0.01)
    assert g.to_csv().splitlines()[0] == "x,y,density"


def test_kde_degenerate_auto_bandwidth():
    with pytest.raises(DegenerateModelError, match="bandwidth"):
        kde_2d([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(DegenerateModelError):
        kde_2d([[1.0, 1.0]])
    with pytest.raises(InputError):
        kde_2d(np.zeros((0, 2)), bandwidth=1.0)
