"""Shared data model: character matrices, time-trees and state-annotated trees."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError, MissingStateError

MISSING_TOKENS = frozenset({"?", "-", ""})


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Character matrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CharacterMatrix:
    """Languages x binary features, with missing entries tracked by a mask.

    ``values`` holds the observed entries; wherever ``missing`` is True the
    corresponding value is meaningless (conventionally 0).  Construction does
    not enforce the invariants, :func:`validate` reports them.
    """

    language_names: tuple[str, ...]
    values: np.ndarray
    missing: np.ndarray
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=np.int8, copy=True)
        if values.ndim != 2:
            raise InputError(f"matrix must be two-dimensional, got shape {values.shape}")
        missing = np.array(self.missing, dtype=bool, copy=True)
        if missing.shape != values.shape:
            raise InputError("missing mask shape does not match values")
        values[missing] = 0
        names = tuple(str(x) for x in self.language_names)
        if len(names) != values.shape[0]:
            raise InputError("one language name per row is required")
        feats = tuple(self.feature_names) or tuple(f"f{j}" for j in range(values.shape[1]))
        if len(feats) != values.shape[1]:
            raise InputError("one feature name per column is required")
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "missing", _readonly(missing))
        object.__setattr__(self, "language_names", names)
        object.__setattr__(self, "feature_names", feats)

    @classmethod
    def from_rows(cls, names: Sequence[str], rows: Sequence[Sequence], feature_names=()):
        """Build from nested rows whose entries are 0, 1, None or a missing token."""
        rows = [list(r) for r in rows]
        width = len(rows[0]) if rows else 0
        if any(len(r) != width for r in rows):
            raise InputError("ragged rows")
        values = np.zeros((len(rows), width), dtype=np.int8)
        missing = np.zeros((len(rows), width), dtype=bool)
        for i, row in enumerate(rows):
            for j, x in enumerate(row):
                if x is None or (isinstance(x, str) and x.strip() in MISSING_TOKENS):
                    missing[i, j] = True
                else:
                    values[i, j] = int(x)
        return cls(tuple(names), values, missing, tuple(feature_names))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def has_missing(self) -> bool:
        return bool(self.missing.any())

    def index_of(self, label: str) -> int:
        try:
            return self.language_names.index(label)
        except ValueError:
            raise InputError(f"unknown language label {label!r}") from None

    def to_float(self) -> np.ndarray:
        if self.has_missing:
            raise MissingStateError("matrix has missing entries")
        return self.values.astype(float)

    def reorder(self, labels: Sequence[str]) -> "CharacterMatrix":
        idx = [self.index_of(lab) for lab in labels]
        return CharacterMatrix(tuple(labels), self.values[idx], self.missing[idx], self.feature_names)

    def check(self) -> None:
        errors = validate(self)
        if errors:
            raise InputError("invalid character matrix: " + "; ".join(errors))


def validate(matrix: CharacterMatrix) -> list[str]:
    """Return every invariant violation of ``matrix``; empty when valid."""
    errors = []
    seen = set()
    for name in matrix.language_names:
        if name in seen:
            errors.append(f"duplicate label {name!r}")
        seen.add(name)
    if matrix.n < 2:
        errors.append(f"need at least 2 languages, got {matrix.n}")
    if matrix.p < 1:
        errors.append("need at least 1 feature")
    bad = (~matrix.missing) & (matrix.values != 0) & (matrix.values != 1)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        errors.append(f"non-binary entry at row {i}, column {j}: {int(matrix.values[i, j])}")
    if matrix.n:
        for j in np.flatnonzero(matrix.missing.all(axis=0)):
            errors.append(f"all-missing column {matrix.feature_names[j]!r}")
    return errors


def read_matrix_csv(source) -> CharacterMatrix:
    """Read a matrix from CSV text or an open file (label column + 0/1/? cells)."""
    text = source if isinstance(source, str) else source.read()
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r]
    if not rows:
        raise InputError("empty matrix file")
    header, body = rows[0], rows[1:]
    names, cells = [], []
    for r in body:
        if len(r) != len(header):
            raise InputError(f"row {r[0]!r} has {len(r) - 1} cells, header has {len(header) - 1}")
        names.append(r[0].strip())
        entries = []
        for x in r[1:]:
            x = x.strip()
            if x in MISSING_TOKENS:
                entries.append(None)
            elif x in ("0", "1"):
                entries.append(int(x))
            else:
                raise InputError(f"bad cell {x!r} in row {r[0]!r}")
        cells.append(entries)
    return CharacterMatrix.from_rows(names, cells, tuple(h.strip() for h in header[1:]))


def write_matrix_csv(matrix: CharacterMatrix) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["language", *matrix.feature_names])
    for i, name in enumerate(matrix.language_names):
        row = ["?" if matrix.missing[i, j] else str(int(matrix.values[i, j])) for j in range(matrix.p)]
        w.writerow([name, *row])
    return out.getvalue()


# ---------------------------------------------------------------------------
# Time-trees
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TimeTree:
    """Rooted bifurcating tree with node ages in years before present.

    Nodes are integer indices. ``parent[root] == -1``; ``label`` is the leaf
    label for leaves and ``None`` for internal nodes.
    """

    parent: tuple[int, ...]
    age: np.ndarray
    label: tuple[str | None, ...]
    allow_zero_branches: bool = False
    children: tuple[tuple[int, ...], ...] = field(init=False, repr=False)
    root: int = field(init=False)

    def __post_init__(self):
        parent = tuple(int(x) for x in self.parent)
        age = _readonly(np.array(self.age, dtype=float, copy=True))
        label = tuple(None if x is None else str(x) for x in self.label)
        n = len(parent)
        if age.shape != (n,) or len(label) != n:
            raise InputError("parent, age and label must have equal length")
        roots = [i for i, p in enumerate(parent) if p == -1]
        if len(roots) != 1:
            raise InputError(f"tree must have exactly one root, found {len(roots)}")
        kids: list[list[int]] = [[] for _ in range(n)]
        for i, p in enumerate(parent):
            if p == -1:
                continue
            if not 0 <= p < n or p == i:
                raise InputError(f"node {i} has invalid parent {p}")
            kids[p].append(i)
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "age", age)
        object.__setattr__(self, "label", label)
        object.__setattr__(self, "children", tuple(tuple(k) for k in kids))
        object.__setattr__(self, "root", roots[0])
        self._check()

    def _check(self):
        n = len(self.parent)
        order = self.preorder
        if len(order) != n:
            raise InputError("tree contains a cycle or unreachable nodes")
        if not np.all(np.isfinite(self.age)) or np.any(self.age < 0):
            raise InputError("node ages must be finite and non-negative")
        for i in range(n):
            k = len(self.children[i])
            if k not in (0, 2):
                raise InputError(f"node {i} has {k} children; only bifurcating trees are supported")
            if k == 0 and self.label[i] is None:
                raise InputError(f"leaf node {i} has no label")
            p = self.parent[i]
            if p >= 0:
                bl = self.age[p] - self.age[i]
                if bl < 0 or (bl == 0 and not self.allow_zero_branches):
                    raise InputError(f"branch above node {i} has non-positive length {bl}")
        labels = self.leaf_labels
        if len(set(labels)) != len(labels):
            raise InputError("leaf labels must be unique")

    # --- traversal -----------------------------------------------------
    @cached_property
    def preorder(self) -> tuple[int, ...]:
        out, stack = [], [self.root]
        seen = set()
        while stack:
            v = stack.pop()
            if v in seen:
                break
            seen.add(v)
            out.append(v)
            stack.extend(reversed(self.children[v]))
        return tuple(out)

    @cached_property
    def postorder(self) -> tuple[int, ...]:
        return tuple(reversed(self.preorder))

    @property
    def n_nodes(self) -> int:
        return len(self.parent)

    @cached_property
    def leaves(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.n_nodes) if not self.children[i])

    @cached_property
    def internal_nodes(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.n_nodes) if self.children[i])

    @cached_property
    def leaf_labels(self) -> tuple[str, ...]:
        return tuple(self.label[i] for i in self.leaves)

    @cached_property
    def _leaf_lookup(self) -> dict[str, int]:
        return {self.label[i]: i for i in self.leaves}

    def is_leaf(self, v: int) -> bool:
        return not self.children[v]

    def leaf_node(self, label: str) -> int:
        try:
            return self._leaf_lookup[label]
        except KeyError:
            raise InputError(f"unknown leaf label {label!r}") from None

    def branch_length(self, v: int) -> float:
        p = self.parent[v]
        return 0.0 if p < 0 else float(self.age[p] - self.age[v])

    def path_from_root(self, v: int) -> list[int]:
        path = [v]
        while self.parent[path[-1]] >= 0:
            path.append(self.parent[path[-1]])
        return path[::-1]

    @cached_property
    def leaf_sets(self) -> tuple[frozenset, ...]:
        sets: list[frozenset] = [frozenset()] * self.n_nodes
        for v in self.postorder:
            if self.is_leaf(v):
                sets[v] = frozenset([self.label[v]])
            else:
                sets[v] = frozenset().union(*(sets[c] for c in self.children[v]))
        return tuple(sets)

    def mrca(self, labels: Iterable[str]) -> int:
        nodes = [self.leaf_node(lab) for lab in labels]
        if not nodes:
            raise InputError("mrca of an empty set")
        anc = set(self.path_from_root(nodes[0]))
        best = self.path_from_root(nodes[0])
        for v in nodes[1:]:
            anc &= set(self.path_from_root(v))
        # deepest common ancestor on the first path
        for u in reversed(best):
            if u in anc:
                return u
        return self.root  # pragma: no cover

    def mrca_age(self, a: int, b: int) -> float:
        """Age of the most recent common ancestor of two nodes."""
        anc = set(self.path_from_root(a))
        for u in reversed(self.path_from_root(b)):
            if u in anc:
                return float(self.age[u])
        return float(self.age[self.root])  # pragma: no cover

    def canonical_preorder(self) -> list[int]:
        """Preorder with children sorted by their smallest descendant leaf label."""
        key = [min(s) for s in self.leaf_sets]
        out, stack = [], [self.root]
        while stack:
            v = stack.pop()
            out.append(v)
            stack.extend(sorted(self.children[v], key=lambda c: key[c], reverse=True))
        return out


def make_skewed_tree(n_leaves: int = 16, depth: float = 10000.0, prefix: str = "L") -> TimeTree:
    """Caterpillar tree; internal ages equally spaced from ``depth`` down to ``depth/n_leaves``.

    Leaf ``L01`` branches off at the root, the last two leaves form the
    youngest cherry.
    """
    if n_leaves < 2:
        raise InputError("need at least 2 leaves")
    if depth <= 0:
        raise InputError("depth must be positive")
    n_int = n_leaves - 1
    int_ages = np.linspace(depth, depth / n_leaves, n_int)
    width = len(str(n_leaves))
    parent = [-1] + list(range(n_int - 1))       # spine 0 -> 1 -> ... -> n_int-1
    ages = list(int_ages)
    labels: list[str | None] = [None] * n_int
    for k in range(n_leaves):
        spine = min(k, n_int - 1)
        parent.append(spine)
        ages.append(0.0)
        labels.append(f"{prefix}{k + 1:0{width}d}")
    return TimeTree(tuple(parent), np.array(ages), tuple(labels))


def make_balanced_tree(n_leaves: int = 16, depth: float = 10000.0, prefix: str = "L") -> TimeTree:
    """Complete binary tree whose internal ages halve at every level."""
    if n_leaves < 2:
        raise InputError("need at least 2 leaves")
    if n_leaves & (n_leaves - 1):
        raise InputError(f"balanced tree needs a power-of-two leaf count, got {n_leaves}")
    if depth <= 0:
        raise InputError("depth must be positive")
    # heap layout: node i has children 2i+1, 2i+2
    n_nodes = 2 * n_leaves - 1
    parent = [-1] + [(i - 1) // 2 for i in range(1, n_nodes)]
    level = [int(np.floor(np.log2(i + 1))) for i in range(n_nodes)]
    ages = [depth / 2 ** level[i] if i < n_leaves - 1 else 0.0 for i in range(n_nodes)]
    width = len(str(n_leaves))
    labels = [None if i < n_leaves - 1 else f"{prefix}{i - n_leaves + 2:0{width}d}" for i in range(n_nodes)]
    return TimeTree(tuple(parent), np.array(ages), tuple(labels))


# ---------------------------------------------------------------------------
# State-annotated trees
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StateAnnotatedTree:
    """A time-tree with a binary state vector on every node.

    Missing entries are allowed at construction so that partially annotated
    logs can be represented; :meth:`require_complete` enforces completeness
    where an operation needs it.
    """

    tree: TimeTree
    states: np.ndarray
    missing: np.ndarray | None = None

    def __post_init__(self):
        states = np.array(self.states, dtype=np.int8, copy=True)
        if states.ndim != 2 or states.shape[0] != self.tree.n_nodes:
            raise InputError(f"states must be (n_nodes, p), got {states.shape}")
        missing = (np.zeros(states.shape, dtype=bool) if self.missing is None
                   else np.array(self.missing, dtype=bool, copy=True))
        if missing.shape != states.shape:
            raise InputError("missing mask shape does not match states")
        states[missing] = 0
        if np.any((states != 0) & (states != 1)):
            raise InputError("node states must be binary")
        object.__setattr__(self, "states", _readonly(states))
        object.__setattr__(self, "missing", _readonly(missing))

    @property
    def p(self) -> int:
        return self.states.shape[1]

    def require_complete(self, internal_only: bool = False) -> None:
        nodes = self.tree.internal_nodes if internal_only else range(self.tree.n_nodes)
        for v in nodes:
            if self.missing[v].any():
                kind = "leaf" if self.tree.is_leaf(v) else "internal"
                raise MissingStateError(f"{kind} node {v} has missing states")

    def leaf_matrix(self, feature_names=()) -> CharacterMatrix:
        leaves = list(self.tree.leaves)
        return CharacterMatrix(self.tree.leaf_labels, self.states[leaves], self.missing[leaves], feature_names)

    def with_leaf_matrix(self, matrix: CharacterMatrix) -> "StateAnnotatedTree":
        """Replace leaf rows with the rows of ``matrix`` (matched by label)."""
        if matrix.p != self.p and self.p != 0:
            raise InputError(f"matrix has {matrix.p} features, tree states have {self.p}")
        states = np.array(self.states) if self.p else np.zeros((self.tree.n_nodes, matrix.p), np.int8)
        missing = np.array(self.missing) if self.p else np.ones((self.tree.n_nodes, matrix.p), bool)
        for v in self.tree.leaves:
            i = matrix.index_of(self.tree.label[v])
            states[v] = matrix.values[i]
            missing[v] = matrix.missing[i]
        return StateAnnotatedTree(self.tree, states, missing)


def annotated_equal(a: StateAnnotatedTree, b: StateAnnotatedTree, age_tol: float = 1e-9) -> bool:
    """Structural equality up to node numbering and child order."""
    oa, ob = a.tree.canonical_preorder(), b.tree.canonical_preorder()
    if len(oa) != len(ob) or a.p != b.p:
        return False
    pos_a = {v: k for k, v in enumerate(oa)}
    pos_b = {v: k for k, v in enumerate(ob)}
    for u, v in zip(oa, ob):
        if a.tree.label[u] != b.tree.label[v]:
            return False
        pu, pv = a.tree.parent[u], b.tree.parent[v]
        if (pu < 0) != (pv < 0) or (pu >= 0 and pos_a[pu] != pos_b[pv]):
            return False
    if not np.allclose(a.tree.age[oa], b.tree.age[ob], rtol=0, atol=age_tol):
        return False
    return bool(np.array_equal(a.missing[oa], b.missing[ob])
                and np.array_equal(a.states[oa], b.states[ob]))
