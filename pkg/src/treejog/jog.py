"""Jogging metrics on projected trees, triple-pattern counts, clade location KDE."""
from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import product
from typing import Iterable, Sequence

import numpy as np

from .core import StateAnnotatedTree, TimeTree
from .errors import DegenerateModelError, InputError
from .nexus import NexusTreeLog
from .pca import PcaModel, project

PATTERNS = tuple("".join(bits) for bits in product("01", repeat=3))


@dataclass(frozen=True, eq=False)
class ProjectedTree:
    tree: TimeTree
    coords: np.ndarray          # (n_nodes, k)

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        if c.ndim != 2 or c.shape[0] != self.tree.n_nodes:
            raise InputError(f"need one coordinate row per node, got shape {c.shape}")
        object.__setattr__(self, "coords", c)


def project_tree(sample: StateAnnotatedTree, model: PcaModel) -> ProjectedTree:
    sample.require_complete()
    return ProjectedTree(sample.tree, project(model, sample.states))


@dataclass
class PathJog:
    leaf: str
    total_movement: float
    net_movement: float
    backtrack_fraction: float


@dataclass
class JogReport:
    per_path: list[PathJog]
    component: int = 0
    pattern_counts: dict[str, int] | None = None

    @property
    def aggregate_mean(self) -> float:
        return float(np.mean([p.backtrack_fraction for p in self.per_path])) if self.per_path else 0.0

    @property
    def aggregate_max(self) -> float:
        return float(max((p.backtrack_fraction for p in self.per_path), default=0.0))

    def to_dict(self) -> dict:
        return {
            "component": self.component,
            "aggregate_mean": self.aggregate_mean,
            "aggregate_max": self.aggregate_max,
            "per_path": [vars(p) for p in self.per_path],
            "pattern_counts": self.pattern_counts,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def backtrack_fraction(values: Sequence[float]) -> tuple[float, float, float]:
    """(total, net, backtrack) for a sequence of coordinates along one path."""
    v = np.asarray(values, dtype=float)
    total = float(np.abs(np.diff(v)).sum())
    net = float(abs(v[-1] - v[0]))
    if total == 0:
        return total, net, 0.0
    frac = (total - net) / total
    return total, net, min(max(frac, 0.0), 1.0)


def jogging_score(ptree: ProjectedTree, component: int = 0) -> JogReport:
    """Per root-to-leaf path share of movement along one PC that is later undone."""
    tree = ptree.tree
    if not 0 <= component < ptree.coords.shape[1]:
        raise InputError(f"component {component} not available")
    x = ptree.coords[:, component]
    paths = []
    for v in sorted(tree.leaves, key=lambda u: tree.label[u]):
        total, net, frac = backtrack_fraction(x[tree.path_from_root(v)])
        paths.append(PathJog(tree.label[v], total, net, frac))
    return JogReport(paths, component)


def triples(tree: TimeTree) -> list[tuple[int, int, int]]:
    """Every (grandparent, parent, child) chain, in preorder of the child."""
    out = []
    for c in tree.preorder:
        p = tree.parent[c]
        if p >= 0 and tree.parent[p] >= 0:
            out.append((tree.parent[p], p, c))
    return out


def count_patterns(sample: StateAnnotatedTree) -> dict[str, int]:
    """Tally the 8 grandparent->parent->child state patterns over all features.

    ``"101"`` (regain after loss) violates the tree model; ``"010"`` is valid
    but runs against unidirectionality.
    """
    sample.require_complete()
    tri = triples(sample.tree)
    counts = dict.fromkeys(PATTERNS, 0)
    if not tri:
        return counts
    g, p, c = (np.array(x) for x in zip(*tri))
    s = sample.states.astype(np.int64)
    code = (s[g] << 2) | (s[p] << 1) | s[c]
    tally = np.bincount(code.ravel(), minlength=8)
    for k, pat in enumerate(PATTERNS):
        counts[pat] = int(tally[k])
    return counts


@dataclass
class CladeLocation:
    sample_id: str
    node: int
    coords: np.ndarray
    monophyletic: bool


def clade_locations(log: NexusTreeLog, clade: Iterable[str], model: PcaModel) -> list[CladeLocation]:
    """Project the MRCA state of ``clade`` in every sample of ``log``.

    Samples where the clade is not monophyletic are kept and flagged.
    """
    clade = frozenset(clade)
    if not clade:
        raise InputError("empty clade")
    out = []
    for sid, sample in log.samples:
        tree = sample.tree
        v = tree.mrca(sorted(clade))
        if sample.missing[v].any():
            raise InputError(f"sample {sid}: MRCA node has missing states")
        xy = project(model, sample.states[v])
        out.append(CladeLocation(sid, v, xy, tree.leaf_sets[v] == clade))
    return out


@dataclass
class DensityGrid:
    xs: np.ndarray              # cell centres, length nx
    ys: np.ndarray              # cell centres, length ny
    density: np.ndarray         # (ny, nx)
    bandwidth: tuple[float, float]

    @property
    def cell_area(self) -> float:
        dx = (self.xs[1] - self.xs[0]) if len(self.xs) > 1 else 1.0
        dy = (self.ys[1] - self.ys[0]) if len(self.ys) > 1 else 1.0
        return float(dx * dy)

    def to_csv(self) -> str:
        lines = ["x,y,density"]
        for j, y in enumerate(self.ys):
            for i, x in enumerate(self.xs):
                lines.append(f"{x!r},{y!r},{self.density[j, i]!r}")
        return "\n".join(lines) + "\n"


def scott_bandwidth(points: np.ndarray) -> tuple[float, float]:
    n = len(points)
    if n < 2:
        raise DegenerateModelError("automatic bandwidth needs at least two points; pass a bandwidth")
    sd = points.std(axis=0, ddof=1)
    if np.any(sd == 0):
        raise DegenerateModelError("points have zero spread in a dimension; pass a manual bandwidth")
    h = n ** (-1.0 / 6.0) * sd
    return float(h[0]), float(h[1])


def kde_2d(points, bandwidth="auto", grid=(100, 100, None), pad: float = 4.0) -> DensityGrid:
    """Gaussian product-kernel density on a regular grid of cell centres.

    ``grid`` is ``(nx, ny, bounds)`` with bounds ``(x0, x1, y0, y1)``; when
    bounds is None the data range is padded by ``pad`` bandwidths.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise InputError("kde_2d needs at least one point")
    if bandwidth is None or (isinstance(bandwidth, str) and bandwidth == "auto"):
        hx, hy = scott_bandwidth(pts)
    elif np.ndim(bandwidth) == 0:
        hx = hy = float(bandwidth)
    else:
        hx, hy = (float(b) for b in bandwidth)
    if hx <= 0 or hy <= 0:
        raise InputError("bandwidth must be positive")
    nx, ny, bounds = grid
    if bounds is None:
        bounds = (pts[:, 0].min() - pad * hx, pts[:, 0].max() + pad * hx,
                  pts[:, 1].min() - pad * hy, pts[:, 1].max() + pad * hy)
    x0, x1, y0, y1 = (float(b) for b in bounds)
    if not (x1 > x0 and y1 > y0) or nx < 1 or ny < 1:
        raise InputError("degenerate KDE grid")
    dx, dy = (x1 - x0) / nx, (y1 - y0) / ny
    xs = x0 + (np.arange(nx) + 0.5) * dx
    ys = y0 + (np.arange(ny) + 0.5) * dy
    zx = (xs[None, :] - pts[:, 0:1]) / hx          # (n, nx)
    zy = (ys[None, :] - pts[:, 1:2]) / hy          # (n, ny)
    kx = np.exp(-0.5 * zx ** 2) / (np.sqrt(2 * np.pi) * hx)
    ky = np.exp(-0.5 * zy ** 2) / (np.sqrt(2 * np.pi) * hy)
    density = ky.T @ kx / len(pts)                 # (ny, nx)
    return DensityGrid(xs, ys, density, (hx, hy))
