"""Stochastic Dollo trait simulation along a time-tree, with optional borrowing.

Time runs from the root age down to 0 (ages in years before present). Rates
are per 1000 years:

* births: each lineage gains brand-new traits at ``birth_rate``;
* deaths: each trait copy is lost at ``loss_rate``;
* borrowing: each trait copy in a donor lineage is copied into a uniformly
  chosen eligible contemporary lineage at ``borrow_rate``. Copies into a
  lineage that already carries the trait change nothing and are not logged.
  With ``replacement`` (the default) the recipient drops one of its existing
  traits for every trait it borrows, the way a loanword displaces the native
  word for a meaning; without it trait sets grow without bound under heavy
  borrowing.

Eligible recipients are all other lineages alive (global) or those whose most
recent common ancestor with the donor is at most ``time_limit`` years older
than the current time (local).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Literal

import numpy as np

from .core import CharacterMatrix, StateAnnotatedTree, TimeTree
from .errors import EmptySimulationError, InputError

KYR = 1000.0


@dataclass(frozen=True)
class DolloConfig:
    loss_rate: float = 0.2
    mean_traits: float = 200.0
    birth_rate: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.loss_rate < 0:
            raise InputError("loss_rate must be non-negative")
        if self.mean_traits <= 0:
            raise InputError("mean_traits must be positive")

    @property
    def effective_birth_rate(self) -> float:
        if self.birth_rate is not None:
            return float(self.birth_rate)
        return self.mean_traits * self.loss_rate


@dataclass(frozen=True)
class BorrowScenario:
    kind: Literal["none", "global", "local"] = "none"
    time_limit: float | None = None
    target_borrow_fraction: float | None = None
    borrow_rate: float | None = None
    replacement: bool = True

    def __post_init__(self):
        if self.kind not in ("none", "global", "local"):
            raise InputError(f"unknown borrowing kind {self.kind!r}")
        if self.kind == "local" and not (self.time_limit and self.time_limit > 0):
            raise InputError("local borrowing requires time_limit > 0")
        if self.kind != "none":
            if (self.target_borrow_fraction is None) == (self.borrow_rate is None):
                raise InputError("set exactly one of target_borrow_fraction and borrow_rate")
            if self.target_borrow_fraction is not None and not 0 <= self.target_borrow_fraction < 1:
                raise InputError("target_borrow_fraction must lie in [0, 1)")
            if self.borrow_rate is not None and self.borrow_rate < 0:
                raise InputError("borrow_rate must be non-negative")

    @property
    def limit(self) -> float:
        if self.kind == "local":
            return float(self.time_limit)
        return math.inf


NO_BORROWING = BorrowScenario()


@dataclass(frozen=True)
class Event:
    time: float           # age, years before present
    lineage: int          # node id at the lower end of the branch
    kind: str             # gain | loss | borrow
    trait: int
    donor: int | None = None


@dataclass
class EventLog:
    events: list[Event] = field(default_factory=list)

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def count(self, kind: str) -> int:
        return sum(e.kind == kind for e in self.events)

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["time", "lineage_id", "event", "trait_id", "donor_id"])
        for e in self.events:
            w.writerow([repr(e.time), e.lineage, e.kind, e.trait, "" if e.donor is None else e.donor])
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EventLog":
        rows = csv.DictReader(io.StringIO(text))
        return cls([Event(float(r["time"]), int(r["lineage_id"]), r["event"], int(r["trait_id"]),
                          int(r["donor_id"]) if r["donor_id"] else None) for r in rows])


@dataclass
class SimulationResult:
    truth: StateAnnotatedTree
    matrix: CharacterMatrix
    events: EventLog
    trait_ids: list[int]
    root_trait_count: int
    borrow_rate: float


class _Bag:
    """Set with O(1) add, remove and uniform random choice."""

    __slots__ = ("items", "pos")

    def __init__(self, items=()):
        self.items: list[int] = []
        self.pos: dict[int, int] = {}
        for x in items:
            self.add(x)

    def __len__(self):
        return len(self.items)

    def __contains__(self, x):
        return x in self.pos

    def add(self, x):
        if x not in self.pos:
            self.pos[x] = len(self.items)
            self.items.append(x)

    def remove(self, x):
        i = self.pos.pop(x)
        last = self.items.pop()
        if i < len(self.items):
            self.items[i] = last
            self.pos[last] = i

    def copy(self):
        b = _Bag()
        b.items = list(self.items)
        b.pos = dict(self.pos)
        return b


def _intervals(tree: TimeTree, limit: float) -> list[tuple[float, float]]:
    """Time slices (hi, lo) inside which lineage set and eligibility are constant."""
    cuts = set(float(a) for a in tree.age)
    if math.isfinite(limit):
        for v in tree.internal_nodes:
            cut = float(tree.age[v]) - limit
            if cut > 0:
                cuts.add(cut)
    cuts.add(0.0)
    pts = sorted(cuts, reverse=True)
    return [(hi, lo) for hi, lo in zip(pts, pts[1:]) if hi > lo]


class _Uniforms:
    """Buffered uniform draws; one Generator stream consumed in a fixed order."""

    def __init__(self, rng: np.random.Generator, block: int = 8192):
        self.rng = rng
        self.block = block
        self.buf = rng.random(block).tolist()
        self.i = 0

    def __call__(self) -> float:
        if self.i == self.block:
            self.buf = self.rng.random(self.block).tolist()
            self.i = 0
        x = self.buf[self.i]
        self.i += 1
        return x


def _pick(weights: list[int], x: float) -> int:
    acc = 0
    for k, w in enumerate(weights):
        acc += w
        if x < acc:
            return k
    return len(weights) - 1


def _run(tree: TimeTree, config: DolloConfig, kind: str, limit: float, borrow_rate: float, seed,
         replace_on_borrow: bool = True):
    rng = np.random.default_rng(seed)
    birth = config.effective_birth_rate / KYR
    death = config.loss_rate / KYR
    borrow = (borrow_rate / KYR) if kind != "none" else 0.0
    events: list[Event] = []
    r = tree.root
    t_root = float(tree.age[r])

    n_root = int(rng.poisson(config.mean_traits))
    unif = _Uniforms(rng)
    root_bag = _Bag(range(n_root))
    for k in range(n_root):
        events.append(Event(t_root, r, "gain", k))
    next_id = n_root

    node_sets: dict[int, frozenset] = {}
    alive: dict[int, _Bag] = {r: root_bag}

    def finalize(at: float):
        done = True
        while done:
            done = False
            for a in sorted(alive):
                if float(tree.age[a]) == at:
                    bag = alive.pop(a)
                    node_sets[a] = frozenset(bag.items)
                    for c in tree.children[a]:
                        alive[c] = bag.copy()
                    done = True

    finalize(t_root)
    for hi, lo in _intervals(tree, limit):
        lineages = sorted(alive)
        mid = 0.5 * (hi + lo)
        if borrow > 0 and len(lineages) > 1:
            recips = {a: [b for b in lineages if b != a and tree.mrca_age(a, b) - mid <= limit]
                      for a in lineages}
        else:
            recips = {a: [] for a in lineages}
        donors = [a for a in lineages if recips[a]]
        bags = [alive[a] for a in lineages]
        d_bags = [alive[a] for a in donors]
        r_birth = birth * len(lineages)
        t = hi
        while True:
            sizes = [len(b) for b in bags]
            d_sizes = [len(b) for b in d_bags]
            n_all = sum(sizes)
            n_don = sum(d_sizes)
            r_death = death * n_all
            total = r_birth + r_death + borrow * n_don
            if total <= 0:
                break
            t += math.log(1.0 - unif()) / total
            if t <= lo:
                break
            x = unif() * total
            if x < r_birth:
                k = min(int(unif() * len(lineages)), len(lineages) - 1)
                bags[k].add(next_id)
                events.append(Event(t, lineages[k], "gain", next_id))
                next_id += 1
            elif x < r_birth + r_death:
                k = _pick(sizes, (x - r_birth) / death)
                bag = bags[k]
                trait = bag.items[min(int(unif() * len(bag)), len(bag) - 1)]
                bag.remove(trait)
                events.append(Event(t, lineages[k], "loss", trait))
            else:
                k = _pick(d_sizes, (x - r_birth - r_death) / borrow)
                a = donors[k]
                bag = d_bags[k]
                trait = bag.items[min(int(unif() * len(bag)), len(bag) - 1)]
                cands = recips[a]
                rcp = cands[min(int(unif() * len(cands)), len(cands) - 1)]
                rbag = alive[rcp]
                if trait not in rbag:
                    if replace_on_borrow and len(rbag):
                        old = rbag.items[min(int(unif() * len(rbag)), len(rbag) - 1)]
                        rbag.remove(old)
                        events.append(Event(t, rcp, "loss", old))
                    rbag.add(trait)
                    events.append(Event(t, rcp, "borrow", trait, a))
        finalize(lo)
    return node_sets, EventLog(events), n_root


def simulate(tree: TimeTree, config: DolloConfig, scenario: BorrowScenario = NO_BORROWING,
             seed=None) -> SimulationResult:
    """Simulate one replicate. ``seed`` defaults to ``config.seed``.

    Returns ground-truth states of every node, the leaf matrix restricted to
    traits attested in at least one leaf, and the full event log.
    """
    rate = resolve_borrow_rate(tree, config, scenario)
    node_sets, log, n_root = _run(tree, config, scenario.kind, scenario.limit, rate,
                                  config.seed if seed is None else seed, scenario.replacement)
    leaf_traits = set().union(*(node_sets[v] for v in tree.leaves))
    if not leaf_traits:
        raise EmptySimulationError("no trait survived to any leaf")
    traits = sorted(leaf_traits)
    col = {t: j for j, t in enumerate(traits)}
    states = np.zeros((tree.n_nodes, len(traits)), dtype=np.int8)
    for v, s in node_sets.items():
        idx = [col[t] for t in s if t in col]
        states[v, idx] = 1
    truth = StateAnnotatedTree(tree, states)
    names = tuple(f"t{t}" for t in traits)
    leaves = list(tree.leaves)
    matrix = CharacterMatrix(tree.leaf_labels, states[leaves], np.zeros((len(leaves), len(traits)), bool), names)
    return SimulationResult(truth, matrix, log, traits, n_root, rate)


# ---------------------------------------------------------------------------
# Borrowing measurement and calibration
# ---------------------------------------------------------------------------

def effective_borrowed_fraction(log: EventLog, tree: TimeTree, final_sets=None) -> float:
    """Mean over root-to-leaf paths of borrow-ins on the path per leaf trait per 1000 years.

    For each leaf: (# borrow events whose recipient lies on the path) divided
    by (# traits present at the leaf) divided by (path length / 1000).
    """
    borrow_by_lineage: dict[int, int] = {}
    for e in log:
        if e.kind == "borrow":
            borrow_by_lineage[e.lineage] = borrow_by_lineage.get(e.lineage, 0) + 1
    if not borrow_by_lineage:
        return 0.0
    if final_sets is None:
        final_sets = replay_states(log, tree)
    vals = []
    for v in tree.leaves:
        path = tree.path_from_root(v)
        n_b = sum(borrow_by_lineage.get(u, 0) for u in path[1:])
        n_leaf = len(final_sets[v])
        length = (tree.age[tree.root] - tree.age[v]) / KYR
        if n_leaf == 0 or length <= 0:
            continue
        vals.append(n_b / n_leaf / length)
    return float(np.mean(vals)) if vals else 0.0


def replay_states(log: EventLog, tree: TimeTree) -> dict[int, set]:
    """Reconstruct every node's trait set from an event log alone."""
    by_lineage: dict[int, list[Event]] = {}
    root_traits = set()
    for e in log:
        if e.lineage == tree.root:
            root_traits.add(e.trait)
        else:
            by_lineage.setdefault(e.lineage, []).append(e)
    sets = {tree.root: root_traits}
    for v in tree.preorder:
        if v == tree.root:
            continue
        s = set(sets[tree.parent[v]])
        for e in sorted(by_lineage.get(v, []), key=lambda e: -e.time):
            if e.kind == "loss":
                s.discard(e.trait)
            else:
                s.add(e.trait)
        sets[v] = s
    return sets


def _tree_key(tree: TimeTree):
    return (tree.parent, tuple(float(a) for a in tree.age), tree.label)


_CALIBRATION_SEED = 20240501


@lru_cache(maxsize=64)
def _calibrate_cached(tree_key, config_key, kind, limit, replacement, target, n_reps, seed, tol):
    parent, ages, labels = tree_key
    tree = TimeTree(parent, np.array(ages), labels, allow_zero_branches=True)
    config = DolloConfig(*config_key)
    seeds = np.random.SeedSequence(seed).spawn(n_reps)

    def f(log_rate):
        vals = []
        for s in seeds:
            sets, log, _ = _run(tree, config, kind, limit, math.exp(log_rate),
                                np.random.default_rng(s), replacement)
            vals.append(effective_borrowed_fraction(log, tree, {v: sets[v] for v in tree.leaves}))
        return float(np.mean(vals)) - target

    # bracket in log-rate, then Illinois regula falsi; the same replicate seeds
    # are reused at every rate so f is close to monotone
    a = math.log(0.25)
    fa = f(a)
    b, fb = a, fa
    step = math.log(2.0)
    while fa * fb > 0:
        if abs(b - a) > 14 * step:
            raise InputError(f"borrowed fraction {target} unreachable for this tree and scenario")
        a, fa = b, fb
        b = b + step if fb < 0 else b - step
        fb = f(b)
    for _ in range(30):
        c = b - fb * (b - a) / (fb - fa)
        fc = f(c)
        if abs(fc) < tol:
            return math.exp(c)
        if fc * fb < 0:
            a, fa = b, fb
        else:
            fa /= 2
        b, fb = c, fc
    return math.exp(b)


def calibrate_borrow_rate(tree: TimeTree, config: DolloConfig, scenario: BorrowScenario,
                          n_reps: int = 20, seed: int = _CALIBRATION_SEED, tol: float = 0.005) -> float:
    """Raw borrow rate whose mean effective borrowed fraction matches the target.

    The mean is taken over ``n_reps`` replicates with fixed seeds, and the
    result is cached per (tree, config, scenario).
    """
    if scenario.kind == "none":
        return 0.0
    if scenario.target_borrow_fraction is None:
        raise InputError("scenario has no target_borrow_fraction")
    if scenario.target_borrow_fraction == 0:
        return 0.0
    cfg = (config.loss_rate, config.mean_traits, config.birth_rate, 0)
    return _calibrate_cached(_tree_key(tree), cfg, scenario.kind, scenario.limit, scenario.replacement,
                             float(scenario.target_borrow_fraction), n_reps, seed, tol)


def resolve_borrow_rate(tree: TimeTree, config: DolloConfig, scenario: BorrowScenario) -> float:
    if scenario.kind == "none":
        return 0.0
    if scenario.borrow_rate is not None:
        return float(scenario.borrow_rate)
    return calibrate_borrow_rate(tree, config, scenario)


def with_rate(scenario: BorrowScenario, rate: float) -> BorrowScenario:
    return replace(scenario, borrow_rate=rate, target_borrow_fraction=None)
