"""Binary CTMC on a fixed time-tree: transition probabilities, pruning and FFBS.

Rates are per unit of ``time_scale`` years (default 1000), so a branch of
``L`` years has length ``L / time_scale`` in rate units.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .core import CharacterMatrix, StateAnnotatedTree, TimeTree
from .errors import InputError, ZeroLikelihoodError

DEFAULT_TIME_SCALE = 1000.0


@dataclass(frozen=True)
class CtmcRates:
    alpha: float                    # 0 -> 1
    beta: float                     # 1 -> 0
    root_prior: float | None = None  # P(root = 1); None means stationary

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or not self.alpha + self.beta > 0:
            raise InputError(f"need alpha, beta >= 0 with alpha + beta > 0, got {self.alpha}, {self.beta}")
        if self.root_prior is not None and not 0.0 <= self.root_prior <= 1.0:
            raise InputError(f"root_prior must lie in [0, 1], got {self.root_prior}")

    @property
    def pi1(self) -> float:
        if self.root_prior is not None:
            return float(self.root_prior)
        return self.alpha / (self.alpha + self.beta)

    @property
    def root_distribution(self) -> np.ndarray:
        return np.array([1.0 - self.pi1, self.pi1])


def transition_matrix(rates: CtmcRates, t: float) -> np.ndarray:
    """2x2 row-stochastic matrix P(t) with P[i, j] = Pr(j at time t | i at 0)."""
    if t < 0:
        raise InputError(f"negative branch length {t}")
    a, b = rates.alpha, rates.beta
    s = a + b
    e = np.exp(-s * t)
    p00 = (b + a * e) / s
    p11 = (a + b * e) / s
    return np.array([[p00, 1.0 - p00], [1.0 - p11, p11]])


def _branch_matrices(tree: TimeTree, rates: CtmcRates, time_scale: float) -> list[np.ndarray | None]:
    return [None if tree.parent[v] < 0 else transition_matrix(rates, tree.branch_length(v) / time_scale)
            for v in range(tree.n_nodes)]


def _leaf_partials(tree: TimeTree, leaves: CharacterMatrix) -> dict[int, np.ndarray]:
    """Indicator partials (p, 2) per leaf node; missing entries give (1, 1)."""
    labels = set(tree.leaf_labels)
    if set(leaves.language_names) != labels or leaves.n != len(labels):
        extra = sorted(set(leaves.language_names) ^ labels)
        raise InputError(f"matrix and tree leaf labels differ: {extra[:5]}")
    out = {}
    for v in tree.leaves:
        i = leaves.index_of(tree.label[v])
        x, m = leaves.values[i], leaves.missing[i]
        part = np.empty((leaves.p, 2))
        part[:, 0] = (x == 0) | m
        part[:, 1] = (x == 1) | m
        out[v] = part
    return out


@dataclass
class _Pruned:
    partials: np.ndarray      # (n_nodes, p, 2), each rescaled so its max is 1 (or all 0)
    log_scale: np.ndarray     # (n_nodes, p), accumulated log scalers of the subtree
    matrices: list


def _prune(tree: TimeTree, rates: CtmcRates, leaves: CharacterMatrix, time_scale: float) -> _Pruned:
    P = _branch_matrices(tree, rates, time_scale)
    lp = _leaf_partials(tree, leaves)
    n, p = tree.n_nodes, leaves.p
    partials = np.zeros((n, p, 2))
    log_scale = np.zeros((n, p))
    for v in tree.postorder:
        if tree.is_leaf(v):
            partials[v] = lp[v]
            continue
        acc = np.ones((p, 2))
        for c in tree.children[v]:
            acc *= partials[c] @ P[c].T          # sum_j P[i, j] L_c(j)
            log_scale[v] += log_scale[c]
        scale = acc.max(axis=1)
        pos = scale > 0
        acc[pos] /= scale[pos, None]
        with np.errstate(divide="ignore"):
            log_scale[v] += np.log(scale)
        partials[v] = acc
    return _Pruned(partials, log_scale, P)


def prune_loglik(tree: TimeTree, rates: CtmcRates, leaves: CharacterMatrix,
                 time_scale: float = DEFAULT_TIME_SCALE) -> np.ndarray:
    """Per-feature log marginal likelihood (``-inf`` for impossible features)."""
    pr = _prune(tree, rates, leaves, time_scale)
    r = tree.root
    with np.errstate(divide="ignore"):
        return np.log(pr.partials[r] @ rates.root_distribution) + pr.log_scale[r]


def prune_likelihood(tree: TimeTree, rates: CtmcRates, leaves: CharacterMatrix,
                     time_scale: float = DEFAULT_TIME_SCALE) -> np.ndarray:
    """Per-feature marginal likelihood summed over all internal-state assignments."""
    return np.exp(prune_loglik(tree, rates, leaves, time_scale))


def node_marginals(tree: TimeTree, rates: CtmcRates, leaves: CharacterMatrix,
                   time_scale: float = DEFAULT_TIME_SCALE) -> np.ndarray:
    """Exact posterior Pr(node state = 1 | leaves), shape (n_nodes, p), by an up-down pass."""
    pr = _prune(tree, rates, leaves, time_scale)
    P = pr.matrices
    n, p = tree.n_nodes, leaves.p
    # outside[v][i]: prob. of everything outside subtree(v) given state i at v, up to scale
    outside = np.zeros((n, p, 2))
    outside[tree.root] = rates.root_distribution
    post = np.zeros((n, p))
    for v in tree.preorder:
        joint = outside[v] * pr.partials[v]
        tot = joint.sum(axis=1)
        if np.any(tot <= 0):
            raise ZeroLikelihoodError("a feature has zero likelihood under the given rates and tree")
        post[v] = joint[:, 1] / tot
        kids = tree.children[v]
        for c in kids:
            above = outside[v].copy()
            for s in kids:
                if s != c:
                    above *= pr.partials[s] @ P[s].T
            msg = above @ P[c]                        # sum_i above(i) P[i, j]
            msg /= msg.max(axis=1, keepdims=True).clip(min=1e-300)
            outside[c] = msg
    return post


def ffbs_sample(tree: TimeTree, rates: CtmcRates, leaves: CharacterMatrix, seed=None,
                time_scale: float = DEFAULT_TIME_SCALE) -> StateAnnotatedTree:
    """Draw one joint posterior sample of all node states (missing leaf entries imputed).

    Features are sampled independently; the RNG is a single stream seeded by
    ``seed`` and consumed in a fixed node order, so output is reproducible.
    """
    pr = _prune(tree, rates, leaves, time_scale)
    rng = np.random.default_rng(seed)
    n, p = tree.n_nodes, leaves.p
    u = rng.random((n, p))
    states = np.zeros((n, p), dtype=np.int8)
    r = tree.root
    w = pr.partials[r] * rates.root_distribution
    tot = w.sum(axis=1)
    if np.any(tot <= 0):
        bad = int(np.flatnonzero(tot <= 0)[0])
        raise ZeroLikelihoodError(f"feature {leaves.feature_names[bad]!r} has zero likelihood")
    states[r] = u[r] < w[:, 1] / tot
    P = pr.matrices
    cols = np.arange(p)
    for v in tree.preorder:
        if v == r:
            continue
        par = states[tree.parent[v]]
        w = P[v][par] * pr.partials[v]             # (p, 2)
        tot = w.sum(axis=1)
        if np.any(tot <= 0):
            bad = int(cols[tot <= 0][0])
            raise ZeroLikelihoodError(f"feature {leaves.feature_names[bad]!r} has zero likelihood")
        states[v] = u[v] < w[:, 1] / tot
    return StateAnnotatedTree(tree, states)


def ffbs_samples(tree: TimeTree, rates: CtmcRates, leaves: CharacterMatrix, n_samples: int,
                 seed=None, time_scale: float = DEFAULT_TIME_SCALE) -> list[StateAnnotatedTree]:
    """Independent FFBS draws, each seeded from a spawned child of ``seed``."""
    children = np.random.SeedSequence(seed).spawn(n_samples)
    return [ffbs_sample(tree, rates, leaves, np.random.default_rng(c), time_scale) for c in children]


def fit_rates(tree: TimeTree, leaves: CharacterMatrix, symmetric: bool = True,
              time_scale: float = DEFAULT_TIME_SCALE, bracket=(1e-4, 1e2)) -> CtmcRates:
    """Maximum-likelihood rates on a fixed tree.

    Symmetric (alpha = beta) uses golden-section search on log(rate);
    asymmetric uses Nelder-Mead on (log alpha, log beta). This is a point
    estimate, not a posterior over rates.
    """
    lo, hi = np.log(bracket[0]), np.log(bracket[1])

    def nll(log_a, log_b):
        ll = prune_loglik(tree, CtmcRates(np.exp(log_a), np.exp(log_b)), leaves, time_scale).sum()
        return -ll if np.isfinite(ll) else 1e300

    res = optimize.minimize_scalar(lambda x: nll(x, x), bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-6})
    if symmetric:
        r = float(np.exp(res.x))
        return CtmcRates(r, r)
    x0 = np.array([res.x, res.x])
    res2 = optimize.minimize(lambda x: nll(*np.clip(x, lo, hi)), x0, method="Nelder-Mead",
                             options={"xatol": 1e-6, "fatol": 1e-8, "maxiter": 2000})
    a, b = np.exp(np.clip(res2.x, lo, hi))
    return CtmcRates(float(a), float(b))
