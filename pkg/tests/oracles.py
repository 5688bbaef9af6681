"""Independent reference computations used to check the library.

Nothing here calls into the code paths under test beyond building inputs.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from treejog.core import TimeTree


def expm_series(q: np.ndarray, t: float, terms: int = 60) -> np.ndarray:
    """exp(Q t) by scaling-and-squaring around a truncated Taylor series."""
    a = q * t
    norm = np.abs(a).sum(axis=1).max()
    k = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0.5 else 0
    a = a / 2 ** k
    out = np.eye(len(q))
    term = np.eye(len(q))
    for n in range(1, terms):
        term = term @ a / n
        out = out + term
    for _ in range(k):
        out = out @ out
    return out


def rate_matrix(alpha: float, beta: float) -> np.ndarray:
    return np.array([[-alpha, alpha], [beta, -beta]])


def random_tree(rng: np.random.Generator, n_leaves: int, prefix: str = "T") -> TimeTree:
    """Random coalescent-style ultrametric topology with random ages."""
    active = list(range(n_leaves))
    parent = [-1] * (2 * n_leaves - 1)
    age = [0.0] * (2 * n_leaves - 1)
    t = 0.0
    nxt = n_leaves
    while len(active) > 1:
        t += float(rng.exponential(1.0)) + 0.05
        i, j = sorted(rng.choice(len(active), 2, replace=False), reverse=True)
        a, b = active.pop(i), active.pop(j)
        parent[a] = parent[b] = nxt
        age[nxt] = t
        active.append(nxt)
        nxt += 1
    labels = [f"{prefix}{i}" for i in range(n_leaves)] + [None] * (n_leaves - 1)
    return TimeTree(tuple(parent), np.array(age), tuple(labels))


def all_topologies(labels):
    """Every rooted binary topology on ``labels`` as nested tuples."""
    labels = list(labels)
    if len(labels) == 1:
        yield labels[0]
        return
    first, rest = labels[0], labels[1:]
    # split into two non-empty groups; `first` always lands in the left group
    for r in range(0, len(rest)):
        for left_rest in itertools.combinations(rest, r):
            right = [x for x in rest if x not in left_rest]
            if not right:
                continue
            for lt in all_topologies([first, *left_rest]):
                for rt in all_topologies(right):
                    yield (lt, rt)


def tree_from_nested(nested, rng: np.random.Generator) -> TimeTree:
    parent, age, label = [], [], []

    def rec(node, par):
        v = len(parent)
        parent.append(par)
        age.append(0.0)
        label.append(node if isinstance(node, str) else None)
        if not isinstance(node, str):
            for c in node:
                rec(c, v)
        return v

    rec(nested, -1)
    # heights: leaves 0, internal = max(child) + random positive
    n = len(parent)
    kids = [[] for _ in range(n)]
    for v, p in enumerate(parent):
        if p >= 0:
            kids[p].append(v)
    for v in reversed(range(n)):
        if kids[v]:
            age[v] = max(age[c] for c in kids[v]) + float(rng.uniform(0.1, 1.5))
    return TimeTree(tuple(parent), np.array(age), tuple(label))


def _leaf_options(x, missing):
    return (0, 1) if missing else (int(x),)


def enumerate_joint(tree: TimeTree, alpha, beta, pi1, leaf_values, leaf_missing, t_scale=1.0):
    """Yield (assignment dict node->state, probability) over all hidden states for one feature."""
    hidden = list(tree.internal_nodes)
    leaf_ids = list(tree.leaves)
    q = rate_matrix(alpha, beta)
    P = {v: expm_series(q, tree.branch_length(v) / t_scale) for v in range(tree.n_nodes)
         if tree.parent[v] >= 0}
    opts = [_leaf_options(leaf_values[v], leaf_missing[v]) for v in leaf_ids]
    for h in itertools.product((0, 1), repeat=len(hidden)):
        for lv in itertools.product(*opts):
            s = dict(zip(hidden, h))
            s.update(zip(leaf_ids, lv))
            pr = pi1 if s[tree.root] else 1 - pi1
            for v, m in P.items():
                pr *= m[s[tree.parent[v]], s[v]]
            yield s, pr


def enumerate_likelihood(tree, alpha, beta, pi1, leaf_values, leaf_missing, t_scale=1.0) -> float:
    return sum(pr for _, pr in enumerate_joint(tree, alpha, beta, pi1, leaf_values, leaf_missing, t_scale))


def enumerate_marginals(tree, alpha, beta, pi1, leaf_values, leaf_missing, t_scale=1.0) -> np.ndarray:
    """Posterior P(state=1) per node by enumeration."""
    tot = 0.0
    ones = np.zeros(tree.n_nodes)
    for s, pr in enumerate_joint(tree, alpha, beta, pi1, leaf_values, leaf_missing, t_scale):
        tot += pr
        for v, x in s.items():
            if x:
                ones[v] += pr
    return ones / tot


def jacobi_eigh(a: np.ndarray, tol: float = 1e-15, max_sweeps: int = 100):
    """Cyclic Jacobi rotations for a symmetric matrix; returns (values, vectors) descending."""
    a = np.array(a, dtype=float)
    n = len(a)
    v = np.eye(n)
    scale = max(1.0, np.abs(a).max())
    for _ in range(max_sweeps):
        if np.sqrt((np.tril(a, -1) ** 2).sum()) < tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2 * apq)
                t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + math.sqrt(theta * theta + 1))
                c = 1 / math.sqrt(t * t + 1)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    vals = np.diag(a).copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], v[:, order]


def covariance_pca(x: np.ndarray):
    """PCA by Jacobi eigendecomposition of the sample covariance.

    Returns (eigenvalues, axes as rows, centred data). For wide matrices the
    n x n Gram form X X^T / (n-1) is decomposed instead (same non-zero
    spectrum) and axes are recovered as X^T u / |X^T u|.
    """
    n, p = x.shape
    xc = x - x.mean(axis=0)
    if p <= n:
        vals, vecs = jacobi_eigh(xc.T @ xc / (n - 1))
        return vals, vecs.T, xc
    vals, u = jacobi_eigh(xc @ xc.T / (n - 1))
    axes = []
    for i in range(n):
        w = xc.T @ u[:, i]
        nrm = np.linalg.norm(w)
        axes.append(w / nrm if nrm > 1e-12 else np.zeros(p))
    return vals, np.array(axes), xc


def orient_rows(axes: np.ndarray) -> np.ndarray:
    axes = np.array(axes, dtype=float)
    out = []
    for row in axes:
        m = max(abs(x) for x in row)
        i = next(j for j, x in enumerate(row) if abs(x) >= m * (1 - 1e-9))
        out.append(row if row[i] >= 0 else -row)
    return np.array(out)
