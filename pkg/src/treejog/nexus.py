"""Read and write BEAST-style NEXUS tree logs carrying per-node state annotations.

Supported dialect::

    #NEXUS
    Begin trees;
        Translate
            1 LangA,
            2 LangB
        ;
    tree STATE_0 = [&R] ((1[&states="01"]:1.0,2[&states="11"]:1.0)[&states="01"]:0.5, ...);
    End;

Annotations are ``[&key=value,...]`` comments attached after a node label or
closing parenthesis, or after the branch length. Only ``state_tag`` is
decoded; other keys are ignored. State strings use ``0``/``1`` with ``?`` or
``-`` for missing entries.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import StateAnnotatedTree, TimeTree
from .errors import InputError, NexusParseError, TopologyMismatchError

_LABEL_STOP = set("()[],:;=") | set(" \t\r\n")
_SAFE_LABEL = re.compile(r"^[A-Za-z0-9_.\-+/|*#@!%&~]+$")


@dataclass
class NexusTreeLog:
    translate: dict[int, str] = field(default_factory=dict)
    samples: list[tuple[str, StateAnnotatedTree]] = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    def select(self, index) -> tuple[str, StateAnnotatedTree]:
        """Pick a sample by integer index, ``"last"`` or ``"first"``."""
        if not self.samples:
            raise InputError("tree log contains no samples")
        if index in ("last", None):
            return self.samples[-1]
        if index == "first":
            return self.samples[0]
        try:
            return self.samples[int(index)]
        except (ValueError, IndexError):
            raise InputError(f"sample index {index!r} out of range for {len(self.samples)} samples") from None


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _split_statements(text: str) -> list[str]:
    """Split on ';' outside of quotes and bracket comments."""
    out, buf = [], []
    depth = 0
    quote = None
    for ch in text:
        if quote:
            buf.append(ch)
            if ch == quote:
                quote = None
            continue
        if ch in "'\"":
            quote = ch
        elif ch == "[":
            depth += 1
        elif ch == "]":
            depth = max(depth - 1, 0)
        elif ch == ";" and depth == 0:
            out.append("".join(buf).strip())
            buf = []
            continue
        buf.append(ch)
    tail = "".join(buf).strip()
    if tail:
        out.append(tail)
    return out


def _split_top(s: str, sep: str = ",") -> list[str]:
    """Split on ``sep`` outside quotes, braces and brackets."""
    parts, buf, depth, quote = [], [], 0, None
    for ch in s:
        if quote:
            buf.append(ch)
            if ch == quote:
                quote = None
            continue
        if ch in "'\"":
            quote = ch
        elif ch in "{[(":
            depth += 1
        elif ch in "}])":
            depth -= 1
        elif ch == sep and depth == 0:
            parts.append("".join(buf))
            buf = []
            continue
        buf.append(ch)
    parts.append("".join(buf))
    return parts


def _unquote(s: str) -> str:
    s = s.strip()
    if len(s) >= 2 and s[0] == s[-1] and s[0] in "'\"":
        return s[1:-1].replace(s[0] * 2, s[0])
    return s


def _parse_annotation(body: str) -> dict[str, str]:
    """Parse the inside of ``[&...]`` into a dict."""
    out = {}
    for item in _split_top(body):
        item = item.strip()
        if not item:
            continue
        key, eq, value = item.partition("=")
        out[key.strip()] = _unquote(value) if eq else ""
    return out


class _NewickReader:
    def __init__(self, text: str):
        self.s = text
        self.i = 0
        self.parent: list[int] = []
        self.length: list[float | None] = []
        self.label: list[str | None] = []
        self.annot: list[dict[str, str]] = []

    def error(self, msg):
        raise NexusParseError(f"{msg} at offset {self.i} in {self.s[:60]!r}...")

    def peek(self):
        self._skip_ws()
        return self.s[self.i] if self.i < len(self.s) else ""

    def _skip_ws(self):
        while self.i < len(self.s) and self.s[self.i].isspace():
            self.i += 1

    def _comments(self, node: int):
        while self.peek() == "[":
            end = self.s.find("]", self.i)
            if end < 0:
                self.error("unterminated comment")
            body = self.s[self.i + 1:end]
            # a ']' inside a quoted value would end the comment early
            while body.count('"') % 2:
                end = self.s.find("]", end + 1)
                if end < 0:
                    self.error("unterminated comment")
                body = self.s[self.i + 1:end]
            if body.startswith("&"):
                self.annot[node].update(_parse_annotation(body[1:]))
            self.i = end + 1

    def _label(self) -> str | None:
        self._skip_ws()
        if self.i >= len(self.s):
            return None
        ch = self.s[self.i]
        if ch == "'":
            j = self.i + 1
            buf = []
            while True:
                if j >= len(self.s):
                    self.error("unterminated quoted label")
                if self.s[j] == "'":
                    if j + 1 < len(self.s) and self.s[j + 1] == "'":
                        buf.append("'")
                        j += 2
                        continue
                    break
                buf.append(self.s[j])
                j += 1
            self.i = j + 1
            return "".join(buf)
        j = self.i
        while j < len(self.s) and self.s[j] not in _LABEL_STOP:
            j += 1
        if j == self.i:
            return None
        tok = self.s[self.i:j]
        self.i = j
        return tok

    def _new_node(self, parent: int) -> int:
        self.parent.append(parent)
        self.length.append(None)
        self.label.append(None)
        self.annot.append({})
        return len(self.parent) - 1

    def node(self, parent: int) -> int:
        v = self._new_node(parent)
        if self.peek() == "(":
            self.i += 1
            while True:
                self.node(v)
                c = self.peek()
                if c == ",":
                    self.i += 1
                    continue
                if c == ")":
                    self.i += 1
                    break
                self.error("unbalanced parentheses")
        elif self.peek() in (")", ",", ";", ""):
            self.error("empty node")
        self.label[v] = self._label()
        self._comments(v)
        if self.peek() == ":":
            self.i += 1
            self._comments(v)
            self._skip_ws()
            m = re.compile(r"[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?").match(self.s, self.i)
            if not m:
                self.error("bad branch length")
            self.length[v] = float(m.group(0))
            self.i = m.end()
            self._comments(v)
        return v

    def parse(self):
        root = self.node(-1)
        c = self.peek()
        if c == ")":
            self.error("unbalanced parentheses")
        if c not in ("", ";"):
            self.error(f"unexpected character {c!r}")
        return root


def _decode_states(value: str, where: str) -> tuple[np.ndarray, np.ndarray]:
    value = value.strip()
    states = np.zeros(len(value), dtype=np.int8)
    missing = np.zeros(len(value), dtype=bool)
    for j, ch in enumerate(value):
        if ch == "1":
            states[j] = 1
        elif ch in "?-":
            missing[j] = True
        elif ch != "0":
            raise NexusParseError(f"non-binary character {ch!r} in state string of {where}")
    return states, missing


def parse_newick(newick: str, state_tag: str = "states",
                 translate: dict[int, str] | None = None, name: str = "tree") -> StateAnnotatedTree:
    """Parse one annotated Newick string into a :class:`StateAnnotatedTree`.

    Ages are recovered from branch lengths with the deepest leaf at age 0.
    """
    text = newick.strip()
    while text.startswith("["):                    # leading [&R] / [&U]
        end = text.find("]")
        if end < 0:
            raise NexusParseError(f"unterminated comment in tree {name}")
        text = text[end + 1:].lstrip()
    if text.count("(") != text.count(")"):
        raise NexusParseError(f"malformed Newick in tree {name}: unbalanced parentheses")
    r = _NewickReader(text)
    r.parse()
    n = len(r.parent)
    for v in range(1, n):
        if r.length[v] is None:
            raise NexusParseError(f"node without branch length in tree {name}")
        if r.length[v] < 0:
            raise NexusParseError(f"negative branch length in tree {name}")
    has_kids = [False] * n
    for v in range(1, n):
        has_kids[r.parent[v]] = True
    depth = np.zeros(n)
    for v in range(1, n):                          # parents precede children
        depth[v] = depth[r.parent[v]] + r.length[v]
    ages = depth.max() - depth
    ages[ages < 0] = 0.0
    labels: list[str | None] = []
    for v in range(n):
        if has_kids[v]:
            labels.append(None)
            continue
        lab = r.label[v]
        if lab is None:
            raise NexusParseError(f"unlabelled leaf in tree {name}")
        if translate:
            try:
                lab = translate[int(lab)]
            except (ValueError, KeyError):
                raise NexusParseError(f"unknown translate id {lab!r} in tree {name}") from None
        labels.append(lab)
    tree = TimeTree(tuple(r.parent), ages, tuple(labels), allow_zero_branches=True)

    decoded = {}
    for v in range(n):
        if state_tag in r.annot[v]:
            decoded[v] = _decode_states(r.annot[v][state_tag], f"tree {name}")
    lengths = {len(s) for s, _ in decoded.values()}
    if len(lengths) > 1:
        raise NexusParseError(f"state strings of inconsistent length {sorted(lengths)} in tree {name}")
    p = lengths.pop() if lengths else 0
    states = np.zeros((n, p), dtype=np.int8)
    missing = np.ones((n, p), dtype=bool)
    for v, (s, m) in decoded.items():
        states[v], missing[v] = s, m
    return StateAnnotatedTree(tree, states, missing)


_TREE_STMT = re.compile(r"^u?tree\s+(\*\s*)?('(?:[^']|'')*'|[^\s=\[]+)\s*((?:\[[^\]]*\]\s*)*)=\s*(.*)$",
                        re.IGNORECASE | re.DOTALL)


def parse_nexus(text: str, state_tag: str = "states") -> NexusTreeLog:
    """Parse every tree of the ``trees`` block of a NEXUS document."""
    m = re.search(r"begin\s+trees\s*;", text, re.IGNORECASE)
    if not m:
        raise NexusParseError("no trees block found")
    log = NexusTreeLog()
    for stmt in _split_statements(text[m.end():]):
        head = stmt.split(None, 1)[0].lower() if stmt else ""
        if head in ("end", "endblock"):
            break
        if head == "translate":
            body = stmt.split(None, 1)[1] if len(stmt.split(None, 1)) > 1 else ""
            for entry in _split_top(body):
                entry = entry.strip()
                if not entry:
                    continue
                parts = entry.split(None, 1)
                if len(parts) != 2:
                    raise NexusParseError(f"bad translate entry {entry!r}")
                try:
                    key = int(parts[0])
                except ValueError:
                    raise NexusParseError(f"translate id {parts[0]!r} is not an integer") from None
                log.translate[key] = _unquote(parts[1])
        elif head in ("tree", "utree"):
            tm = _TREE_STMT.match(stmt)
            if not tm:
                raise NexusParseError(f"bad tree statement {stmt[:60]!r}")
            name = _unquote(tm.group(2))
            sample = parse_newick(tm.group(4), state_tag, log.translate, name)
            log.samples.append((name, sample))
    if log.samples:
        ref = set(log.samples[0][1].tree.leaf_labels)
        for name, s in log.samples[1:]:
            if set(s.tree.leaf_labels) != ref:
                raise InputError(f"tree {name} has a different leaf set from the first tree")
    return log


def read_nexus(path, state_tag: str = "states") -> NexusTreeLog:
    with open(path, encoding="utf-8") as fh:
        return parse_nexus(fh.read(), state_tag)


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------

def _fmt_label(label: str) -> str:
    if _SAFE_LABEL.match(label):
        return label
    return "'" + label.replace("'", "''") + "'"


def _encode_states(states: np.ndarray, missing: np.ndarray) -> str:
    return "".join("?" if m else ("1" if s else "0") for s, m in zip(states, missing))


def _id_table(log: NexusTreeLog) -> dict[int, str]:
    table = dict(log.translate)
    labels = set()
    for _, s in log.samples:
        labels.update(s.tree.leaf_labels)
    missing = sorted(labels - set(table.values()))
    nxt = max(table, default=0) + 1
    for lab in missing:
        table[nxt] = lab
        nxt += 1
    return table


def write_newick(sample: StateAnnotatedTree, state_tag: str = "states",
                 ids: dict[str, int] | None = None) -> str:
    """Canonical annotated Newick; children ordered by smallest descendant id."""
    tree = sample.tree
    token = {}
    key = {}
    for v in tree.leaves:
        lab = tree.label[v]
        token[v] = str(ids[lab]) if ids else _fmt_label(lab)
        key[v] = (ids[lab], "") if ids else (0, lab)
    for v in tree.postorder:
        if not tree.is_leaf(v):
            key[v] = min(key[c] for c in tree.children[v])

    def annot(v):
        if sample.p == 0 or sample.missing[v].all():
            return ""
        return f'[&{state_tag}="{_encode_states(sample.states[v], sample.missing[v])}"]'

    def rec(v) -> str:
        if tree.is_leaf(v):
            body = token[v]
        else:
            kids = sorted(tree.children[v], key=lambda c: key[c])
            body = "(" + ",".join(rec(c) + ":" + repr(tree.branch_length(c)) for c in kids) + ")"
        return body + annot(v)

    # recursion depth is bounded by tree height; fine for linguistic trees
    return rec(tree.root) + ";"


def write_nexus(log: NexusTreeLog, state_tag: str = "states") -> str:
    table = _id_table(log)
    ids = {lab: k for k, lab in table.items()}
    lines = ["#NEXUS", "", "Begin trees;"]
    if table:
        lines.append("\tTranslate")
        keys = sorted(table)
        for n, k in enumerate(keys):
            sep = "," if n < len(keys) - 1 else ""
            lines.append(f"\t\t{k} {_fmt_label(table[k])}{sep}")
        lines.append("\t\t;")
    for name, sample in log.samples:
        lines.append(f"tree {_fmt_label(name)} = [&R] {write_newick(sample, state_tag, ids)}")
    lines.append("End;")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Merging partitioned loggers
# ---------------------------------------------------------------------------

def _same_topology(a: TimeTree, b: TimeTree, tol: float) -> tuple[bool, list[int], list[int]]:
    oa, ob = a.canonical_preorder(), b.canonical_preorder()
    if len(oa) != len(ob):
        return False, oa, ob
    pa = {v: k for k, v in enumerate(oa)}
    pb = {v: k for k, v in enumerate(ob)}
    for u, v in zip(oa, ob):
        if a.label[u] != b.label[v]:
            return False, oa, ob
        if (a.parent[u] < 0) != (b.parent[v] < 0):
            return False, oa, ob
        if a.parent[u] >= 0 and pa[a.parent[u]] != pb[b.parent[v]]:
            return False, oa, ob
    ok = np.allclose(a.age[oa], b.age[ob], rtol=0, atol=tol)
    return bool(ok), oa, ob


def merge_state_logs(logs: Sequence[NexusTreeLog], partition_order: Sequence[int] | None = None,
                     age_tol: float = 1e-9) -> NexusTreeLog:
    """Concatenate per-partition node states of logs holding copies of the same trees.

    ``partition_order`` lists indices into ``logs``; the merged state vector of
    every node is the concatenation of the partitions in that order.
    """
    if not logs:
        raise InputError("nothing to merge")
    order = list(range(len(logs))) if partition_order is None else [int(k) for k in partition_order]
    if sorted(order) != list(range(len(logs))):
        raise InputError(f"partition_order {order} is not a permutation of 0..{len(logs) - 1}")
    counts = {len(lg.samples) for lg in logs}
    if len(counts) != 1:
        raise InputError(f"logs have differing sample counts {sorted(counts)}")
    base = logs[order[0]]
    merged = NexusTreeLog(translate=dict(base.translate))
    for idx, (name, first) in enumerate(base.samples):
        ref = first.tree
        blocks_s, blocks_m = [], []
        for k in order:
            other = logs[k].samples[idx][1]
            ok, oa, ob = _same_topology(ref, other.tree, age_tol)
            if not ok:
                raise TopologyMismatchError(f"sample {idx} ({name}): log {k} has a different tree")
            s = np.zeros_like(other.states)
            m = np.zeros_like(other.missing)
            s[oa] = other.states[ob]
            m[oa] = other.missing[ob]
            blocks_s.append(s)
            blocks_m.append(m)
        merged.samples.append((name, StateAnnotatedTree(ref, np.hstack(blocks_s), np.hstack(blocks_m))))
    return merged
