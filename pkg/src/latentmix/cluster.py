"""Agglomerative clustering over inferred correlation matrices.

Dissimilarity is ``1 - correlation``.  Merging is average linkage (UPGMA) by
default, with deterministic tie-breaking: candidate pairs at the minimal
distance are ordered by their clusters' smallest original member indices.
Dendrogram leaf order is the recursive order with the smaller-minimum-member
child first, which maps an identity correlation to the input order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .validation import check_correlation_matrix, check_dissimilarity_matrix

__all__ = [
    "Dendrogram",
    "dissimilarity",
    "agglomerate",
    "cut",
    "leaf_order",
    "to_newick",
    "parse_newick",
]


@dataclass
class Dendrogram:
    """Binary merge tree over labeled leaves.

    Nodes 0..D-1 are leaves; internal node D+m is created by ``merges[m] =
    (left, right, height)``.  Heights are non-decreasing for average linkage.
    """

    labels: list
    merges: list  # (left node id, right node id, height)

    @property
    def n_leaves(self) -> int:
        return len(self.labels)

    @property
    def heights(self) -> np.ndarray:
        return np.array([h for _, _, h in self.merges])

    def node_height(self, node) -> float:
        if node < self.n_leaves:
            return 0.0
        return float(self.merges[node - self.n_leaves][2])

    def children(self, node):
        left, right, _ = self.merges[node - self.n_leaves]
        return left, right

    def members(self, node) -> list:
        """Leaf indices under a node, ascending."""
        if node < self.n_leaves:
            return [node]
        left, right = self.children(node)
        return sorted(self.members(left) + self.members(right))

    def validate(self):
        if len(self.merges) != self.n_leaves - 1:
            raise ValueError("a binary merge tree needs exactly D - 1 merges")
        return self


def dissimilarity(corr) -> np.ndarray:
    """1 - correlation, with an exactly zero diagonal."""
    corr = check_correlation_matrix(corr)
    out = 1.0 - corr
    np.fill_diagonal(out, 0.0)
    return out


def agglomerate(diss, labels=None, linkage="average") -> Dendrogram:
    """Build the merge tree for a dissimilarity matrix.

    ``linkage`` is "average" (UPGMA) or "complete".  Ties at the minimal
    distance merge the pair whose clusters contain the lowest original
    indices.
    """
    diss = check_dissimilarity_matrix(diss)
    n = diss.shape[0]
    if n < 2:
        raise ValueError("clustering needs at least 2 entities")
    if linkage not in ("average", "complete"):
        raise ValueError(f"unknown linkage {linkage!r}")
    if labels is None:
        labels = [str(i) for i in range(n)]
    labels = [str(x) for x in labels]
    if len(labels) != n:
        raise ValueError("label count must match matrix size")

    # active clusters kept sorted by smallest original member, so a row-major
    # argmin over the working matrix realizes the lowest-index tie-break
    node_ids = list(range(n))
    min_members = list(range(n))
    sizes = [1] * n
    work = diss.astype(float).copy()
    merges = []
    next_id = n
    while len(node_ids) > 1:
        m = len(node_ids)
        masked = work + np.where(np.tri(m, dtype=bool), np.inf, 0.0)
        a, b = divmod(int(np.argmin(masked)), m)
        height = float(work[a, b])
        merges.append((node_ids[a], node_ids[b], height))

        others = [t for t in range(m) if t not in (a, b)]
        if linkage == "average":
            new_row = (sizes[a] * work[a, others] + sizes[b] * work[b, others]) / (
                sizes[a] + sizes[b]
            )
        else:
            new_row = np.maximum(work[a, others], work[b, others])

        # the merged cluster replaces position a (a < b), so the list stays
        # sorted by smallest member after dropping position b
        keep = [t for t in range(m) if t != b]
        work = work[np.ix_(keep, keep)]
        others_pos = [p for p in range(len(keep)) if p != a]
        work[a, others_pos] = new_row
        work[others_pos, a] = new_row
        sizes = [sizes[a] + sizes[b] if t == a else sizes[t] for t in keep]
        min_members = [min_members[t] for t in keep]
        node_ids = [next_id if t == a else node_ids[t] for t in keep]
        next_id += 1

    return Dendrogram(labels=labels, merges=merges).validate()


def _min_member(merges, n_leaves, node):
    if node < n_leaves:
        return node
    left, right, _ = merges[node - n_leaves]
    return min(_min_member(merges, n_leaves, left), _min_member(merges, n_leaves, right))


def leaf_order(dend: Dendrogram) -> list:
    """Recursive leaf order, smaller-minimum-member child first."""
    n = dend.n_leaves
    if n == 1:
        return [0]
    root = n + len(dend.merges) - 1

    def walk(node):
        if node < n:
            return [node]
        left, right = dend.children(node)
        if _min_member(dend.merges, n, left) > _min_member(dend.merges, n, right):
            left, right = right, left
        return walk(left) + walk(right)

    return walk(root)


def cut(dend: Dendrogram, k: int) -> np.ndarray:
    """Flat clustering with exactly k clusters, labels numbered by lowest
    member; cuts the k-1 highest merges."""
    n = dend.n_leaves
    if not 1 <= k <= n:
        raise ValueError(f"cluster count must be in 1..{n}")
    kept = dend.merges[: n - k]
    parent = list(range(n + len(kept)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for m, (left, right, _) in enumerate(kept):
        node = n + m
        parent[find(left)] = node
        parent[find(right)] = node

    assign = np.zeros(n, dtype=np.int64)
    groups = {}
    for leaf in range(n):
        groups.setdefault(find(leaf), []).append(leaf)
    for label, root in enumerate(sorted(groups, key=lambda r: min(groups[r]))):
        for leaf in groups[root]:
            assign[leaf] = label
    return assign


def _quote_label(label: str) -> str:
    if any(ch in label for ch in ",();:'\" \t\n[]") or label == "":
        return "'" + label.replace("'", "''") + "'"
    return label


def to_newick(dend: Dendrogram) -> str:
    """Newick text with branch lengths = parent height - child height."""
    n = dend.n_leaves
    if n == 1:
        return _quote_label(dend.labels[0]) + ";"
    root = n + len(dend.merges) - 1

    def render(node, parent_height):
        height = dend.node_height(node)
        branch = parent_height - height
        if node < n:
            return f"{_quote_label(dend.labels[node])}:{branch!r}"
        left, right = dend.children(node)
        if _min_member(dend.merges, n, left) > _min_member(dend.merges, n, right):
            left, right = right, left
        inner = f"({render(left, height)},{render(right, height)})"
        return f"{inner}:{branch!r}" if node != root else inner

    return render(root, dend.node_height(root)) + ";"


class _NewickParser:
    def __init__(self, text):
        self.text = text
        self.pos = 0

    def error(self, message):
        raise ValueError(f"newick parse error at {self.pos}: {message}")

    def peek(self):
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def take(self, ch):
        if self.peek() != ch:
            self.error(f"expected {ch!r}")
        self.pos += 1

    def label(self):
        if self.peek() == "'":
            self.pos += 1
            out = []
            while True:
                if self.pos >= len(self.text):
                    self.error("unterminated quoted label")
                ch = self.text[self.pos]
                if ch == "'":
                    if self.pos + 1 < len(self.text) and self.text[self.pos + 1] == "'":
                        out.append("'")
                        self.pos += 2
                        continue
                    self.pos += 1
                    break
                out.append(ch)
                self.pos += 1
            return "".join(out)
        out = []
        while self.peek() not in ("", ",", ")", "(", ":", ";"):
            out.append(self.text[self.pos])
            self.pos += 1
        return "".join(out)

    def branch_length(self):
        if self.peek() != ":":
            return 0.0
        self.pos += 1
        start = self.pos
        while self.peek() not in ("", ",", ")", ";"):
            self.pos += 1
        return float(self.text[start : self.pos])

    def node(self):
        """Returns (subtree, branch) where subtree is a label or (left, right, gap)."""
        if self.peek() == "(":
            self.pos += 1
            left = self.node()
            self.take(",")
            right = self.node()
            self.take(")")
            self.label()  # internal labels ignored
            return (left, right), self.branch_length()
        name = self.label()
        return name, self.branch_length()


def parse_newick(text: str) -> Dendrogram:
    """Parse a binary ultrametric Newick string back into a dendrogram."""
    parser = _NewickParser(text.strip())
    tree, _ = parser.node()
    if parser.peek() != ";":
        parser.error("expected trailing ';'")
    labels = []
    merges = []

    def build(subtree):
        """Returns (temporary node ref, height)."""
        if isinstance(subtree, str):
            labels.append(subtree)
            return ("leaf", len(labels) - 1), 0.0
        (left, left_branch), (right, right_branch) = subtree
        left_ref, left_h = build(left)
        right_ref, right_h = build(right)
        height = max(left_h + left_branch, right_h + right_branch)
        merges.append((left_ref, right_ref, height))
        return ("merge", len(merges) - 1), height

    if isinstance(tree, str):
        labels.append(tree)
        return Dendrogram(labels=labels, merges=[])
    build(tree)
    n = len(labels)
    resolved = [
        (
            ref_left[1] if ref_left[0] == "leaf" else n + ref_left[1],
            ref_right[1] if ref_right[0] == "leaf" else n + ref_right[1],
            height,
        )
        for ref_left, ref_right, height in merges
    ]
    return Dendrogram(labels=labels, merges=resolved).validate()
