"""Decision-tree induction under a pairwise action-loss impurity.

The impurity of a node with empirical action distribution P is the
expected loss between two independent draws::

    I(n) = sum_a sum_a' P(a) * P(a') * loss(a, a')

With the 0/1 loss this is exactly the Gini impurity.  Trees are grown to
purity with greedy binary splits (value < threshold goes left), labelled
with loss-medoid actions, and pruned by minimal cost-complexity pruning
into a nested sequence indexed by the complexity parameter alpha.

Split selection is exact: candidates are screened with vectorized float
arithmetic, then every near-minimal candidate is re-scored in rational
arithmetic, so the chosen (feature, threshold) and the reported impurity
decrease are independent of float summation order.  Tie rule: lowest
weighted child impurity, then lowest feature index, then lowest threshold.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

N_ACTIONS = 5

_SCREEN_BAND = 1e-6  # relative slack for the float screen before exact scoring


class LossFunction:
    """Symmetric pairwise loss over the discrete action space."""

    def __init__(self, matrix: np.ndarray, kind: str = "table"):
        m = np.asarray(matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("loss matrix must be square")
        if np.any(np.diag(m) != 0.0):
            raise ValueError("loss of an action against itself must be 0")
        off = ~np.eye(m.shape[0], dtype=bool)
        if np.any(m[off] <= 0.0):
            raise ValueError("loss between distinct actions must be positive")
        if np.any(m != m.T):
            raise ValueError("loss must be symmetric")
        self.matrix = m
        self.kind = kind
        self.exact = [[Fraction(v) for v in row] for row in m.tolist()]
        self.is_integer = bool(np.all(m == np.round(m)))
        self.int_matrix = m.astype(np.int64) if self.is_integer else None

    @property
    def n_actions(self) -> int:
        return self.matrix.shape[0]

    def __call__(self, a: int, b: int) -> float:
        return float(self.matrix[a, b])

    @classmethod
    def absolute(cls, n: int = N_ACTIONS) -> "LossFunction":
        idx = np.arange(n, dtype=np.float64)
        return cls(np.abs(idx[:, None] - idx[None, :]), kind="absolute")

    @classmethod
    def zero_one(cls, n: int = N_ACTIONS) -> "LossFunction":
        return cls(1.0 - np.eye(n), kind="zero_one")

    def to_json(self) -> dict:
        if self.kind in ("absolute", "zero_one"):
            return {"kind": self.kind, "n": self.n_actions}
        return {"kind": "table", "matrix": self.matrix.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "LossFunction":
        if data["kind"] == "absolute":
            return cls.absolute(int(data["n"]))
        if data["kind"] == "zero_one":
            return cls.zero_one(int(data["n"]))
        return cls(np.asarray(data["matrix"]))


def impurity(counts: Sequence[float] | np.ndarray, loss: LossFunction) -> float:
    """Expected pairwise loss between two draws from the node distribution."""
    c = np.asarray(counts, dtype=np.float64)
    if np.any(c < 0):
        raise ValueError("class counts must be nonnegative")
    total = c.sum()
    if total <= 0:
        raise ValueError("impurity of an empty node is undefined")
    p = c / total
    return float(p @ loss.matrix @ p)


def _exact_quad(counts: np.ndarray, loss: LossFunction) -> Fraction:
    """sum_ab counts_a counts_b loss_ab in rational arithmetic."""
    total = Fraction(0)
    nz = np.nonzero(counts)[0]
    for a in nz:
        ca = int(counts[a])
        row = loss.exact[a]
        for b in nz:
            total += ca * int(counts[b]) * row[b]
    return total


def _exact_weighted(cl: np.ndarray, cr: np.ndarray, loss: LossFunction) -> Fraction:
    """Exact weighted child impurity (nL/n)*I_L + (nR/n)*I_R."""
    nl, nr = int(cl.sum()), int(cr.sum())
    n = nl + nr
    out = Fraction(0)
    if nl:
        out += _exact_quad(cl, loss) / (n * nl)
    if nr:
        out += _exact_quad(cr, loss) / (n * nr)
    return out


def medoid_label(counts: np.ndarray, loss: LossFunction) -> int:
    """Action minimizing total loss to the node's samples; ties to lowest."""
    costs = loss.matrix @ np.asarray(counts, dtype=np.float64)
    return int(np.argmin(costs))


@dataclass
class _Candidate:
    weighted: Fraction
    feature: int
    threshold: float

    def key(self) -> tuple:
        return (self.weighted, self.feature, self.threshold)


_CHUNK = 96  # feature columns screened per block; bounds transient memory


def _exact_weighted_counts(cl: np.ndarray, cr: np.ndarray,
                           loss: LossFunction) -> Fraction:
    """Exact weighted child impurity; integer losses avoid Fraction sums."""
    nl, nr = int(cl.sum()), int(cr.sum())
    n = nl + nr
    if loss.is_integer:
        a = int(cl @ loss.int_matrix @ cl)
        b = int(cr @ loss.int_matrix @ cr)
        return Fraction(a * nr + b * nl, n * nl * nr)
    return _exact_weighted(cl, cr, loss)


def _screen(order: np.ndarray, X: np.ndarray, y: np.ndarray,
            loss: LossFunction, cols: np.ndarray
            ) -> list[tuple[float, int, float, np.ndarray]]:
    """Screen every candidate threshold of the given columns.

    ``order`` holds, per column, the node's row indices sorted by that
    column's value.  Returns (float weighted impurity, feature, threshold,
    left class counts) for every candidate within the screening band of
    the block minimum; exact selection happens in the caller.

    The quadratic forms are built incrementally: appending a row with
    label a to the left side adds ``2 * (M @ counts)[a]`` (the diagonal of
    the loss is zero), and the right side follows from the identity
    q(T - C) = q(T) - 2 C.(M @ T) + q(C).
    """
    n = order.shape[0]
    vals = X[order, cols[None, :]]
    labels = y[order]
    total = np.bincount(labels[:, 0], minlength=loss.n_actions)
    w_total = loss.matrix @ total.astype(np.float64)
    quad_total = float(total @ loss.matrix @ total)
    onehot = np.zeros((n, order.shape[1], loss.n_actions), dtype=np.float64)
    rows = np.arange(n)[:, None]
    onehot[rows, np.arange(order.shape[1])[None, :], labels] = 1.0
    cum = np.cumsum(onehot, axis=0)
    t_rows = loss.matrix[labels]
    incr = 2.0 * np.einsum("nck,nck->nc", t_rows[1:], cum[:-1])
    a_quad = np.concatenate([np.zeros((1, order.shape[1])),
                             np.cumsum(incr, axis=0)])
    b_quad = quad_total - 2.0 * (cum @ w_total) + a_quad
    nl = np.arange(1, n, dtype=np.float64)[:, None]
    weighted = (a_quad[:-1] / nl + b_quad[:-1] / (n - nl)) / n
    cuts = vals[:-1] < vals[1:]
    if not cuts.any():
        return []
    weighted = np.where(cuts, weighted, np.inf)
    m = float(weighted.min())
    band = m + _SCREEN_BAND * max(1.0, abs(m))
    out = []
    for k, c in zip(*np.nonzero(weighted <= band)):
        lo, hi = float(vals[k, c]), float(vals[k + 1, c])
        threshold = 0.5 * (lo + hi)
        if threshold <= lo:  # adjacent floats: midpoint not representable
            threshold = hi
        out.append((float(weighted[k, c]), int(cols[c]), threshold,
                    cum[k, c].astype(np.int64)))
    return out


def _best_candidate_ordered(order: np.ndarray, X: np.ndarray, y: np.ndarray,
                            loss: LossFunction) -> _Candidate | None:
    """Exact best split given presorted row orders (node rows x features)."""
    n, n_features = order.shape
    if n < 2:
        return None
    total = np.bincount(y[order[:, 0]], minlength=loss.n_actions)
    screened: list[tuple[float, int, float, np.ndarray]] = []
    for start in range(0, n_features, _CHUNK):
        cols = np.arange(start, min(start + _CHUNK, n_features))
        screened.extend(_screen(order[:, cols], X, y, loss, cols))
    if not screened:
        return None
    best_float = min(s[0] for s in screened)
    band = best_float + _SCREEN_BAND * max(1.0, abs(best_float))
    best: _Candidate | None = None
    for w_float, feature, threshold, cl in screened:
        if w_float > band:
            continue
        cand = _Candidate(
            weighted=_exact_weighted_counts(cl, total - cl, loss),
            feature=feature, threshold=threshold)
        if best is None or cand.key() < best.key():
            best = cand
    return best


def best_split(values: np.ndarray, y: np.ndarray, loss: LossFunction
               ) -> tuple[float, float] | None:
    """Best threshold for a single feature column.

    Candidates are midpoints between consecutive distinct sorted values;
    the winner minimizes the weighted child impurity (ties to the lowest
    threshold).  Returns (threshold, impurity decrease), or None when no
    split exists.  The decrease can be 0 for a pure column.
    """
    values = np.asarray(values, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(values) < 2:
        return None
    order = np.argsort(values, kind="stable")[:, None]
    cand = _best_candidate_ordered(order, values[:, None], y, loss)
    if cand is None:
        return None
    counts = np.bincount(y, minlength=loss.n_actions)
    parent = Fraction(_exact_quad(counts, loss), int(counts.sum()) ** 2)
    return cand.threshold, float(parent - cand.weighted)


class _Node:
    __slots__ = ("feature", "threshold", "left", "right", "counts", "label",
                 "risk_num")

    def __init__(self, counts: np.ndarray, loss: LossFunction):
        self.feature: int | None = None
        self.threshold = 0.0
        self.left: _Node | None = None
        self.right: _Node | None = None
        self.counts = counts
        self.label = medoid_label(counts, loss)
        self.risk_num = self.sum_loss(loss)  # exact, fixed once counts are set

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def collapse(self) -> None:
        self.feature, self.left, self.right = None, None, None

    def leaves(self) -> int:
        count, stack = 0, [self]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                count += 1
            else:
                stack.extend((node.left, node.right))
        return count

    def sum_loss(self, loss: LossFunction) -> Fraction | int:
        """Total loss of labelling every sample here with this node's label."""
        if loss.is_integer:
            return int(self.counts @ loss.int_matrix[self.label])
        out = Fraction(0)
        for a, c in enumerate(self.counts.tolist()):
            if c:
                out += c * loss.exact[self.label][a]
        return out


def _grow_root(X: np.ndarray, y: np.ndarray, loss: LossFunction) -> _Node:
    """Iterative growth with presorted row orders carried down the tree.

    ``order[:, j]`` lists a node's rows sorted by feature j; children
    inherit the sorted order by stable partition, so sorting happens once
    at the root.  Tree depth is data-dependent and can be large, hence the
    explicit stack.
    """

    def make(order: np.ndarray) -> tuple[_Node, _Candidate | None]:
        yn = y[order[:, 0]]
        counts = np.bincount(yn, minlength=loss.n_actions)
        node = _Node(counts, loss)
        if np.count_nonzero(counts) <= 1:
            return node, None
        cand = _best_candidate_ordered(order, X, y, loss)
        if cand is None:
            return node, None
        parent = Fraction(_exact_quad(counts, loss), int(counts.sum()) ** 2)
        if cand.weighted >= parent:  # no positive decrease
            return node, None
        return node, cand

    root_order = np.argsort(X, axis=0, kind="stable").astype(np.int32)
    root, cand = make(root_order)
    stack = [(root, cand, root_order)]
    while stack:
        node, cand, order = stack.pop()
        if cand is None:
            continue
        node.feature = cand.feature
        node.threshold = cand.threshold
        below = X[:, cand.feature] < cand.threshold
        mask = below[order]  # per column, in that column's sorted order
        n_left = int(mask[:, 0].sum())
        left_order = order.T[mask.T].reshape(X.shape[1], n_left).T
        right_order = order.T[~mask.T].reshape(X.shape[1], len(order) - n_left).T
        node.left, left_cand = make(left_order)
        node.right, right_cand = make(right_order)
        stack.append((node.left, left_cand, left_order))
        stack.append((node.right, right_cand, right_order))
    return root


def _copy_subtree(root: _Node) -> _Node:
    """Structural copy without recursion (trees can be very deep)."""
    clone_root = copy.copy(root)
    stack = [clone_root]
    while stack:
        node = stack.pop()
        if not node.is_leaf:
            node.left = copy.copy(node.left)
            node.right = copy.copy(node.right)
            stack.extend((node.left, node.right))
    return clone_root


@dataclass
class DecisionTree:
    """Immutable-by-convention binary threshold tree."""

    root: _Node
    feature_names: tuple[str, ...]
    loss: LossFunction

    @property
    def leaf_count(self) -> int:
        return self.root.leaves()

    @property
    def node_count(self) -> int:
        return sum(1 for _ in self._walk())

    def _walk(self) -> Iterator[_Node]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.extend((node.right, node.left))

    def predict(self, x: Sequence[float] | np.ndarray) -> int:
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise ValueError("feature vector contains non-finite values")
        node = self.root
        while not node.is_leaf:
            node = node.left if x[node.feature] < node.threshold else node.right
        return node.label

    def predict_many(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if not np.all(np.isfinite(X)):
            raise ValueError("feature matrix contains non-finite values")
        out = np.empty(len(X), dtype=np.int64)
        stack = [(self.root, np.arange(len(X)))]
        while stack:
            node, rows = stack.pop()
            if node.is_leaf:
                out[rows] = node.label
                continue
            mask = X[rows, node.feature] < node.threshold
            stack.append((node.left, rows[mask]))
            stack.append((node.right, rows[~mask]))
        return out

    def used_features(self) -> tuple[int, ...]:
        """Indices of features tested by at least one internal node."""
        return tuple(sorted({n.feature for n in self._walk() if not n.is_leaf}))

    def used_feature_names(self) -> tuple[str, ...]:
        return tuple(self.feature_names[i] for i in self.used_features())

    def to_json(self) -> dict:
        """Flat node-array encoding; children referenced by index.

        Nested encodings recurse past interpreter limits on the very deep
        trees that noisy targets produce.
        """
        nodes: list[dict] = []
        order: list[_Node] = list(self._walk())
        index = {id(n): i for i, n in enumerate(order)}
        for node in order:
            if node.is_leaf:
                nodes.append({"label": node.label,
                              "counts": node.counts.tolist()})
            else:
                nodes.append({"feature": self.feature_names[node.feature],
                              "threshold": node.threshold,
                              "left": index[id(node.left)],
                              "right": index[id(node.right)]})
        return {"feature_names": list(self.feature_names),
                "loss": self.loss.to_json(),
                "nodes": nodes}

    @classmethod
    def from_json(cls, data: dict) -> "DecisionTree":
        names = tuple(data["feature_names"])
        loss = LossFunction.from_json(data["loss"])
        feat_index = {name: i for i, name in enumerate(names)}
        raw = data["nodes"]
        built: list[_Node | None] = [None] * len(raw)
        for i in range(len(raw) - 1, -1, -1):
            d = raw[i]
            if "label" in d:
                node = _Node(np.asarray(d["counts"], dtype=np.int64), loss)
                if node.label != int(d["label"]):
                    node.label = int(d["label"])
                    node.risk_num = node.sum_loss(loss)
            else:
                left, right = built[d["left"]], built[d["right"]]
                node = _Node(left.counts + right.counts, loss)
                node.feature = feat_index[d["feature"]]
                node.threshold = float(d["threshold"])
                node.left, node.right = left, right
            built[i] = node
        return cls(root=built[0], feature_names=names, loss=loss)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "DecisionTree":
        return cls.from_json(json.loads(Path(path).read_text()))

    def to_dot(self) -> str:
        lines = ["digraph tree {", "  node [shape=box];"]
        order = list(self._walk())
        index = {id(n): i for i, n in enumerate(order)}
        for i, node in enumerate(order):
            if node.is_leaf:
                lines.append(
                    f'  n{i} [label="action {node.label}\\n{node.counts.tolist()}"];')
            else:
                name = self.feature_names[node.feature]
                lines.append(f'  n{i} [label="{name} < {node.threshold:g}"];')
                lines.append(f"  n{i} -> n{index[id(node.left)]} [label=yes];")
                lines.append(f"  n{i} -> n{index[id(node.right)]} [label=no];")
        lines.append("}")
        return "\n".join(lines)


def grow(X: np.ndarray, y: np.ndarray, loss: LossFunction,
         feature_names: Sequence[str]) -> DecisionTree:
    """Grow an unpruned tree to purity (or until no split helps)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise ValueError("cannot grow a tree from an empty training set")
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("feature matrix and labels are inconsistent")
    if len(feature_names) != X.shape[1]:
        raise ValueError("one name per feature column required")
    if y.min() < 0 or y.max() >= loss.n_actions:
        raise ValueError("labels outside the action space")
    root = _grow_root(X, y, loss)
    return DecisionTree(root=root, feature_names=tuple(feature_names), loss=loss)


@dataclass(frozen=True)
class PruneSequence:
    """Nested subtrees from minimal cost-complexity pruning.

    ``entries[k]`` is (alpha_k, tree_k); alpha_0 = 0 holds the unpruned
    tree and the final tree is a single leaf.
    """

    entries: tuple[tuple[float, DecisionTree], ...]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, k: int) -> tuple[float, DecisionTree]:
        return self.entries[k]

    @property
    def alphas(self) -> tuple[float, ...]:
        return tuple(a for a, _ in self.entries)

    @property
    def trees(self) -> tuple[DecisionTree, ...]:
        return tuple(t for _, t in self.entries)


def mccp(tree: DecisionTree) -> PruneSequence:
    """Weakest-link pruning of a grown tree.

    The risk of a node as a leaf is the training loss of its medoid label
    (per sample, over the whole training set); the weakest links are the
    internal nodes with minimal ``g = (R(leaf) - R(subtree)) / (|leaves| - 1)``,
    collapsed simultaneously.  Alphas are strictly increasing.
    """
    def snapshot(t: DecisionTree) -> DecisionTree:
        return DecisionTree(root=_copy_subtree(t.root),
                            feature_names=t.feature_names, loss=t.loss)

    work = snapshot(tree)
    n_total = int(work.root.counts.sum())
    loss = work.loss
    entries: list[tuple[float, DecisionTree]] = [(0.0, snapshot(work))]
    prev_alpha = Fraction(0)
    while not work.root.is_leaf:
        # iterative post-order: children are analysed before their parent
        links: list[tuple[Fraction, _Node]] = []
        stats: dict[int, tuple[Fraction | int, int]] = {}
        stack: list[tuple[_Node, bool]] = [(work.root, False)]
        while stack:
            node, expanded = stack.pop()
            if node.is_leaf:
                stats[id(node)] = (node.risk_num, 1)
                continue
            if not expanded:
                stack.append((node, True))
                stack.append((node.left, False))
                stack.append((node.right, False))
                continue
            l_risk, l_leaves = stats[id(node.left)]
            r_risk, r_leaves = stats[id(node.right)]
            risk, leaves = l_risk + r_risk, l_leaves + r_leaves
            g = Fraction(node.risk_num - risk, n_total * (leaves - 1))
            links.append((g, node))
            stats[id(node)] = (risk, leaves)
        alpha = min(g for g, _ in links)
        for g, node in links:
            if g == alpha and not node.is_leaf:
                node.collapse()
        if alpha == 0:
            # splits that never reduced the medoid risk belong to the
            # alpha=0 optimum; fold them in without a new entry
            continue
        if alpha <= prev_alpha and len(entries) > 1:
            raise AssertionError("pruning alphas must strictly increase")
        entries.append((float(alpha), snapshot(work)))
        prev_alpha = alpha
    return PruneSequence(entries=tuple(entries))
