"""Conditional inference tree over matched-pair differences.

Splitting is two-phase.  At each node the random-intercept model is fit
separately for every covariate and the node splits only if the smallest slope
p-value clears the Bonferroni gate ``alpha / p``.  The winning covariate is
then cut at the candidate midpoint whose indicator regressor has the largest
absolute Wald statistic.  Left children hold ``x <= threshold``.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_positive_int, check_probability
from .exceptions import ValidationError
from .lmm import fit_random_intercept_batch

TREE_SCHEMA_VERSION = 1
SINGLE = "single"
DOUBLE = "double"


@dataclass(eq=False)
class Node:
    """One tree node; internal when ``var`` is set, otherwise a leaf."""

    n_pairs: int
    depth: int = 0
    var: int = None
    threshold: float = None
    p_values: np.ndarray = None
    selected_p: float = None
    left: "Node" = None
    right: "Node" = None
    effect: float = None
    n_treated_holdout: int = 0
    n_control_holdout: int = 0
    flagged: bool = False
    rows: np.ndarray = field(default=None, repr=False)

    @property
    def is_leaf(self):
        return self.var is None

    def leaves(self):
        if self.is_leaf:
            return [self]
        return self.left.leaves() + self.right.leaves()

    def internal_nodes(self):
        if self.is_leaf:
            return []
        return [self] + self.left.internal_nodes() + self.right.internal_nodes()


@dataclass(eq=False)
class TehTree:
    """A fitted tree plus the settings it was grown with."""

    root: Node
    alpha: float
    min_node: int
    max_depth: int
    n_features: int
    col_names: tuple = None
    mode: str = None

    @property
    def n_terminal(self):
        return len(self.root.leaves())

    @property
    def annotated(self):
        return self.mode is not None

    def split_vars(self):
        """Split variables in pre-order."""
        return [node.var for node in self.root.internal_nodes()]

    def apply(self, x):
        """Leaf index (pre-order position among leaves) for each row of ``x``."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.shape[1] != self.n_features:
            raise ValidationError(f"x has {x.shape[1]} columns, tree expects {self.n_features}")
        leaves = self.root.leaves()
        pos = {id(leaf): i for i, leaf in enumerate(leaves)}
        out = np.empty(x.shape[0], dtype=int)
        for i, row in enumerate(x):
            node = self.root
            while not node.is_leaf:
                node = node.left if row[node.var] <= node.threshold else node.right
            out[i] = pos[id(node)]
        return out

    def predict(self, x):
        """Leaf effect for every row; NaN where the leaf has no estimate."""
        if not self.annotated:
            raise ValidationError("tree has no effect estimates; run estimate_effects first")
        leaves = self.root.leaves()
        effects = np.array([np.nan if leaf.effect is None else leaf.effect for leaf in leaves])
        return effects[self.apply(x)]

    def summary(self):
        """Indented, human-readable description of the split rules and leaves."""
        names = self.col_names or tuple(f"x{j + 1}" for j in range(self.n_features))
        lines = []

        def walk(node, indent, label):
            pad = "  " * indent
            if node.is_leaf:
                if node.effect is None:
                    est = "effect=NA" + (" (holdout arm empty)" if node.flagged else "")
                else:
                    est = f"effect={node.effect:.6g}"
                extra = ""
                if self.mode == DOUBLE:
                    extra = f" holdout_treated={node.n_treated_holdout} holdout_control={node.n_control_holdout}"
                lines.append(f"{pad}{label}leaf: n_pairs={node.n_pairs} {est}{extra}")
                return
            lines.append(f"{pad}{label}split {names[node.var]} <= {node.threshold:.6g} (p={node.selected_p:.3g}, n_pairs={node.n_pairs})")
            walk(node.left, indent + 1, f"[{names[node.var]} <= {node.threshold:.6g}] ")
            walk(node.right, indent + 1, f"[{names[node.var]} > {node.threshold:.6g}] ")

        walk(self.root, 0, "")
        return "\n".join(lines)


def select_split_variable(pairs, node_rows, alpha, n_features=None):
    """Bonferroni-gated choice of split covariate.

    Fits the random-intercept model of ``delta`` on each covariate within
    ``node_rows``.  Returns ``(var, p_values)`` when the smallest p-value is
    below ``alpha / p``, otherwise ``(None, p_values)``.  Ties in p go to the
    lowest column index; constant covariates get p = 1.
    """
    node_rows = np.asarray(node_rows, dtype=int)
    if node_rows.size < 4:
        raise ValidationError(f"node has {node_rows.size} pairs; need at least 4")
    x = pairs.x_treated[node_rows]
    p = n_features or x.shape[1]
    fit = fit_random_intercept_batch(x, pairs.delta[node_rows], pairs.group[node_rows])
    p_values = fit.p_value
    var = int(np.argmin(p_values))  # first minimum -> lowest index
    if p_values[var] < alpha / p:
        return var, p_values
    return None, p_values


def candidate_thresholds(values):
    """Midpoints between consecutive distinct sorted values."""
    u = np.unique(values)
    return 0.5 * (u[:-1] + u[1:])


def find_split_point(pairs, node_rows, var, min_node, return_stats=False):
    """Threshold on covariate ``var`` with the largest |Wald t| of ``1[x >= c]``.

    Candidates leaving fewer than ``min_node`` pairs in a child are skipped.
    Near-ties in |t| go to the candidate closest to the node median, then to the
    smaller threshold.  Returns ``None`` when no candidate is feasible.
    """
    node_rows = np.asarray(node_rows, dtype=int)
    xv = pairs.x_treated[node_rows, var]
    cands = candidate_thresholds(xv)
    if cands.size == 0:
        return (None, None) if return_stats else None
    n_left = np.searchsorted(np.sort(xv), cands, side="right")
    feasible = (n_left >= min_node) & (node_rows.size - n_left >= min_node)
    cands = cands[feasible]
    if cands.size == 0:
        return (None, None) if return_stats else None
    design = (xv[:, None] >= cands[None, :]).astype(float)
    fit = fit_random_intercept_batch(design, pairs.delta[node_rows], pairs.group[node_rows])
    score = np.abs(fit.t_stat)
    best = _pick_threshold(cands, score, np.median(xv))
    if return_stats:
        return cands[best], (cands, score)
    return float(cands[best])


def _pick_threshold(cands, score, median, rtol=1e-9):
    top = np.max(score)
    if np.isinf(top):
        tied = np.isinf(score)
    else:
        tied = score >= top - rtol * max(1.0, top)
    idx = np.flatnonzero(tied)
    dist = np.abs(cands[idx] - median)
    # lexsort: primary key distance to median, secondary key the threshold itself
    return int(idx[np.lexsort((cands[idx], dist))[0]])


def build_tree(pairs, alpha=0.05, min_node=10, max_depth=10, col_names=None):
    """Grow the tree on ``pairs`` by recursive gated splitting.

    A node becomes a leaf when it has fewer than ``2 * min_node`` pairs, sits at
    ``max_depth``, fails the gate, or has no feasible threshold.
    """
    alpha = check_probability(alpha, "alpha")
    min_node = check_positive_int(min_node, "min_node")
    max_depth = check_positive_int(max_depth, "max_depth", minimum=0)
    n = len(pairs)
    if n < 2 * min_node:
        raise ValidationError(f"{n} pairs is fewer than 2 * min_node = {2 * min_node}")
    p = pairs.x_treated.shape[1]

    def grow(rows, depth):
        node = Node(n_pairs=int(rows.size), depth=depth, rows=rows)
        if depth >= max_depth or rows.size < 2 * min_node or rows.size < 4:
            return node
        var, p_values = select_split_variable(pairs, rows, alpha, n_features=p)
        if var is None:
            return node
        threshold = find_split_point(pairs, rows, var, min_node)
        if threshold is None:
            return node
        go_left = pairs.x_treated[rows, var] <= threshold
        node.var = var
        node.threshold = float(threshold)
        node.p_values = p_values
        node.selected_p = float(p_values[var])
        node.left = grow(rows[go_left], depth + 1)
        node.right = grow(rows[~go_left], depth + 1)
        return node

    root = grow(np.arange(n), 0)
    return TehTree(root=root, alpha=alpha, min_node=min_node, max_depth=max_depth, n_features=p, col_names=col_names)


def estimate_effects(tree, mode, pairs=None, holdout=None):
    """Attach a treatment-effect estimate to every leaf.

    ``single``: mean of ``delta`` over the pairs in the leaf (routed by the
    treated member's covariates).  ``double``: route holdout subjects by their
    own covariates and take the difference of arm means; a leaf missing either
    arm gets no estimate and is flagged.
    """
    leaves = tree.root.leaves()
    if mode == SINGLE:
        if pairs is None:
            raise ValidationError("single-sample estimation needs the matched pairs")
        leaf_of = tree.apply(pairs.x_treated)
        for i, leaf in enumerate(leaves):
            members = pairs.delta[leaf_of == i]
            leaf.effect = float(np.mean(members)) if members.size else None
            leaf.flagged = members.size == 0
            leaf.n_treated_holdout = leaf.n_control_holdout = 0
    elif mode == DOUBLE:
        if holdout is None or holdout.n == 0:
            raise ValidationError("double-sample estimation needs a nonempty holdout set")
        leaf_of = tree.apply(holdout.x)
        for i, leaf in enumerate(leaves):
            in_leaf = leaf_of == i
            y1 = holdout.y[in_leaf & (holdout.z == 1)]
            y0 = holdout.y[in_leaf & (holdout.z == 0)]
            leaf.n_treated_holdout = int(y1.size)
            leaf.n_control_holdout = int(y0.size)
            if y1.size and y0.size:
                leaf.effect = float(y1.mean() - y0.mean())
                leaf.flagged = False
            else:
                leaf.effect = None
                leaf.flagged = True
    else:
        raise ValidationError(f"mode must be 'single' or 'double', got {mode!r}")
    tree.mode = mode
    return tree


def predict_effect(tree, x_row):
    """Effect of the leaf reached by ``x_row``; ``None`` when the leaf has no estimate."""
    value = tree.predict(np.asarray(x_row, dtype=float).reshape(1, -1))[0]
    return None if np.isnan(value) else float(value)


def _node_to_dict(node):
    if node.is_leaf:
        out = {"effect": node.effect, "n": node.n_pairs}
        if node.n_treated_holdout or node.n_control_holdout or node.flagged:
            out["n_treated_holdout"] = node.n_treated_holdout
            out["n_control_holdout"] = node.n_control_holdout
            out["flagged"] = node.flagged
        return out
    return {
        "var": node.var,
        "threshold": node.threshold,
        "p": node.selected_p,
        "p_values": [float(v) for v in node.p_values],
        "n": node.n_pairs,
        "children": [_node_to_dict(node.left), _node_to_dict(node.right)],
    }


def _node_from_dict(d, depth=0):
    if "children" in d:
        left, right = (_node_from_dict(c, depth + 1) for c in d["children"])
        return Node(
            n_pairs=int(d["n"]),
            depth=depth,
            var=int(d["var"]),
            threshold=float(d["threshold"]),
            p_values=np.asarray(d.get("p_values", []), dtype=float),
            selected_p=float(d["p"]),
            left=left,
            right=right,
        )
    return Node(
        n_pairs=int(d["n"]),
        depth=depth,
        effect=None if d.get("effect") is None else float(d["effect"]),
        n_treated_holdout=int(d.get("n_treated_holdout", 0)),
        n_control_holdout=int(d.get("n_control_holdout", 0)),
        flagged=bool(d.get("flagged", False)),
    )


def tree_to_dict(tree):
    return {
        "schema_version": TREE_SCHEMA_VERSION,
        "alpha": tree.alpha,
        "min_node": tree.min_node,
        "max_depth": tree.max_depth,
        "n_features": tree.n_features,
        "col_names": list(tree.col_names) if tree.col_names else None,
        "mode": tree.mode,
        "root": _node_to_dict(tree.root),
    }


def tree_from_dict(d):
    if d.get("schema_version") != TREE_SCHEMA_VERSION:
        raise ValidationError(f"unsupported tree schema version {d.get('schema_version')!r}")
    return TehTree(
        root=_node_from_dict(d["root"]),
        alpha=float(d["alpha"]),
        min_node=int(d["min_node"]),
        max_depth=int(d["max_depth"]),
        n_features=int(d["n_features"]),
        col_names=tuple(d["col_names"]) if d.get("col_names") else None,
        mode=d.get("mode"),
    )


def tree_to_json(tree):
    return json.dumps(tree_to_dict(tree), indent=2) + "\n"


def tree_from_json(text):
    return tree_from_dict(json.loads(text))
