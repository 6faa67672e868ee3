"""Greedy binary uplift decision tree.

Each node keeps per-arm counts and the within-node effect estimate
tau_hat = pos_t/n_t - pos_c/n_c. Splits maximize one of two criteria over
candidate rules (numeric thresholds from quantile midpoints, one equality
rule per observed categorical code):

- "ed": the weighted sum of squared child effects,
  (n_L/n) tau_L^2 + (n_R/n) tau_R^2, ranked by raw value with the minimum
  gain applied to its improvement over the parent's tau^2;
- "kl": the gain in weighted KL divergence between the arms' smoothed
  positive rates, relative to the parent.

Fitting is fully deterministic: ties are broken by lowest (feature index,
candidate index), and the `seed` argument is reserved for future stochastic
variants.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .data import CATEGORICAL, NUMERIC, Dataset, FeatureSchema
from .errors import DomainError, FitError, ParseError, SchemaError

TREE_FORMAT = "uplift-tree/v1"


@dataclass(frozen=True)
class NodeStats:
    """Per-arm counts and the effect estimate for one node's rows."""

    n: int
    n_t: int
    n_c: int
    pos_t: int
    pos_c: int
    tau_hat: float

    @classmethod
    def from_arrays(cls, treatment: np.ndarray, outcome: np.ndarray) -> "NodeStats":
        n = int(treatment.shape[0])
        n_t = int(np.sum(treatment))
        n_c = n - n_t
        pos_t = int(np.sum(outcome[treatment == 1]))
        pos_c = int(np.sum(outcome[treatment == 0]))
        tau = pos_t / n_t - pos_c / n_c if n_t > 0 and n_c > 0 else float("nan")
        return cls(n=n, n_t=n_t, n_c=n_c, pos_t=pos_t, pos_c=pos_c, tau_hat=tau)

    @classmethod
    def from_counts(cls, n_t: int, n_c: int, pos_t: int, pos_c: int) -> "NodeStats":
        tau = pos_t / n_t - pos_c / n_c if n_t > 0 and n_c > 0 else float("nan")
        return cls(n=n_t + n_c, n_t=n_t, n_c=n_c, pos_t=pos_t, pos_c=pos_c, tau_hat=tau)


@dataclass(frozen=True)
class SplitRule:
    """Routing rule of an internal node. Numeric: value <= threshold goes
    left. Categorical: value == code goes left."""

    feature: int
    kind: str
    threshold: float | None = None
    code: int | None = None

    def goes_left(self, values: np.ndarray) -> np.ndarray:
        if self.kind == NUMERIC:
            return values <= self.threshold
        return values == float(self.code)


@dataclass
class TreeNode:
    stats: NodeStats
    rule: SplitRule | None = None
    left: int | None = None
    right: int | None = None
    leaf_id: int | None = None


@dataclass(frozen=True)
class TreeParams:
    """Fitting parameters. `max_depth` counts edges from the root, so a
    depth-0 tree is a single leaf and max_depth=1 allows one split."""

    criterion: str = "ed"
    max_depth: int = 5
    min_samples_per_arm: int = 100
    min_gain: float = 0.0
    numeric_split_candidates: int = 32

    def validate(self) -> None:
        if self.criterion not in ("ed", "kl"):
            raise DomainError(f"criterion must be 'ed' or 'kl', got {self.criterion!r}")
        if self.max_depth < 1:
            raise DomainError(f"max_depth={self.max_depth} must be >= 1")
        if self.min_samples_per_arm < 1:
            raise DomainError(f"min_samples_per_arm={self.min_samples_per_arm} must be >= 1")
        if self.min_gain < 0:
            raise DomainError(f"min_gain={self.min_gain} must be >= 0")
        if self.numeric_split_candidates < 2:
            raise DomainError(
                f"numeric_split_candidates={self.numeric_split_candidates} must be >= 2"
            )


@dataclass
class UpliftTree:
    """Fitted tree: nodes in preorder (children after their parent), leaves
    numbered densely 0..n_leaves-1 in node order."""

    schema: FeatureSchema
    params: TreeParams
    nodes: list[TreeNode] = field(default_factory=list)

    @property
    def n_leaves(self) -> int:
        return sum(1 for nd in self.nodes if nd.rule is None)

    def leaf_nodes(self) -> list[TreeNode]:
        return [nd for nd in self.nodes if nd.rule is None]

    def leaf_tau(self) -> np.ndarray:
        """tau_hat per leaf, indexed by leaf_id."""
        out = np.empty(self.n_leaves, dtype=np.float64)
        for nd in self.nodes:
            if nd.rule is None:
                out[nd.leaf_id] = nd.stats.tau_hat
        return out


def _ed(n_l, tau_l, n_r, tau_r):
    """Weighted sum of squared child effects; vectorizes over candidates."""
    n = n_l + n_r
    return (n_l / n) * tau_l**2 + (n_r / n) * tau_r**2


def ed_value(left: NodeStats, right: NodeStats) -> float | None:
    """Squared-effect criterion value of a candidate split; None when either
    child is missing an arm (invalid candidate, not an error)."""
    if min(left.n_t, left.n_c, right.n_t, right.n_c) == 0:
        return None
    return float(_ed(left.n, left.tau_hat, right.n, right.tau_hat))


def _smoothed_rate(pos, n):
    """Additive smoothing keeps rates strictly inside (0, 1)."""
    return (pos + 1.0) / (n + 2.0)


def _kl_bernoulli(a, b):
    return a * np.log(a / b) + (1.0 - a) * np.log((1.0 - a) / (1.0 - b))


def _kl_gain(nt_l, nc_l, pt_l, pc_l, nt_r, nc_r, pt_r, pc_r, parent: NodeStats):
    """Gain in weighted between-arm KL divergence over the parent's, with
    smoothed rates; vectorizes over candidates."""
    n = parent.n
    n_l = nt_l + nc_l
    n_r = nt_r + nc_r
    kl_l = _kl_bernoulli(_smoothed_rate(pt_l, nt_l), _smoothed_rate(pc_l, nc_l))
    kl_r = _kl_bernoulli(_smoothed_rate(pt_r, nt_r), _smoothed_rate(pc_r, nc_r))
    kl_p = _kl_bernoulli(
        _smoothed_rate(parent.pos_t, parent.n_t), _smoothed_rate(parent.pos_c, parent.n_c)
    )
    return (n_l / n) * kl_l + (n_r / n) * kl_r - kl_p


def kl_value(left: NodeStats, right: NodeStats, parent: NodeStats) -> float | None:
    """KL criterion gain of a candidate split; None when either child is
    missing an arm."""
    if min(left.n_t, left.n_c, right.n_t, right.n_c) == 0:
        return None
    return float(
        _kl_gain(
            left.n_t, left.n_c, left.pos_t, left.pos_c,
            right.n_t, right.n_c, right.pos_t, right.pos_c,
            parent,
        )
    )


def _numeric_thresholds(values: np.ndarray, q: int) -> np.ndarray:
    """Up to `q` candidate thresholds: midpoints of q+1 equally spaced
    quantiles of the node's values, deduplicated ascending."""
    qs = np.quantile(values, np.linspace(0.0, 1.0, q + 1))
    return np.unique((qs[:-1] + qs[1:]) / 2.0)


def _candidate_scores(criterion, counts_left, parent: NodeStats):
    """Scores for candidate splits given per-candidate left counts
    (columns: n_c, pos_c, n_t, pos_t). Invalid candidates get -inf."""
    nc_l = counts_left[:, 0].astype(np.float64)
    pc_l = counts_left[:, 1].astype(np.float64)
    nt_l = counts_left[:, 2].astype(np.float64)
    pt_l = counts_left[:, 3].astype(np.float64)
    nc_r = parent.n_c - nc_l
    pc_r = parent.pos_c - pc_l
    nt_r = parent.n_t - nt_l
    pt_r = parent.pos_t - pt_l
    scores = np.full(counts_left.shape[0], -np.inf)
    valid = (nt_l > 0) & (nc_l > 0) & (nt_r > 0) & (nc_r > 0)
    if not valid.any():
        return scores, valid
    v = valid
    if criterion == "ed":
        tau_l = pt_l[v] / nt_l[v] - pc_l[v] / nc_l[v]
        tau_r = pt_r[v] / nt_r[v] - pc_r[v] / nc_r[v]
        scores[v] = _ed(nt_l[v] + nc_l[v], tau_l, nt_r[v] + nc_r[v], tau_r)
    else:
        scores[v] = _kl_gain(
            nt_l[v], nc_l[v], pt_l[v], pc_l[v], nt_r[v], nc_r[v], pt_r[v], pc_r[v], parent
        )
    return scores, valid


def _best_split(X, t, y, rows, stats: NodeStats, params: TreeParams, schema: FeatureSchema):
    """Best candidate rule at a node, or None. Ties go to the lowest
    (feature index, candidate index)."""
    m = params.min_samples_per_arm
    t_rows = t[rows]
    y_rows = y[rows]
    tyc = t_rows * 2 + y_rows  # 0: control/neg, 1: control/pos, 2: treated/neg, 3: treated/pos
    best_score = -np.inf
    best_rule: SplitRule | None = None
    for f, col in enumerate(schema.columns):
        vals = X[rows, f]
        if col.kind == NUMERIC:
            thresholds = _numeric_thresholds(vals, params.numeric_split_candidates)
            if thresholds.size == 0:
                continue
            bins = np.searchsorted(thresholds, vals, side="left")
            combo = bins * 4 + tyc
            counts = np.bincount(combo, minlength=(thresholds.size + 1) * 4).reshape(-1, 4)
            # left counts for threshold j are rows with bins <= j
            left = np.cumsum(counts, axis=0)[: thresholds.size]
            cand_rules = [
                SplitRule(feature=f, kind=NUMERIC, threshold=float(thr)) for thr in thresholds
            ]
        else:
            codes = vals.astype(np.int64)
            combo = codes * 4 + tyc
            counts = np.bincount(combo, minlength=col.cardinality * 4).reshape(-1, 4)
            observed = np.flatnonzero(counts.sum(axis=1) > 0)
            if observed.size < 2:
                continue
            left = counts[observed]
            cand_rules = [
                SplitRule(feature=f, kind=CATEGORICAL, code=int(c)) for c in observed
            ]
        # columns of `left` follow the tyc encoding above
        counts_left = np.stack(
            [left[:, 0] + left[:, 1], left[:, 1], left[:, 2] + left[:, 3], left[:, 3]], axis=1
        )
        scores, valid = _candidate_scores(params.criterion, counts_left, stats)
        size_ok = (
            (counts_left[:, 0] >= m)
            & (counts_left[:, 2] >= m)
            & (stats.n_c - counts_left[:, 0] >= m)
            & (stats.n_t - counts_left[:, 2] >= m)
        )
        scores[~size_ok] = -np.inf
        if not np.isfinite(scores).any():
            continue
        j = int(np.argmax(scores))  # first maximum = lowest candidate index
        if scores[j] > best_score:
            best_score = scores[j]
            best_rule = cand_rules[j]
    if best_rule is None:
        return None
    gain = best_score - stats.tau_hat**2 if params.criterion == "ed" else best_score
    if not gain > params.min_gain:
        return None
    return best_rule


def fit_tree(ds: Dataset, params: TreeParams, seed: int = 0) -> UpliftTree:
    """Fit a tree by greedy recursive splitting.

    Recursion stops at max_depth, when no candidate leaves at least
    min_samples_per_arm rows of each arm in both children, or when the best
    gain does not exceed min_gain. Deterministic given (ds, params); `seed`
    is accepted for interface stability and currently unused.
    """
    params.validate()
    ds.validate()
    X, t, y = ds.features, ds.treatment, ds.outcome
    root_stats = NodeStats.from_arrays(t, y)
    if root_stats.n_t == 0 or root_stats.n_c == 0:
        raise FitError(
            f"cannot fit: root has {root_stats.n_t} treated and {root_stats.n_c} control rows"
        )
    tree = UpliftTree(schema=ds.schema, params=params)
    nodes = tree.nodes

    def build(rows: np.ndarray, depth: int) -> int:
        stats = NodeStats.from_arrays(t[rows], y[rows])
        node_id = len(nodes)
        nodes.append(TreeNode(stats=stats))
        if depth < params.max_depth:
            rule = _best_split(X, t, y, rows, stats, params, ds.schema)
            if rule is not None:
                go_left = rule.goes_left(X[rows, rule.feature])
                nodes[node_id].rule = rule
                nodes[node_id].left = build(rows[go_left], depth + 1)
                nodes[node_id].right = build(rows[~go_left], depth + 1)
        return node_id

    build(np.arange(ds.n, dtype=np.int64), 0)
    leaf_id = 0
    for nd in nodes:
        if nd.rule is None:
            nd.leaf_id = leaf_id
            leaf_id += 1
    return tree


def leaf_of_batch(tree: UpliftTree, X: np.ndarray) -> np.ndarray:
    """Leaf id reached by each row of X."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(tree.schema.columns):
        raise SchemaError(
            f"feature matrix has {X.shape[1] if X.ndim == 2 else '?'} columns, "
            f"schema expects {len(tree.schema.columns)}"
        )
    out = np.empty(X.shape[0], dtype=np.int64)
    stack = [(0, np.arange(X.shape[0], dtype=np.int64))]
    while stack:
        node_id, idx = stack.pop()
        nd = tree.nodes[node_id]
        if nd.rule is None:
            out[idx] = nd.leaf_id
        elif idx.size:
            go_left = nd.rule.goes_left(X[idx, nd.rule.feature])
            stack.append((nd.left, idx[go_left]))
            stack.append((nd.right, idx[~go_left]))
        else:
            stack.append((nd.left, idx))
            stack.append((nd.right, idx[:0]))
    return out


def leaf_of(tree: UpliftTree, x: np.ndarray) -> int:
    """Leaf id for a single feature row."""
    return int(leaf_of_batch(tree, np.asarray(x, dtype=np.float64).reshape(1, -1))[0])


def predict_uplift_tree_batch(tree: UpliftTree, X: np.ndarray) -> np.ndarray:
    """tau_hat of the leaf each row lands in."""
    return tree.leaf_tau()[leaf_of_batch(tree, X)]


def predict_uplift_tree(tree: UpliftTree, x: np.ndarray) -> float:
    return float(predict_uplift_tree_batch(tree, np.asarray(x, dtype=np.float64).reshape(1, -1))[0])


def schema_hash(schema: FeatureSchema) -> str:
    """Stable hash of a feature schema, used to detect mismatches between
    serialized models and the data they are applied to."""
    canon = json.dumps(schema.to_jsonable(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def tree_to_jsonable(tree: UpliftTree) -> dict:
    nodes = []
    for i, nd in enumerate(tree.nodes):
        rule = None
        if nd.rule is not None:
            rule = {"feature": nd.rule.feature, "kind": nd.rule.kind}
            if nd.rule.kind == NUMERIC:
                rule["threshold"] = nd.rule.threshold
            else:
                rule["code"] = nd.rule.code
        nodes.append(
            {
                "id": i,
                "n": nd.stats.n,
                "n_t": nd.stats.n_t,
                "n_c": nd.stats.n_c,
                "pos_t": nd.stats.pos_t,
                "pos_c": nd.stats.pos_c,
                "tau_hat": nd.stats.tau_hat,
                "rule": rule,
                "left": nd.left,
                "right": nd.right,
                "leaf_id": nd.leaf_id,
            }
        )
    return {
        "format": TREE_FORMAT,
        "criterion": tree.params.criterion,
        "max_depth": tree.params.max_depth,
        "min_samples_per_arm": tree.params.min_samples_per_arm,
        "min_gain": tree.params.min_gain,
        "numeric_split_candidates": tree.params.numeric_split_candidates,
        "schema_hash": schema_hash(tree.schema),
        "schema": tree.schema.to_jsonable(),
        "nodes": nodes,
    }


def tree_from_jsonable(obj: dict) -> UpliftTree:
    if obj.get("format") != TREE_FORMAT:
        raise ParseError(f"not a tree document (format {obj.get('format')!r})")
    schema = FeatureSchema.from_jsonable(obj["schema"])
    if schema_hash(schema) != obj["schema_hash"]:
        raise SchemaError("tree document schema hash does not match its schema")
    params = TreeParams(
        criterion=obj["criterion"],
        max_depth=int(obj["max_depth"]),
        min_samples_per_arm=int(obj["min_samples_per_arm"]),
        min_gain=float(obj["min_gain"]),
        numeric_split_candidates=int(obj["numeric_split_candidates"]),
    )
    nodes = []
    for nd in obj["nodes"]:
        rule = None
        if nd["rule"] is not None:
            r = nd["rule"]
            if r["kind"] == NUMERIC:
                rule = SplitRule(feature=int(r["feature"]), kind=NUMERIC, threshold=float(r["threshold"]))
            else:
                rule = SplitRule(feature=int(r["feature"]), kind=CATEGORICAL, code=int(r["code"]))
        stats = NodeStats(
            n=int(nd["n"]),
            n_t=int(nd["n_t"]),
            n_c=int(nd["n_c"]),
            pos_t=int(nd["pos_t"]),
            pos_c=int(nd["pos_c"]),
            tau_hat=float(nd["tau_hat"]),
        )
        nodes.append(
            TreeNode(
                stats=stats,
                rule=rule,
                left=nd["left"],
                right=nd["right"],
                leaf_id=nd["leaf_id"],
            )
        )
    return UpliftTree(schema=schema, params=params, nodes=nodes)


def save_tree(tree: UpliftTree, path: str) -> None:
    """Serialize to a versioned JSON document; round-trips bit-exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(tree_to_jsonable(tree), fh, indent=1)
        fh.write("\n")


def load_tree(path: str) -> UpliftTree:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: {e}") from None
    return tree_from_jsonable(obj)


def leaf_summary(tree: UpliftTree) -> str:
    """Human-readable per-leaf table: counts, positives, and tau_hat."""
    lines = ["leaf_id\tn\tn_t\tn_c\tpos_t\tpos_c\ttau_hat"]
    for nd in tree.leaf_nodes():
        s = nd.stats
        lines.append(
            f"{nd.leaf_id}\t{s.n}\t{s.n_t}\t{s.n_c}\t{s.pos_t}\t{s.pos_c}\t{repr(float(s.tau_hat))}"
        )
    return "\n".join(lines) + "\n"
