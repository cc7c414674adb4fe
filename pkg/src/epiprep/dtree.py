"""Gain-ratio decision tree for inlier-probability ranking.

Threshold splits on numeric features in the C4.5 family, without
error-based pruning: growth stops at pure nodes, nodes smaller than
`min_leaf`, or when no split has positive information gain. Leaves report
Laplace-smoothed inlier probabilities so ranked lists never tie at hard
0/1.

Split selection is pinned down exactly so independent implementations
agree:

1. candidate thresholds for a feature are midpoints between consecutive
   distinct sorted values;
2. a candidate is valid only if its information gain exceeds 1e-12;
3. candidates are scored by gain ratio (gain / split information);
4. the chosen split is the first candidate in (feature index ascending,
   threshold ascending) order whose score exceeds the global maximum
   minus 1e-12.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MODEL_FORMAT_VERSION = 1
_GAIN_EPS = 1e-12


class ModelSchemaError(Exception):
    """Input vector or dataset does not match the model's schema."""


class ModelLoadError(Exception):
    """Model file has the wrong version or malformed structure."""


class FoldError(Exception):
    """Cross-validation fold count is infeasible for the dataset."""


@dataclass
class LabeledDataset:
    """Feature matrix with binary labels (1 = inlier) and named columns."""

    x: np.ndarray
    y: np.ndarray
    schema: tuple[str, ...]

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        if self.x.ndim != 2 or self.x.shape[0] != self.y.shape[0]:
            raise ValueError("x must be (n, d) with one label per row")
        if self.x.shape[1] != len(self.schema):
            raise ValueError("schema length must match feature count")
        if not np.isin(self.y, (0, 1)).all():
            raise ValueError("labels must be 0/1")

    def __len__(self) -> int:
        return len(self.y)


@dataclass
class TreeNode:
    pos: int
    total: int
    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None


@dataclass
class TreeModel:
    root: TreeNode
    schema: tuple[str, ...]


def _entropy(pos: int, total: int) -> float:
    if pos == 0 or pos == total:
        return 0.0
    p = pos / total
    q = 1.0 - p
    return -(p * math.log2(p) + q * math.log2(q))


def _candidate_splits(x_col: np.ndarray, y: np.ndarray):
    """(threshold, gain, gain_ratio) for each midpoint, thresholds ascending."""
    order = np.argsort(x_col, kind="stable")
    xs = x_col[order]
    ys = y[order]
    n = len(ys)
    total_pos = int(ys.sum())
    h_parent = _entropy(total_pos, n)
    boundaries = np.nonzero(xs[:-1] < xs[1:])[0]
    out = []
    cum_pos = np.cumsum(ys)
    for b in boundaries:
        n_l = int(b) + 1
        n_r = n - n_l
        pos_l = int(cum_pos[b])
        pos_r = total_pos - pos_l
        gain = h_parent - (n_l / n) * _entropy(pos_l, n_l) - (n_r / n) * _entropy(pos_r, n_r)
        if gain <= _GAIN_EPS:
            continue
        split_info = -((n_l / n) * math.log2(n_l / n) + (n_r / n) * math.log2(n_r / n))
        out.append(((xs[b] + xs[b + 1]) / 2.0, gain, gain / split_info))
    return out


def _best_split(x: np.ndarray, y: np.ndarray):
    candidates = []   # (feature, threshold, ratio) in canonical order
    for f in range(x.shape[1]):
        for threshold, _, ratio in _candidate_splits(x[:, f], y):
            candidates.append((f, threshold, ratio))
    if not candidates:
        return None
    best = max(c[2] for c in candidates)
    for f, threshold, ratio in candidates:
        if ratio > best - _GAIN_EPS:
            return f, threshold
    return None   # pragma: no cover


def train_tree(data: LabeledDataset, min_leaf: int = 8) -> TreeModel:
    """Grow a tree greedily; see the module docstring for the exact rules.

    A single-class dataset yields a one-leaf model.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")

    def build(idx: np.ndarray) -> TreeNode:
        y = data.y[idx]
        pos = int(y.sum())
        node = TreeNode(pos=pos, total=len(idx))
        if pos == 0 or pos == len(idx) or len(idx) < min_leaf:
            return node
        found = _best_split(data.x[idx], y)
        if found is None:
            return node
        f, threshold = found
        go_left = data.x[idx, f] <= threshold
        node.feature = f
        node.threshold = threshold
        node.left = build(idx[go_left])
        node.right = build(idx[~go_left])
        return node

    return TreeModel(root=build(np.arange(len(data))), schema=data.schema)


def predict_proba(model: TreeModel, v: np.ndarray) -> float:
    """Laplace-smoothed inlier probability (pos+1)/(total+2) at the leaf
    reached by v."""
    v = np.asarray(v, dtype=float)
    if v.shape != (len(model.schema),):
        raise ModelSchemaError(f"expected {len(model.schema)} fields, got {v.shape}")
    node = model.root
    while not node.is_leaf:
        node = node.left if v[node.feature] <= node.threshold else node.right
    return (node.pos + 1) / (node.total + 2)


def predict_proba_many(model: TreeModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != len(model.schema):
        raise ModelSchemaError(f"expected (n, {len(model.schema)}) matrix, got {x.shape}")
    return np.array([predict_proba(model, row) for row in x])


@dataclass(frozen=True)
class CvMetrics:
    accuracy: float
    precision: float
    recall: float
    folds: int


def cross_validate(data: LabeledDataset, k: int = 10, seed: int = 0,
                   min_leaf: int = 8) -> CvMetrics:
    """Stratified k-fold metrics at a 0.5 probability threshold.

    Folds are dealt round-robin from a seeded shuffle of each class, so the
    result is deterministic per seed. Precision/recall are 0 when undefined.
    """
    n = len(data)
    if k > n or k < 2:
        raise FoldError(f"cannot make {k} folds from {n} rows")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=int)
    for label in (0, 1):
        idx = np.nonzero(data.y == label)[0]
        perm = rng.permutation(idx)
        fold_of[perm] = np.arange(len(perm)) % k

    tp = fp = tn = fn = 0
    for fold in range(k):
        test = fold_of == fold
        if test.all() or not test.any():
            continue
        model = train_tree(
            LabeledDataset(x=data.x[~test], y=data.y[~test], schema=data.schema),
            min_leaf=min_leaf,
        )
        for row, label in zip(data.x[test], data.y[test]):
            pred = 1 if predict_proba(model, row) >= 0.5 else 0
            if pred and label:
                tp += 1
            elif pred and not label:
                fp += 1
            elif not pred and label:
                fn += 1
            else:
                tn += 1
    total = tp + fp + tn + fn
    return CvMetrics(
        accuracy=(tp + tn) / total if total else 0.0,
        precision=tp / (tp + fp) if tp + fp else 0.0,
        recall=tp / (tp + fn) if tp + fn else 0.0,
        folds=k,
    )


def _node_to_obj(node: TreeNode, nodes: list) -> int:
    obj: dict = {"pos": node.pos, "total": node.total}
    idx = len(nodes)
    nodes.append(obj)
    if not node.is_leaf:
        obj["feature"] = node.feature
        obj["threshold"] = node.threshold
        obj["left"] = _node_to_obj(node.left, nodes)
        obj["right"] = _node_to_obj(node.right, nodes)
    return idx


def save_model(model: TreeModel, path: str | Path) -> None:
    nodes: list = []
    _node_to_obj(model.root, nodes)
    payload = {
        "version": MODEL_FORMAT_VERSION,
        "schema": list(model.schema),
        "nodes": nodes,
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def load_model(path: str | Path) -> TreeModel:
    try:
        payload = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ModelLoadError(f"cannot read model file: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("version") != MODEL_FORMAT_VERSION:
        raise ModelLoadError(f"unsupported model version {payload.get('version')!r}")
    schema = payload.get("schema")
    nodes = payload.get("nodes")
    if not isinstance(schema, list) or not all(isinstance(s, str) for s in schema):
        raise ModelLoadError("schema must be a list of field names")
    if not isinstance(nodes, list) or not nodes:
        raise ModelLoadError("model has no nodes")

    def build(i: int) -> TreeNode:
        try:
            obj = nodes[i]
            node = TreeNode(pos=int(obj["pos"]), total=int(obj["total"]))
            if "feature" in obj:
                node.feature = int(obj["feature"])
                node.threshold = float(obj["threshold"])
                node.left = build(int(obj["left"]))
                node.right = build(int(obj["right"]))
            return node
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ModelLoadError(f"malformed node {i}: {exc}") from exc

    return TreeModel(root=build(0), schema=tuple(schema))


def dataset_from_csv(path: str | Path, schema: tuple[str, ...]) -> LabeledDataset:
    """Read `<schema...>,label` rows; header must match the schema exactly."""
    path = Path(path)
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if not lines:
        raise ModelSchemaError("empty training file")
    header = tuple(h.strip() for h in lines[0].split(","))
    if header != schema + ("label",):
        raise ModelSchemaError(f"header {header} does not match schema {schema + ('label',)}")
    rows, labels = [], []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(schema) + 1:
            raise ModelSchemaError(f"row has {len(parts)} fields, expected {len(schema) + 1}")
        rows.append([float(p) for p in parts[:-1]])
        labels.append(int(parts[-1]))
    return LabeledDataset(x=np.array(rows, dtype=float), y=np.array(labels), schema=schema)


def dataset_to_csv(data: LabeledDataset, path: str | Path) -> None:
    lines = [",".join(data.schema) + ",label"]
    for row, label in zip(data.x, data.y):
        lines.append(",".join(format(v, ".17g") for v in row) + f",{int(label)}")
    Path(path).write_text("\n".join(lines) + "\n")
