"""Linear soft-margin SVM, random forest, and cohort metrics.

The SVM solves the standard dual with a deterministic maximal-violating-pair
SMO and reports the primal-dual gap.  The forest uses Gini splits on
bootstrap samples with per-tree seeds derived from the master seed, so a
forest is reproducible for any worker count.  The positive class for
sensitivity/specificity is pMCI (label +1 in evaluate's convention).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DataError,
    DimensionMismatch,
    LengthMismatch,
    SingleClass,
)
from .rng import derive_seed

SVM_GRID_EXPONENTS = list(range(-10, 11))  # 21 soft-margin candidates 2^i


@dataclass
class SvmModel:
    w: np.ndarray
    b: float
    c: float
    gap: float
    iterations: int
    converged: bool

    def decision(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != self.w.size:
            raise DimensionMismatch(f"model has {self.w.size} features, got {x.shape[1]}")
        return x @ self.w + self.b


def _check_two_classes(y):
    y = np.asarray(y, dtype=np.float64)
    classes = set(np.unique(y).tolist())
    if classes - {-1.0, 1.0}:
        raise DataError(f"labels must be +/-1, got {sorted(classes)}")
    if len(classes) < 2:
        raise SingleClass("training labels contain a single class")
    return y


def svm_train(x: np.ndarray, y, c: float, tol: float = 1e-4,
              max_passes: int = 200000) -> SvmModel:
    """Soft-margin primal min 1/2||w||^2 + C sum hinge, solved via SMO on the
    dual to a primal-dual gap <= tol (NotConverged is reported on the model,
    which is still returned)."""
    x = np.asarray(x, dtype=np.float64)
    y = _check_two_classes(y)
    if not np.all(np.isfinite(x)):
        raise DataError("features must be finite")
    n = x.shape[0]
    gram = x @ x.T
    q = gram * np.outer(y, y)
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 1/2 a'Qa - e'a
    tau = 1e-12

    def select_pair():
        # maximal violating pair (first index on ties for determinism)
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        lo = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
        if not up.any() or not lo.any():
            return -1, -1, 0.0
        vals = -y * grad
        m_up = np.where(up, vals, -np.inf)
        m_lo = np.where(lo, vals, np.inf)
        i = int(np.argmax(m_up))
        j = int(np.argmin(m_lo))
        return i, j, float(m_up[i] - m_lo[j])

    it = 0
    for it in range(1, max_passes + 1):
        i, j, viol = select_pair()
        if i < 0 or viol <= 1e-10:
            break
        # curvature along the feasible direction (d_i, d_j) = (y_i, -y_j)
        a = gram[i, i] + gram[j, j] - 2.0 * gram[i, j]
        if a <= tau:
            a = tau
        # direction: increase alpha_i*y_i, decrease alpha_j*y_j
        delta = (-y[i] * grad[i] + y[j] * grad[j]) / a
        old_ai, old_aj = alpha[i], alpha[j]
        ai = old_ai + y[i] * delta
        aj = old_aj - y[j] * delta
        # clip to the box, preserving y.alpha sum
        s = y[i] * old_ai + y[j] * old_aj
        ai = min(max(ai, 0.0), c)
        aj = y[j] * (s - y[i] * ai)
        if aj < 0.0:
            aj = 0.0
            ai = y[i] * (s - y[j] * aj)
        elif aj > c:
            aj = c
            ai = y[i] * (s - y[j] * aj)
        ai = min(max(ai, 0.0), c)
        d_ai, d_aj = ai - old_ai, aj - old_aj
        if abs(d_ai) < 1e-16 and abs(d_aj) < 1e-16:
            break
        alpha[i], alpha[j] = ai, aj
        grad += q[:, i] * d_ai + q[:, j] * d_aj
    w = x.T @ (alpha * y)
    # bias from free support vectors; fallback to the violation midpoint
    free = (alpha > 1e-10) & (alpha < c - 1e-10)
    if free.any():
        b = float(np.mean(y[free] - x[free] @ w))
    else:
        vals = -y * grad
        up = ((y > 0) & (alpha < c)) | ((y < 0) & (alpha > 0))
        lo = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < c))
        hi = np.max(np.where(up, vals, -np.inf)) if up.any() else 0.0
        lo_v = np.min(np.where(lo, vals, np.inf)) if lo.any() else 0.0
        b = float((hi + lo_v) / 2.0)
    margins = y * (x @ w + b)
    primal = 0.5 * float(w @ w) + c * float(np.maximum(0.0, 1.0 - margins).sum())
    dual = float(alpha.sum() - 0.5 * alpha @ q @ alpha)
    gap = primal - dual
    return SvmModel(w=w, b=b, c=c, gap=gap, iterations=it,
                    converged=gap <= tol)


def svm_predict(m: SvmModel, x: np.ndarray):
    """Labels sign(w.x + b) with sign(0) -> +1; margins alongside."""
    margins = m.decision(x)
    labels = np.where(margins >= 0.0, 1, -1)
    return labels, margins


def _stratified_folds(y, n_folds=5):
    """Deterministic round-robin fold ids per class, in row order."""
    y = np.asarray(y)
    folds = np.zeros(len(y), dtype=int)
    for cls in (-1, 1):
        idx = np.nonzero(y == cls)[0]
        for pos, row in enumerate(idx):
            folds[row] = pos % n_folds
    return folds


def svm_grid_search(x_train: np.ndarray, y_train, n_folds: int = 5):
    """Pick C from 2^-10..2^10 (21 values) by stratified CV accuracy.

    Ties go to the smaller C; the winner is refit on the whole training set.
    """
    x = np.asarray(x_train, dtype=np.float64)
    y = _check_two_classes(y_train)
    folds = _stratified_folds(y, n_folds)
    best_c = None
    best_acc = -1.0
    for i in SVM_GRID_EXPONENTS:
        c = 2.0**i
        correct = 0
        total = 0
        for f in range(n_folds):
            tr = folds != f
            te = ~tr
            if not te.any():
                continue
            if len(set(y[tr].tolist())) < 2:
                continue
            m = svm_train(x[tr], y[tr], c)
            pred, _ = svm_predict(m, x[te])
            correct += int((pred == y[te]).sum())
            total += int(te.sum())
        acc = correct / total if total else 0.0
        if acc > best_acc:
            best_acc = acc
            best_c = c
    model = svm_train(x, y, best_c)
    return best_c, model


# --- random forest -------------------------------------------------------------


@dataclass
class _Node:
    feature: int = -1
    threshold: float = 0.0
    left: int = -1
    right: int = -1
    label: int = 0  # leaf vote


@dataclass
class RfParams:
    n_trees: int = 500
    mtry: int | None = None  # default ceil(sqrt(p))
    min_leaf: int = 1
    max_depth: int | None = None

    def __post_init__(self):
        if self.n_trees < 1:
            raise DataError("n_trees must be >= 1")
        if self.min_leaf < 1:
            raise DataError("min_leaf must be >= 1")


@dataclass
class ForestModel:
    trees: list  # list of list[_Node]
    oob_votes: np.ndarray | None
    params: RfParams
    seed: int
    n_features: int

    def oob_accuracy(self, y) -> float:
        y = np.asarray(y)
        voted = self.oob_votes != 0
        if not voted.any():
            return float("nan")
        pred = np.where(self.oob_votes >= 0, 1, -1)
        return float((pred[voted] == y[voted]).mean())


def _gini_best_split(xs, ys, features, min_leaf):
    """Best (feature, threshold) by weighted Gini over midpoint thresholds."""
    n = ys.size
    n_pos = int((ys > 0).sum())
    best = (np.inf, -1, 0.0)
    for f in features:
        col = xs[:, f]
        order = np.argsort(col, kind="stable")
        sc = col[order]
        sy = ys[order] > 0
        pos_left = np.cumsum(sy)
        n_left = np.arange(1, n + 1)
        valid = sc[:-1] < sc[1:]
        if min_leaf > 1:
            k = np.arange(1, n)
            valid &= (k >= min_leaf) & (n - k >= min_leaf)
        if not valid.any():
            continue
        nl = n_left[:-1][valid].astype(np.float64)
        nr = n - nl
        pl = pos_left[:-1][valid] / nl
        pr = (n_pos - pos_left[:-1][valid]) / nr
        gini = nl * 2 * pl * (1 - pl) + nr * 2 * pr * (1 - pr)
        idx = int(np.argmin(gini))
        score = float(gini[idx]) / n
        if score < best[0] - 1e-15:
            pos = np.nonzero(valid)[0][idx]
            thr = 0.5 * (sc[pos] + sc[pos + 1])
            best = (score, int(f), float(thr))
    return best


def _grow_tree(x, y, rng, params: RfParams):
    n, p = x.shape
    mtry = params.mtry or int(math.ceil(math.sqrt(p)))
    mtry = min(mtry, p)
    nodes: list[_Node] = []

    def leaf_label(ys):
        pos = int((ys > 0).sum())
        neg = ys.size - pos
        return 1 if pos >= neg else -1

    def build(indices, depth):
        ys = y[indices]
        node_id = len(nodes)
        nodes.append(_Node())
        pure = np.all(ys == ys[0])
        too_deep = params.max_depth is not None and depth >= params.max_depth
        if pure or too_deep or indices.size < 2 * params.min_leaf:
            nodes[node_id].label = leaf_label(ys)
            return node_id
        features = rng.choice(p, size=mtry, replace=False)
        score, f, thr = _gini_best_split(x[indices], ys, features, params.min_leaf)
        if f < 0:
            nodes[node_id].label = leaf_label(ys)
            return node_id
        go_left = x[indices, f] < thr
        left = build(indices[go_left], depth + 1)
        right = build(indices[~go_left], depth + 1)
        nodes[node_id].feature = f
        nodes[node_id].threshold = thr
        nodes[node_id].left = left
        nodes[node_id].right = right
        return node_id

    build(np.arange(n), 0)
    return nodes


def _tree_predict(nodes, x):
    out = np.empty(x.shape[0], dtype=np.int64)
    for i in range(x.shape[0]):
        cur = 0
        while nodes[cur].left >= 0:
            nd = nodes[cur]
            cur = nd.left if x[i, nd.feature] < nd.threshold else nd.right
        out[i] = nodes[cur].label
    return out


def rf_train(x: np.ndarray, y, params: RfParams, seed: int) -> ForestModel:
    """Bootstrap forest with Gini splits and mtry feature subsampling.

    Tree t uses a generator seeded with hash(master_seed, t), so the model is
    identical however trees are scheduled."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(_check_two_classes(y), dtype=np.int64)
    n = x.shape[0]
    trees = []
    oob_votes = np.zeros(n, dtype=np.int64)
    for t in range(params.n_trees):
        rng = np.random.Generator(np.random.PCG64(derive_seed(seed, 1, t)))
        boot = rng.integers(0, n, size=n)
        nodes = _grow_tree(x[boot], y[boot], rng, params)
        trees.append(nodes)
        oob = np.setdiff1d(np.arange(n), boot, assume_unique=False)
        if oob.size:
            oob_votes[oob] += _tree_predict(nodes, x[oob])
    return ForestModel(trees=trees, oob_votes=oob_votes, params=params,
                       seed=seed, n_features=x.shape[1])


def rf_predict(m: ForestModel, x: np.ndarray) -> np.ndarray:
    """Majority vote over trees; ties -> +1."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != m.n_features:
        raise DimensionMismatch(f"forest has {m.n_features} features, got {x.shape[1]}")
    votes = np.zeros(x.shape[0], dtype=np.int64)
    for nodes in m.trees:
        votes += _tree_predict(nodes, x)
    return np.where(votes >= 0, 1, -1)


# --- metrics ---------------------------------------------------------------------


@dataclass
class EvalReport:
    acc: float
    sen: float
    spe: float
    tp: int
    fp: int
    tn: int
    fn: int
    runs: list = field(default_factory=list)  # per-run (acc, sen, spe)
    acc_sd: float = 0.0
    sen_sd: float = 0.0
    spe_sd: float = 0.0


def evaluate(preds, truth, positive_class=1) -> EvalReport:
    """ACC/SEN/SPE with the converter (pMCI) side as the positive class."""
    preds = np.asarray(preds)
    truth = np.asarray(truth)
    if preds.shape != truth.shape:
        raise LengthMismatch(f"{preds.shape} vs {truth.shape}")
    pos = preds == positive_class
    true_pos = truth == positive_class
    tp = int((pos & true_pos).sum())
    fp = int((pos & ~true_pos).sum())
    tn = int((~pos & ~true_pos).sum())
    fn = int((~pos & true_pos).sum())
    total = tp + fp + tn + fn
    acc = (tp + tn) / total if total else float("nan")
    sen = tp / (tp + fn) if (tp + fn) else float("nan")
    spe = tn / (tn + fp) if (tn + fp) else float("nan")
    return EvalReport(acc=acc, sen=sen, spe=spe, tp=tp, fp=fp, tn=tn, fn=fn)


def repeated_rf_eval(x_train, y_train, x_test, y_test, params: RfParams,
                     master_seed: int, runs: int = 30,
                     positive_class=1) -> EvalReport:
    """Mean +/- sd of ACC/SEN/SPE over independently seeded forests."""
    per_run = []
    last = None
    for run in range(runs):
        model = rf_train(x_train, y_train, params, derive_seed(master_seed, 2, run))
        preds = rf_predict(model, x_test)
        last = evaluate(preds, y_test, positive_class)
        per_run.append((last.acc, last.sen, last.spe))
    arr = np.array(per_run)
    mean = arr.mean(axis=0)
    sd = arr.std(axis=0, ddof=1) if runs > 1 else np.zeros(3)
    rep = EvalReport(
        acc=float(mean[0]), sen=float(mean[1]), spe=float(mean[2]),
        tp=last.tp, fp=last.fp, tn=last.tn, fn=last.fn,
        runs=[tuple(map(float, r)) for r in per_run],
        acc_sd=float(sd[0]), sen_sd=float(sd[1]), spe_sd=float(sd[2]),
    )
    return rep


# --- model serialization ------------------------------------------------------------


def save_svm(m: SvmModel, path) -> None:
    with open(path, "w") as f:
        f.write("gbsg-svm v1\n")
        f.write(f"c {m.c:.17g}\n")
        f.write(f"b {m.b:.17g}\n")
        f.write("w " + " ".join(f"{v:.17g}" for v in m.w) + "\n")


def load_svm(path) -> SvmModel:
    with open(path) as f:
        header = f.readline().strip()
        if header != "gbsg-svm v1":
            raise DataError(f"{path}: unknown model format {header!r}")
        c = float(f.readline().split()[1])
        b = float(f.readline().split()[1])
        w = np.array([float(v) for v in f.readline().split()[1:]])
    return SvmModel(w=w, b=b, c=c, gap=0.0, iterations=0, converged=True)


def save_forest(m: ForestModel, path) -> None:
    with open(path, "w") as f:
        f.write("gbsg-rf v1\n")
        f.write(f"seed {m.seed}\n")
        f.write(f"n_features {m.n_features}\n")
        f.write(f"n_trees {len(m.trees)}\n")
        for nodes in m.trees:
            f.write(f"tree {len(nodes)}\n")
            for nd in nodes:
                f.write(f"{nd.feature} {nd.threshold:.17g} {nd.left} {nd.right} {nd.label}\n")


def load_forest(path) -> ForestModel:
    with open(path) as f:
        header = f.readline().strip()
        if header != "gbsg-rf v1":
            raise DataError(f"{path}: unknown model format {header!r}")
        seed = int(f.readline().split()[1])
        n_features = int(f.readline().split()[1])
        n_trees = int(f.readline().split()[1])
        trees = []
        for _ in range(n_trees):
            count = int(f.readline().split()[1])
            nodes = []
            for _ in range(count):
                parts = f.readline().split()
                nodes.append(_Node(feature=int(parts[0]), threshold=float(parts[1]),
                                   left=int(parts[2]), right=int(parts[3]),
                                   label=int(parts[4])))
            trees.append(nodes)
    return ForestModel(trees=trees, oob_votes=None, params=RfParams(n_trees=n_trees),
                       seed=seed, n_features=n_features)
