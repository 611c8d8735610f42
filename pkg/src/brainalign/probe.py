"""Downstream representation-quality probes.

A probe combines all retained layers of a model into one matrix through
learned absolute-value layer weights (after per-layer PCA when the layer
dimensionalities differ), feeds that into a linear or small-MLP head, and
trains everything jointly by full-batch gradient descent with a backtracking
line search and early stopping on validation loss.  Task metrics are accuracy
for multiclass problems and macro mean average precision for multilabel ones;
per-task metrics are z-scored across models and averaged into one overall
score.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import ActivationStore, StimulusCatalog
from .errors import DataValidationError, DegenerateInputError, TrainingError


# ---------------------------------------------------------------------------
# Task specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TaskSpec:
    name: str
    kind: str                      # multiclass | multilabel
    metric: str                    # accuracy | mAP
    n_classes: int
    targets: np.ndarray            # (N,) int labels, or (N, C) binary indicators
    train_idx: Optional[np.ndarray] = None
    valid_idx: Optional[np.ndarray] = None
    test_idx: Optional[np.ndarray] = None
    kfold: Optional[int] = None
    kfold_seed: int = 0
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in ("multiclass", "multilabel"):
            raise DataValidationError(f"unknown task kind {self.kind!r}")
        if self.metric not in ("accuracy", "mAP"):
            raise DataValidationError(f"unknown metric {self.metric!r}")
        t = self.targets
        if self.kind == "multiclass":
            if t.ndim != 1 or t.dtype.kind not in "iu":
                raise DataValidationError("multiclass targets must be an int vector")
            if t.size and (t.min() < 0 or t.max() >= self.n_classes):
                raise DataValidationError("labels outside declared class count")
        else:
            if t.ndim != 2 or t.shape[1] != self.n_classes:
                raise DataValidationError("multilabel targets must be N x n_classes")
        if self.kfold is None:
            for part in ("train_idx", "valid_idx", "test_idx"):
                if getattr(self, part) is None:
                    raise DataValidationError(f"task without kfold needs {part}")
            parts = [set(map(int, self.train_idx)), set(map(int, self.valid_idx)),
                     set(map(int, self.test_idx))]
            if parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2]:
                raise DataValidationError("task splits must be disjoint")
        elif self.kfold < 3:
            raise DataValidationError("kfold plans need k >= 3 (train/valid/test roles)")


def load_task(path, catalog: StimulusCatalog) -> TaskSpec:
    """Build a TaskSpec from a JSON label file keyed by stimulus_id."""
    path = Path(path)
    raw = json.loads(path.read_text())
    for key in ("name", "kind", "metric", "labels"):
        if key not in raw:
            raise DataValidationError(f"{path}: task file missing field {key!r}")
    labels = raw["labels"]
    kind = raw["kind"]
    ids = catalog.stimulus_ids
    missing = [sid for sid in ids if sid not in labels]
    if missing:
        raise DataValidationError(f"{path}: labels missing for stimuli {missing[:5]}...")
    if "classes" in raw:
        classes = [str(c) for c in raw["classes"]]
    else:
        seen = set()
        for sid in ids:
            v = labels[sid]
            seen.update(map(str, v if isinstance(v, list) else [v]))
        classes = sorted(seen)
    class_index = {c: i for i, c in enumerate(classes)}
    n = len(ids)
    if kind == "multiclass":
        targets = np.array([class_index[str(labels[sid])] for sid in ids], dtype=np.int64)
    else:
        targets = np.zeros((n, len(classes)), dtype=np.float64)
        for row, sid in enumerate(ids):
            v = labels[sid]
            for c in (v if isinstance(v, list) else [v]):
                targets[row, class_index[str(c)]] = 1.0
    splits = raw.get("splits", {})
    id_index = {sid: i for i, sid in enumerate(ids)}

    def _idx(name):
        if name not in splits:
            return None
        return np.array([id_index[str(s)] for s in splits[name]], dtype=np.int64)

    return TaskSpec(
        name=str(raw["name"]), kind=kind, metric=str(raw["metric"]),
        n_classes=len(classes), targets=targets,
        train_idx=_idx("train"), valid_idx=_idx("valid"), test_idx=_idx("test"),
        kfold=splits.get("kfold"), kfold_seed=int(splits.get("kfold_seed", 0)),
        class_names=tuple(classes),
    )


# ---------------------------------------------------------------------------
# PCA and layer combination
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PcaProjection:
    mean: np.ndarray
    basis: np.ndarray   # D x d, orthonormal columns
    d: int
    eigvals: np.ndarray = field(default_factory=lambda: np.array([]))

    def __post_init__(self):
        b = self.basis
        if b.shape[1] != self.d or self.d > b.shape[0]:
            raise DataValidationError(f"basis shape {b.shape} inconsistent with d={self.d}")
        if not np.allclose(b.T @ b, np.eye(self.d), atol=1e-8):
            raise DataValidationError("basis columns are not orthonormal")

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) @ self.basis


def fit_pca(X: np.ndarray, d: int) -> PcaProjection:
    """Top-d principal directions of the training data.

    Deterministic sign convention: the largest-magnitude entry of each basis
    column is made positive.
    """
    X = np.asarray(X, dtype=float)
    n, dim = X.shape
    if d > min(n - 1, dim):
        raise DataValidationError(f"d={d} too large for data of shape {X.shape}")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    basis = vt[:d].T.copy()
    for j in range(d):
        i = int(np.argmax(np.abs(basis[:, j])))
        if basis[i, j] < 0:
            basis[:, j] = -basis[:, j]
    eigvals = (s[:d] ** 2) / (n - 1)
    return PcaProjection(mean=mean, basis=basis, d=d, eigvals=eigvals)


@dataclass(frozen=True)
class LayerWeights:
    alphas: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.alphas, dtype=float)
        if a.ndim != 1 or not np.all(np.isfinite(a)):
            raise DataValidationError("layer weights must be a finite vector")
        if np.sum(np.abs(a)) == 0.0:
            raise DataValidationError("all-zero layer weights")


def combine_layers(X_list: Sequence[np.ndarray], alphas: LayerWeights) -> np.ndarray:
    """Absolute-value weighted average of aligned layer matrices."""
    mats = [np.asarray(x, dtype=float) for x in X_list]
    shapes = {m.shape for m in mats}
    if len(shapes) != 1:
        raise DataValidationError(f"layer matrices disagree on shape: {shapes}")
    a = np.abs(np.asarray(alphas.alphas, dtype=float))
    if a.size != len(mats):
        raise DataValidationError(f"{a.size} weights for {len(mats)} layers")
    total = a.sum()
    if total == 0.0:
        raise DataValidationError("all-zero layer weights")
    # Normalizing first makes the single-layer case an exact identity.
    a = a / total
    out = np.zeros_like(mats[0])
    for w, m in zip(a, mats):
        out += w * m
    return out


# ---------------------------------------------------------------------------
# Joint loss / gradient
# ---------------------------------------------------------------------------

def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def probe_loss_and_grad(alphas: np.ndarray, weights: Sequence[np.ndarray],
                        biases: Sequence[np.ndarray], X_list: Sequence[np.ndarray],
                        Y: np.ndarray, kind: str, weight_decay: float = 0.0,
                        want_grad: bool = True):
    """Joint loss over (layer weights, head parameters), with analytic gradients.

    ``Y`` is one-hot (multiclass) or multi-hot (multilabel).  The gradient with
    respect to each layer weight comes from d(Xm)/d(alpha_i) =
    sign(alpha_i) * (X_i - Xm) / sum|alpha|.
    """
    a = np.asarray(alphas, dtype=float)
    absa = np.abs(a)
    S = absa.sum()
    if S == 0.0:
        raise TrainingError("all layer weights are zero")
    Xm = np.zeros_like(X_list[0])
    for w, X in zip(absa, X_list):
        Xm += w * X
    Xm /= S

    acts = [Xm]
    pre = []
    h = Xm
    for W, b in zip(weights[:-1], biases[:-1]):
        z = h @ W + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    logits = h @ weights[-1] + biases[-1]
    n = Y.shape[0]

    if kind == "multiclass":
        p = _softmax(logits)
        eps = 1e-12
        loss = -float(np.mean(np.log(p[np.arange(n), Y.argmax(axis=1)] + eps)))
        dlogits = (p - Y) / n
    else:
        p = _sigmoid(logits)
        eps = 1e-12
        loss = -float(np.mean(Y * np.log(p + eps) + (1 - Y) * np.log(1 - p + eps)))
        dlogits = (p - Y) / Y.size

    if weight_decay:
        loss += 0.5 * weight_decay * sum(float(np.sum(W * W)) for W in weights)
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite training loss ({loss})")
    if not want_grad:
        return loss, None

    grad_w = [None] * len(weights)
    grad_b = [None] * len(biases)
    delta = dlogits
    dXm = None
    for li in range(len(weights) - 1, -1, -1):
        grad_w[li] = acts[li].T @ delta
        if weight_decay:
            grad_w[li] = grad_w[li] + weight_decay * weights[li]
        grad_b[li] = delta.sum(axis=0)
        d_act = delta @ weights[li].T
        if li > 0:
            delta = d_act * (pre[li - 1] > 0)
        else:
            dXm = d_act
    grad_a = np.empty_like(a)
    gxm = float(np.sum(dXm * Xm))
    for i, X in enumerate(X_list):
        sign = np.sign(a[i])
        grad_a[i] = sign / S * (float(np.sum(dXm * X)) - gxm)
    return loss, (grad_a, grad_w, grad_b)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbeConfig:
    hidden_layers: int = 0        # 0 = linear head; 1 or 2 adds 1024-unit ReLU stages
    hidden_dim: int = 1024
    learning_rate: float = 1.0
    init: str = "zeros"           # zeros | xavier_uniform | xavier_normal
    weight_decay: float = 0.0
    max_iter: int = 500
    patience: int = 25
    grad_tol: float = 1e-12
    min_step: float = 1e-14
    seed: int = 0
    # Explicit extension points for otherwise-assumed choices.
    alpha_init: str = "uniform"           # uniform -> 1/L per layer
    multilabel_loss: str = "sigmoid_bce"  # independent per-class sigmoid BCE

    def __post_init__(self):
        if self.hidden_layers not in (0, 1, 2):
            raise DataValidationError("hidden_layers must be 0, 1, or 2")
        if self.init not in ("zeros", "xavier_uniform", "xavier_normal"):
            raise DataValidationError(f"unknown init {self.init!r}")
        if self.alpha_init != "uniform":
            raise DataValidationError(f"unknown alpha_init {self.alpha_init!r}")
        if self.multilabel_loss != "sigmoid_bce":
            raise DataValidationError(f"unknown multilabel_loss {self.multilabel_loss!r}")


class TrainedProbe:
    """Frozen result of joint probe training, able to score new rows."""

    def __init__(self, layer_weights, weights, biases, projections, kind, n_classes,
                 store, train_loss_history, valid_loss):
        self.layer_weights = layer_weights
        self.weights = weights
        self.biases = biases
        self.projections = projections
        self.kind = kind
        self.n_classes = n_classes
        self.store = store
        self.train_loss_history = train_loss_history
        self.valid_loss = valid_loss

    def _layer_matrices(self, rows: np.ndarray) -> list[np.ndarray]:
        mats = []
        for li, t in enumerate(self.store.layers):
            X = t.matrix[rows]
            if self.projections is not None:
                X = self.projections[li].transform(X)
            mats.append(X)
        return mats

    def scores(self, rows: np.ndarray) -> np.ndarray:
        """Predicted logits (multiclass) or probabilities (multilabel) for rows."""
        mats = self._layer_matrices(rows)
        h = combine_layers(mats, self.layer_weights)
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ W + b, 0.0)
        logits = h @ self.weights[-1] + self.biases[-1]
        return _sigmoid(logits) if self.kind == "multilabel" else logits


def _one_hot(targets: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((targets.size, n_classes))
    out[np.arange(targets.size), targets] = 1.0
    return out


def _task_matrix(task: TaskSpec) -> np.ndarray:
    if task.kind == "multiclass":
        return _one_hot(task.targets, task.n_classes)
    return np.asarray(task.targets, dtype=float)


def _init_head(rng, dims: list[int], init: str) -> tuple[list, list]:
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        if init == "zeros":
            W = np.zeros((fan_in, fan_out))
        elif init == "xavier_uniform":
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            W = rng.uniform(-lim, lim, size=(fan_in, fan_out))
        else:
            W = rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=(fan_in, fan_out))
        weights.append(W)
        biases.append(np.zeros(fan_out))
    return weights, biases


def train_probe(store: ActivationStore, task: TaskSpec,
                cfg: Optional[ProbeConfig] = None) -> TrainedProbe:
    """Jointly train layer weights and head on the task's train split.

    Full-batch gradient descent with an Armijo backtracking line search, early
    stopping on validation loss, deterministic given the config seed.
    """
    cfg = cfg or ProbeConfig()
    if task.kfold is not None:
        raise DataValidationError("train_probe expects explicit splits; use run_task for k-fold")
    rng = np.random.default_rng(cfg.seed)
    tr, va = np.asarray(task.train_idx), np.asarray(task.valid_idx)

    dims = [t.dim for t in store.layers]
    projections = None
    mats_full = [t.matrix for t in store.layers]
    if len(set(dims)) > 1:
        d_min = min(dims)
        projections = [fit_pca(t.matrix[tr], d_min) for t in store.layers]
        mats_full = [p.transform(t.matrix) for p, t in zip(projections, store.layers)]
    X_tr = [m[tr] for m in mats_full]
    X_va = [m[va] for m in mats_full]
    Y = _task_matrix(task)
    Y_tr, Y_va = Y[tr], Y[va]

    L = len(store.layers)
    alphas = np.full(L, 1.0 / L)
    init = cfg.init
    if cfg.hidden_layers > 0 and init == "zeros":
        init = "xavier_uniform"
    head_dims = [X_tr[0].shape[1]] + [cfg.hidden_dim] * cfg.hidden_layers + [task.n_classes]
    weights, biases = _init_head(rng, head_dims, init)

    def _loss_only(a, ws, bs, X, Yb):
        loss, _ = probe_loss_and_grad(a, ws, bs, X, Yb, task.kind,
                                      cfg.weight_decay, want_grad=False)
        return loss

    loss, grads = probe_loss_and_grad(alphas, weights, biases, X_tr, Y_tr,
                                      task.kind, cfg.weight_decay)
    history = [loss]
    best_valid = _loss_only(alphas, weights, biases, X_va, Y_va)
    best_state = (alphas.copy(), [w.copy() for w in weights], [b.copy() for b in biases])
    bad = 0
    for _ in range(cfg.max_iter):
        ga, gw, gb = grads
        gnorm2 = float(ga @ ga) + sum(float(np.sum(g * g)) for g in gw) \
            + sum(float(np.sum(g * g)) for g in gb)
        if gnorm2 <= cfg.grad_tol:
            break
        step = cfg.learning_rate
        accepted = False
        while step >= cfg.min_step:
            a2 = alphas - step * ga
            w2 = [w - step * g for w, g in zip(weights, gw)]
            b2 = [b - step * g for b, g in zip(biases, gb)]
            try:
                cand = _loss_only(a2, w2, b2, X_tr, Y_tr)
            except TrainingError:
                cand = np.inf
            if cand <= loss - 1e-4 * step * gnorm2:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        alphas, weights, biases, loss = a2, w2, b2, cand
        history.append(loss)
        vloss = _loss_only(alphas, weights, biases, X_va, Y_va)
        if vloss < best_valid - 1e-12:
            best_valid = vloss
            best_state = (alphas.copy(), [w.copy() for w in weights],
                          [b.copy() for b in biases])
            bad = 0
        else:
            bad += 1
            if bad > cfg.patience:
                break
        loss, grads = probe_loss_and_grad(alphas, weights, biases, X_tr, Y_tr,
                                          task.kind, cfg.weight_decay)
    alphas, weights, biases = best_state
    if np.sum(np.abs(alphas)) == 0.0:
        raise TrainingError("training collapsed every layer weight to zero")
    return TrainedProbe(
        layer_weights=LayerWeights(alphas=alphas),
        weights=weights, biases=biases, projections=projections,
        kind=task.kind, n_classes=task.n_classes, store=store,
        train_loss_history=history, valid_loss=float(best_valid),
    )


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """AP as the mean of precision values at each positive, ranked by
    descending score with ties broken by original index.

    The final mean is taken in exact rational arithmetic (ranks and hit counts
    are small integers), so the result is reproducible to the last bit.
    """
    from fractions import Fraction

    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DataValidationError("scores and labels must be equal-length vectors")
    n_pos = int(np.sum(labels == 1))
    if n_pos == 0:
        raise DegenerateInputError("average precision undefined without positives")
    order = np.argsort(-scores, kind="stable")
    ranked = labels[order] == 1
    cum_tp = np.cumsum(ranked)
    ranks = np.arange(1, scores.size + 1)
    total = sum((Fraction(int(tp), int(r))
                 for tp, r in zip(cum_tp[ranked], ranks[ranked])), Fraction(0))
    return float(total / n_pos)


def mean_average_precision(scores: np.ndarray, targets: np.ndarray) -> float:
    """Macro mAP over classes; classes without test positives are skipped with a warning."""
    scores = np.asarray(scores, dtype=float)
    targets = np.asarray(targets)
    if scores.shape != targets.shape or scores.ndim != 2:
        raise DataValidationError("scores and targets must both be N x C")
    aps = []
    for c in range(scores.shape[1]):
        if np.sum(targets[:, c] == 1) == 0:
            warnings.warn(f"class {c} has no positives in the test split; excluded from mAP")
            continue
        aps.append(average_precision(scores[:, c], targets[:, c]))
    if not aps:
        raise DegenerateInputError("no class has positives; mAP undefined")
    return float(np.mean(aps))


def evaluate(trained: TrainedProbe, task: TaskSpec) -> float:
    """Test metric of a trained probe: accuracy or macro mAP per the task."""
    te = np.asarray(task.test_idx)
    scores = trained.scores(te)
    if task.metric == "accuracy":
        pred = scores.argmax(axis=1)
        truth = task.targets[te] if task.kind == "multiclass" else task.targets[te].argmax(axis=1)
        return float(np.mean(pred == truth))
    return mean_average_precision(scores, np.asarray(task.targets, dtype=float)[te])


def run_task(store: ActivationStore, task: TaskSpec,
             cfg: Optional[ProbeConfig] = None) -> float:
    """Train and evaluate, handling explicit splits or a rotating k-fold plan."""
    if task.kfold is None:
        return evaluate(train_probe(store, task, cfg), task)
    k = task.kfold
    n = store.n_stimuli
    rng = np.random.default_rng(task.kfold_seed)
    perm = rng.permutation(n)
    folds = [perm[i::k] for i in range(k)]
    metrics = []
    for i in range(k):
        test_idx = folds[i]
        valid_idx = folds[(i + 1) % k]
        train_idx = np.concatenate([folds[j] for j in range(k) if j not in (i, (i + 1) % k)])
        sub = TaskSpec(name=task.name, kind=task.kind, metric=task.metric,
                       n_classes=task.n_classes, targets=task.targets,
                       train_idx=train_idx, valid_idx=valid_idx, test_idx=test_idx,
                       class_names=task.class_names)
        metrics.append(evaluate(train_probe(store, sub, cfg), sub))
    return float(np.mean(metrics))


# ---------------------------------------------------------------------------
# Aggregation across tasks
# ---------------------------------------------------------------------------

def zscore_aggregate(scores: np.ndarray, task_names: Optional[Sequence[str]] = None
                     ) -> np.ndarray:
    """Z-score metrics within each task (population SD over models), then
    average across tasks to one overall score per model."""
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2:
        raise DataValidationError("expected a models x tasks matrix")
    m, t = scores.shape
    if m < 2:
        raise DataValidationError("z-scoring needs at least 2 models")
    mu = scores.mean(axis=0)
    sd = scores.std(axis=0)
    flat = np.flatnonzero(sd == 0.0)
    if flat.size:
        names = [task_names[i] if task_names else f"task[{i}]" for i in flat]
        raise DegenerateInputError(f"zero variance across models in {names}")
    return ((scores - mu) / sd).mean(axis=1)
