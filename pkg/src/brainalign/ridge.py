"""L2-regularized encoding models with stratified nested cross-validation.

The engine fits one ridge regressor per target (voxel or component), selecting
the activation layer and regularization strength jointly on an inner
cross-validation loop, then scores pooled out-of-fold predictions with a
clipped Pearson coefficient of determination.

All inner machinery operates on column-batched target matrices so that one
voxel and two hundred voxels run through identical arithmetic; the public
vector operations are thin views of the batched path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import linalg as sla

from .data import ActivationStore, ComponentMatrix, StimulusCatalog
from .errors import DataValidationError, DegenerateInputError

DEFAULT_ALPHA_GRID = (0.01, 0.05, 0.1, 0.5, 1.0, 5.0, 10.0, 50.0)


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of each stimulus to one of k folds."""

    assignment: np.ndarray
    k: int

    def __post_init__(self):
        a = np.asarray(self.assignment)
        if a.ndim != 1 or a.dtype.kind not in "iu":
            raise DataValidationError("fold assignment must be a 1-D integer vector")
        if self.k < 2:
            raise DataValidationError("k must be >= 2")
        if a.size and (a.min() < 0 or a.max() >= self.k):
            raise DataValidationError(f"fold ids must lie in [0, {self.k})")
        sizes = np.bincount(a, minlength=self.k)
        if a.size % self.k == 0 and len(set(sizes.tolist())) != 1:
            raise DataValidationError(f"folds must be equal-size when k divides N, got {sizes}")
        if sizes.max() - sizes.min() > 1:
            raise DataValidationError(f"fold sizes differ by more than 1: {sizes}")

    @property
    def n(self) -> int:
        return int(np.asarray(self.assignment).size)

    def test_rows(self, fold: int) -> np.ndarray:
        return np.asarray(self.assignment) == fold


@dataclass(frozen=True)
class AlphaSchedule:
    """Regularization grid plus the hard interval for edge extension."""

    base_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID
    lower_bound: float = 1e-49
    upper_bound: float = 1e50

    def __post_init__(self):
        g = self.base_grid
        if not g or any(b <= a for a, b in zip(g, g[1:])) or g[0] <= 0:
            raise DataValidationError("alpha grid must be strictly increasing and positive")
        if not (self.lower_bound <= g[0] and g[-1] <= self.upper_bound):
            raise DataValidationError("alpha bounds must bracket the grid")


@dataclass(frozen=True)
class RidgeModel:
    weights: np.ndarray
    intercept: float
    alpha: float
    layer_id: int = 0

    def __post_init__(self):
        if not (np.all(np.isfinite(self.weights)) and np.isfinite(self.intercept)):
            raise DataValidationError("ridge model has non-finite parameters")
        if self.alpha < 0:
            raise DataValidationError("alpha must be >= 0")

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.weights + self.intercept


@dataclass(frozen=True)
class VoxelScores:
    """Per-voxel clipped R^2 for one model, keyed by subject."""

    model_id: str
    by_subject: dict

    def __post_init__(self):
        if not self.by_subject:
            raise DataValidationError("voxel scores require at least one subject")
        for sid, arr in self.by_subject.items():
            a = np.asarray(arr, dtype=float)
            if a.ndim != 1 or a.size == 0:
                raise DataValidationError(f"subject {sid}: scores must be a non-empty vector")
            if not np.all(np.isfinite(a)) or a.min() < 0 or a.max() > 1:
                raise DataValidationError(f"subject {sid}: scores must lie in [0, 1]")


@dataclass(frozen=True)
class AlphaSearchResult:
    layer_id: int
    alpha: float
    inner_score: float
    visited: tuple = ()  # (layer_id, alpha, score) for every evaluation, in order


@dataclass(frozen=True)
class NestedCvDetails:
    """Hyperparameters chosen by the inner loop, per outer fold and target column."""

    fold_layer_ids: np.ndarray   # (k, V)
    fold_alphas: np.ndarray      # (k, V)
    fold_inner_scores: np.ndarray  # (k, V)


# ---------------------------------------------------------------------------
# Core fits and scores
# ---------------------------------------------------------------------------

def _spd_solve(gram: np.ndarray, rhs: np.ndarray, alpha: float) -> np.ndarray:
    d = gram.shape[0]
    system = gram + alpha * np.eye(d)
    try:
        c, low = sla.cho_factor(system, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise DegenerateInputError(
            f"singular ridge system at alpha={alpha} (rank-deficient features)"
        ) from exc
    if alpha == 0.0:
        # Rank deficiency can slip through Cholesky as rounding dust (the
        # normal equations stay consistent), so check the spectrum explicitly.
        s = np.linalg.svd(system, compute_uv=False)
        if s[-1] <= s[0] * d * np.finfo(float).eps:
            raise DegenerateInputError(
                "singular ridge system at alpha=0 (rank-deficient features)"
            )
    return sla.cho_solve((c, low), rhs, check_finite=False)


def solve_ridge(X: np.ndarray, y: np.ndarray, alpha: float, layer_id: int = 0) -> RidgeModel:
    """Fit min ||y - Xw - b||^2 + alpha*||w||^2 with an unpenalized intercept.

    Features and target are centered on the training data; the weights come
    from a symmetric positive-definite solve of the centered normal equations.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.size:
        raise DataValidationError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if X.shape[0] < 2:
        raise DataValidationError("ridge fit needs at least 2 training rows")
    if alpha < 0:
        raise DataValidationError("alpha must be >= 0")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataValidationError("ridge fit requires finite inputs")
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    w = _spd_solve(Xc.T @ Xc, Xc.T @ (y - y_mean), alpha)
    return RidgeModel(weights=w, intercept=y_mean - float(x_mean @ w), alpha=alpha,
                      layer_id=layer_id)


def score_r2(y: np.ndarray, yhat: np.ndarray) -> float:
    """Clipped coefficient of determination: Pearson r squared when r >= 0, else 0.

    Constant predictions score 0; a constant target is an error because the
    correlation is undefined there.
    """
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape or y.ndim != 1:
        raise DataValidationError(f"shape mismatch: {y.shape} vs {yhat.shape}")
    if y.size < 3:
        raise DataValidationError("scoring needs at least 3 points")
    return float(_r2_columns(y[:, None], yhat[:, None])[0])


def _r2_columns(Y: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Column-wise clipped R^2 between true values Y and predictions P."""
    dy = Y - Y.mean(axis=0)
    dp = P - P.mean(axis=0)
    vy = np.einsum("ij,ij->j", dy, dy)
    vp = np.einsum("ij,ij->j", dp, dp)
    if np.any(vy == 0.0):
        cols = np.flatnonzero(vy == 0.0)
        raise DegenerateInputError(
            f"correlation undefined: constant target in column(s) {cols.tolist()}"
        )
    num = np.einsum("ij,ij->j", dy, dp)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = num / np.sqrt(vy * vp)
    r = np.where(vp == 0.0, 0.0, r)
    r = np.clip(r, -1.0, 1.0)
    return np.where(r > 0.0, r * r, 0.0)


# ---------------------------------------------------------------------------
# Fold construction
# ---------------------------------------------------------------------------

def stratified_folds(catalog: StimulusCatalog, k: int = 5, seed: int = 0) -> FoldPlan:
    """Category-balanced fold assignment, deterministic given the seed.

    Items are shuffled within each category and dealt onto folds by one
    round-robin counter threaded through the categories, which keeps both the
    per-category and the global fold sizes within one of each other.
    """
    n = catalog.n_stimuli
    if k < 2:
        raise DataValidationError("k must be >= 2")
    if k > n:
        raise DataValidationError(f"k={k} exceeds the {n}-stimulus catalog")
    cats = catalog.categories
    rng = np.random.default_rng(seed)
    assignment = np.empty(n, dtype=np.int64)
    counter = 0
    seen = []
    for c in cats:
        if c not in seen:
            seen.append(c)
    for cat in seen:
        idx = np.flatnonzero([c == cat for c in cats])
        rng.shuffle(idx)
        for j, i in enumerate(idx):
            assignment[i] = (counter + j) % k
        counter += idx.size
    return FoldPlan(assignment=assignment, k=k)


# ---------------------------------------------------------------------------
# Inner-loop machinery (batched over target columns)
# ---------------------------------------------------------------------------

class _InnerCv:
    """Caches per-(fold, layer) centered Grams for repeated alpha evaluation."""

    def __init__(self, store: ActivationStore, Y: np.ndarray, assignment: np.ndarray,
                 n_folds: int):
        self.store = store
        self.Y = Y
        self.assignment = assignment
        self.n_folds = n_folds
        self._fold_cache: dict = {}
        self._layer_cache: dict = {}

    def _fold(self, fi: int):
        if fi not in self._fold_cache:
            if self.n_folds == 1:
                # Degenerate single inner fold (k=2 outer): no held-out split
                # exists, so selection is scored in-sample.
                tr = np.ones(self.assignment.size, dtype=bool)
                va = tr
            else:
                tr = self.assignment != fi
                va = ~tr
            Ytr = self.Y[tr]
            ymean = Ytr.mean(axis=0)
            self._fold_cache[fi] = (tr, va, ymean, Ytr - ymean, self.Y[va])
        return self._fold_cache[fi]

    def _layer(self, fi: int, li: int):
        key = (fi, li)
        if key not in self._layer_cache:
            tr, va, _, _, _ = self._fold(fi)
            X = self.store.layers[li].matrix
            Xtr = X[tr]
            x_mean = Xtr.mean(axis=0)
            Xc = Xtr - x_mean
            self._layer_cache[key] = (Xc, Xc.T @ Xc, X[va] - x_mean)
        return self._layer_cache[key]

    def score_alpha(self, li: int, alpha: float, cols: np.ndarray) -> np.ndarray:
        """Mean over inner folds of per-column clipped R^2 at one (layer, alpha)."""
        acc = np.zeros(cols.size)
        for fi in range(self.n_folds):
            _, _, ymean, Yc_tr, Yva = self._fold(fi)
            Xc, gram, Xva_c = self._layer(fi, li)
            W = _spd_solve(gram, Xc.T @ Yc_tr[:, cols], alpha)
            pred = Xva_c @ W + ymean[cols]
            acc += _r2_columns(Yva[:, cols], pred)
        return acc / self.n_folds

    def score_grid(self, grid: Sequence[float]) -> np.ndarray:
        """Scores for every (alpha, layer) pair, shape (A, L, V)."""
        L = len(self.store.layers)
        A = len(grid)
        V = self.Y.shape[1]
        scores = np.zeros((A, L, V))
        for fi in range(self.n_folds):
            _, _, ymean, Yc_tr, Yva = self._fold(fi)
            for li in range(L):
                Xc, gram, Xva_c = self._layer(fi, li)
                XtY = Xc.T @ Yc_tr
                for ai, alpha in enumerate(grid):
                    W = _spd_solve(gram, XtY, alpha)
                    pred = Xva_c @ W + ymean
                    scores[ai, li] += _r2_columns(Yva, pred)
        return scores / self.n_folds


def _select_hyperparams(innercv: _InnerCv, sched: AlphaSchedule, record_visited: bool = False):
    """Joint (layer, alpha) choice per target column: grid argmax plus geometric
    edge extension with strictly-greater improvement.

    Ties on the grid break toward smaller alpha, then lower layer, which is what
    a first-occurrence argmax over an (alpha-major, layer-minor) layout gives.
    Returns (layer_idx, alpha, score) arrays of length V plus the visited trail
    (populated only when requested; meaningful for a single column).
    """
    grid = sched.base_grid
    A, L = len(grid), len(innercv.store.layers)
    V = innercv.Y.shape[1]
    scores = innercv.score_grid(grid)           # (A, L, V)
    flat = scores.reshape(A * L, V)
    best_flat = np.argmax(flat, axis=0)         # first occurrence on ties
    best_alpha_idx, best_layer_idx = np.divmod(best_flat, L)
    best_alpha = np.asarray(grid, dtype=float)[best_alpha_idx]
    best_score = flat[best_flat, np.arange(V)]

    visited = []
    if record_visited:
        for ai, alpha in enumerate(grid):
            for li in range(L):
                visited.append(
                    (innercv.store.layers[li].layer_id, float(alpha), float(scores[ai, li, 0]))
                )

    moved = np.zeros(V, dtype=bool)
    for factor in (0.5, 2.0):
        if factor == 0.5:
            start_mask = best_alpha_idx == 0
        else:
            start_mask = best_alpha_idx == A - 1
            if A == 1:
                # A singleton grid is both edges; walk up only for columns the
                # down pass left in place.
                start_mask = start_mask & ~moved
        cols_all = np.flatnonzero(start_mask)
        if cols_all.size == 0:
            continue
        for li in np.unique(best_layer_idx[cols_all]):
            active = cols_all[best_layer_idx[cols_all] == li]
            cand = grid[0] if factor == 0.5 else grid[-1]
            while active.size:
                cand = cand * factor
                if cand < sched.lower_bound or cand > sched.upper_bound:
                    break
                s = innercv.score_alpha(int(li), cand, active)
                if record_visited:
                    visited.append(
                        (innercv.store.layers[int(li)].layer_id, float(cand), float(s[0]))
                    )
                improved = s > best_score[active]
                upd = active[improved]
                best_score[upd] = s[improved]
                best_alpha[upd] = cand
                moved[upd] = True
                active = upd
    return best_layer_idx, best_alpha, best_score, tuple(visited)


def alpha_search(store: ActivationStore, y: np.ndarray, inner_folds: FoldPlan,
                 sched: Optional[AlphaSchedule] = None) -> AlphaSearchResult:
    """Pick the (layer, alpha) pair maximizing inner-CV mean clipped R^2 for one target."""
    sched = sched or AlphaSchedule()
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size != store.n_stimuli:
        raise DataValidationError(f"target length {y.shape} does not match store {store.n_stimuli}")
    innercv = _InnerCv(store, y[:, None], np.asarray(inner_folds.assignment), inner_folds.k)
    layer_idx, alphas, best, visited = _select_hyperparams(innercv, sched, record_visited=True)
    return AlphaSearchResult(
        layer_id=store.layers[int(layer_idx[0])].layer_id,
        alpha=float(alphas[0]),
        inner_score=float(best[0]),
        visited=visited,
    )


# ---------------------------------------------------------------------------
# Nested cross-validation
# ---------------------------------------------------------------------------

def _relabel(assignment: np.ndarray) -> tuple[np.ndarray, int]:
    ids = np.unique(assignment)
    lookup = {int(v): i for i, v in enumerate(ids)}
    return np.array([lookup[int(v)] for v in assignment]), ids.size


def nested_cv_predict_matrix(store: ActivationStore, Y: np.ndarray, outer_folds: FoldPlan,
                             sched: Optional[AlphaSchedule] = None
                             ) -> tuple[np.ndarray, NestedCvDetails]:
    """Out-of-fold predictions for every target column.

    For each outer fold the remaining folds form the inner CV used to select the
    hyperparameters; the model is refit on all of them and predicts the held-out
    fold, so every stimulus is predicted exactly once.
    """
    sched = sched or AlphaSchedule()
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[0] != store.n_stimuli:
        raise DataValidationError(f"target shape {Y.shape} does not match store {store.n_stimuli}")
    assignment = np.asarray(outer_folds.assignment)
    if assignment.size != store.n_stimuli:
        raise DataValidationError("fold plan does not match the stimulus count")
    k = outer_folds.k
    V = Y.shape[1]
    preds = np.empty_like(Y)
    fold_layers = np.empty((k, V), dtype=np.int64)
    fold_alphas = np.empty((k, V))
    fold_scores = np.empty((k, V))

    for f in range(k):
        test = assignment == f
        train = ~test
        inner_assign, n_inner = _relabel(assignment[train])
        sub_store = store.subset(train)
        innercv = _InnerCv(sub_store, Y[train], inner_assign, n_inner)
        layer_idx, alphas, best, _ = _select_hyperparams(innercv, sched)
        fold_layers[f] = [store.layers[int(li)].layer_id for li in layer_idx]
        fold_alphas[f] = alphas
        fold_scores[f] = best

        # Refit on all training folds, grouped by the selected hyperparameters.
        for li in np.unique(layer_idx):
            X = store.layers[int(li)].matrix
            Xtr = X[train]
            x_mean = Xtr.mean(axis=0)
            Xc = Xtr - x_mean
            gram = Xc.T @ Xc
            Xte_c = X[test] - x_mean
            cols_layer = np.flatnonzero(layer_idx == li)
            Ytr = Y[train][:, cols_layer]
            ymean = Ytr.mean(axis=0)
            Yc = Ytr - ymean
            for alpha in np.unique(alphas[cols_layer]):
                sub = np.flatnonzero(alphas[cols_layer] == alpha)
                W = _spd_solve(gram, Xc.T @ Yc[:, sub], float(alpha))
                block = Xte_c @ W + ymean[sub]
                preds[np.ix_(test, cols_layer[sub])] = block
    return preds, NestedCvDetails(fold_layers, fold_alphas, fold_scores)


def nested_cv_predict(store: ActivationStore, y: np.ndarray, outer_folds: FoldPlan,
                      sched: Optional[AlphaSchedule] = None, return_details: bool = False):
    """Vector version of nested_cv_predict_matrix."""
    y = np.asarray(y, dtype=float)
    preds, details = nested_cv_predict_matrix(store, y[:, None], outer_folds, sched)
    if return_details:
        return preds[:, 0], details
    return preds[:, 0]


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def aggregate_scores(scores: VoxelScores) -> float:
    """Median of voxel scores within each subject, then mean across subjects."""
    medians = [float(np.median(np.asarray(v, dtype=float))) for v in scores.by_subject.values()]
    return float(np.mean(medians))


def regress_components(store: ActivationStore, components: ComponentMatrix,
                       folds: FoldPlan, sched: Optional[AlphaSchedule] = None) -> dict:
    """Nested-CV clipped R^2 per canonical component, in fixed name order."""
    if components.n_stimuli != store.n_stimuli:
        raise DataValidationError(
            f"component rows {components.n_stimuli} do not match store {store.n_stimuli}"
        )
    preds, _ = nested_cv_predict_matrix(store, components.matrix, folds, sched)
    out = {}
    for j, name in enumerate(components.names):
        out[name] = score_r2(components.matrix[:, j], preds[:, j])
    return out
