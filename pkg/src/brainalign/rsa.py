"""Representational dissimilarity matrices and rank-correlation comparison.

An RDM holds one minus the Pearson correlation between every pair of stimulus
rows of a representation.  Two RDMs are compared by Spearman correlation of
their flattened strictly-upper triangles, yielding one coefficient per
(model layer, subject); the module implements both layer summaries: the
maximum across layers and the cross-validated composite RDM.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import ActivationStore, ResponseMatrix
from .errors import DataValidationError, DegenerateInputError
from .ridge import FoldPlan


@dataclass(frozen=True)
class RDM:
    matrix: np.ndarray

    def __post_init__(self):
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DataValidationError(f"RDM must be square, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise DataValidationError("RDM contains non-finite values")
        if not np.allclose(m, m.T, atol=1e-12):
            raise DataValidationError("RDM must be symmetric")
        if np.any(np.abs(np.diag(m)) > 1e-12):
            raise DataValidationError("RDM diagonal must be zero")
        if m.min() < -1e-12 or m.max() > 2.0 + 1e-12:
            raise DataValidationError("RDM entries must lie in [0, 2]")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def upper_triangle(self) -> np.ndarray:
        iu = np.triu_indices(self.n, k=1)
        return self.matrix[iu]


@dataclass(frozen=True)
class RsaResult:
    """Per-layer/subject coefficients plus the model-level summary."""

    rho_by_layer_subject: np.ndarray  # (L, S)
    rho_m: float
    method: str
    layer_ids: tuple[int, ...]
    subject_ids: tuple[str, ...]
    best_layer: Optional[int] = None
    rho_per_subject: Optional[np.ndarray] = None  # at the summary layer / composite

    def __post_init__(self):
        if self.method not in ("max_layer", "cv_layer", "trajectory"):
            raise DataValidationError(f"unknown RSA method {self.method!r}")
        r = np.asarray(self.rho_by_layer_subject, dtype=float)
        if r.size and (np.nanmin(r) < -1.0 - 1e-9 or np.nanmax(r) > 1.0 + 1e-9):
            raise DataValidationError("rho values must lie in [-1, 1]")

    @property
    def standard_error(self) -> float:
        """Standard error across subjects of the summary-layer coefficients."""
        vals = self.rho_per_subject
        if vals is None or len(vals) < 2:
            return 0.0
        return float(np.std(vals, ddof=1) / np.sqrt(len(vals)))


def compute_rdm(M: np.ndarray) -> RDM:
    """Dissimilarity matrix D_ij = 1 - Pearson(row_i, row_j)."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[1] < 2:
        raise DataValidationError(f"RDM input must be N x D with D >= 2, got {M.shape}")
    dm = M - M.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(dm, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise DegenerateInputError(
            f"constant row(s) {bad.tolist()}: Pearson undefined for those stimuli"
        )
    corr = (dm @ dm.T) / np.outer(norms, norms)
    d = 1.0 - corr
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    np.clip(d, 0.0, 2.0, out=d)
    return RDM(matrix=d)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """Ranks (1-based) with ties sharing the average rank."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=float)
    sx = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x: np.ndarray, y: np.ndarray) -> float:
    """Spearman rank correlation with average ranks on ties."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DataValidationError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.size < 3:
        raise DataValidationError("Spearman needs at least 3 points")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    vx = float(dx @ dx)
    vy = float(dy @ dy)
    if vx == 0.0 or vy == 0.0:
        raise DegenerateInputError("constant vector: Spearman undefined")
    return float(np.clip((dx @ dy) / np.sqrt(vx * vy), -1.0, 1.0))


def compare_rdms(da: RDM, db: RDM) -> float:
    """Spearman correlation of the two strictly-upper-triangle flattenings."""
    if da.n != db.n:
        raise DataValidationError(f"RDM sizes differ: {da.n} vs {db.n}")
    return spearman(da.upper_triangle(), db.upper_triangle())


# ---------------------------------------------------------------------------
# Model-level summaries
# ---------------------------------------------------------------------------

def _layer_subject_rhos(store: ActivationStore, responses: Sequence[ResponseMatrix]
                        ) -> tuple[np.ndarray, list[RDM], list[RDM]]:
    if not responses:
        raise DataValidationError("RSA needs at least one subject")
    for r in responses:
        if r.n_stimuli != store.n_stimuli:
            raise DataValidationError(
                f"{r.dataset_id}/{r.subject_id}: {r.n_stimuli} rows vs store {store.n_stimuli}"
            )
    model_rdms = [compute_rdm(t.matrix) for t in store.layers]
    subject_rdms = [compute_rdm(r.matrix) for r in responses]
    rho = np.empty((len(model_rdms), len(subject_rdms)))
    for li, dm in enumerate(model_rdms):
        for si, ds in enumerate(subject_rdms):
            rho[li, si] = compare_rdms(dm, ds)
    return rho, model_rdms, subject_rdms


def rsa_max_layer(store: ActivationStore, responses: Sequence[ResponseMatrix]) -> RsaResult:
    """Subject-averaged coefficient per layer; the summary is the best layer's value."""
    rho, _, _ = _layer_subject_rhos(store, responses)
    per_layer = rho.mean(axis=1)
    best = int(np.argmax(per_layer))  # first occurrence: ties go to the lower layer
    return RsaResult(
        rho_by_layer_subject=rho,
        rho_m=float(per_layer[best]),
        method="max_layer",
        layer_ids=tuple(store.layer_ids),
        subject_ids=tuple(r.subject_id for r in responses),
        best_layer=store.layer_ids[best],
        rho_per_subject=rho[best].copy(),
    )


def _composite_rdm(model_rdms: list[RDM], subject_rdm: RDM, folds: FoldPlan) -> RDM:
    """Assemble a model RDM whose fold-block entries come from the layer chosen
    on the stimuli outside that fold.

    Entry (i, j) averages the RDMs of the layers selected by i's fold and j's
    fold, which keeps the matrix symmetric and reduces to a single layer's
    entries inside each diagonal block.
    """
    n = subject_rdm.n
    assignment = np.asarray(folds.assignment)
    if assignment.size != n:
        raise DataValidationError("fold plan does not match RDM size")
    layer_for_fold = np.empty(folds.k, dtype=np.int64)
    for f in range(folds.k):
        outside = np.flatnonzero(assignment != f)
        iu = np.triu_indices(outside.size, k=1)
        ds_out = subject_rdm.matrix[np.ix_(outside, outside)][iu]
        best_li, best_val = 0, -np.inf
        for li, dm in enumerate(model_rdms):
            val = spearman(dm.matrix[np.ix_(outside, outside)][iu], ds_out)
            if val > best_val:
                best_li, best_val = li, val
        layer_for_fold[f] = best_li
    row_layer = layer_for_fold[assignment]
    stack = np.stack([dm.matrix for dm in model_rdms])
    idx = np.arange(n)
    # by_row[i, j] takes entry (i, j) from the layer selected by i's fold; the
    # transpose supplies j's fold choice (layer RDMs are symmetric).
    by_row = stack[row_layer[:, None], idx[:, None], idx[None, :]]
    comp = 0.5 * (by_row + by_row.T)
    np.fill_diagonal(comp, 0.0)
    return RDM(matrix=comp)


def rsa_cv_layer(store: ActivationStore, responses: Sequence[ResponseMatrix],
                 folds: FoldPlan) -> RsaResult:
    """Summary coefficient with the layer chosen on held-out stimuli per fold."""
    rho, model_rdms, subject_rdms = _layer_subject_rhos(store, responses)
    per_subject = np.empty(len(subject_rdms))
    for si, ds in enumerate(subject_rdms):
        comp = _composite_rdm(model_rdms, ds, folds)
        per_subject[si] = compare_rdms(comp, ds)
    return RsaResult(
        rho_by_layer_subject=rho,
        rho_m=float(per_subject.mean()),
        method="cv_layer",
        layer_ids=tuple(store.layer_ids),
        subject_ids=tuple(r.subject_id for r in responses),
        best_layer=None,
        rho_per_subject=per_subject,
    )


def rsa_trajectory(checkpoint_stores: Sequence[tuple[int, ActivationStore]],
                   responses: Sequence[ResponseMatrix],
                   layers: Optional[Sequence[int]] = None) -> list[dict]:
    """Subject-averaged coefficients per (pretraining step, layer).

    Returns records {"step", "layer_id", "rho"} ordered by step then layer.
    """
    if not checkpoint_stores:
        raise DataValidationError("trajectory needs at least one checkpoint")
    layer_sets = {tuple(s.layer_ids) for _, s in checkpoint_stores}
    if len(layer_sets) > 1:
        raise DataValidationError(f"checkpoints disagree on layers: {layer_sets}")
    all_layers = checkpoint_stores[0][1].layer_ids
    wanted = list(layers) if layers is not None else all_layers
    missing = [l for l in wanted if l not in all_layers]
    if missing:
        raise DataValidationError(f"layers {missing} absent from checkpoints (have {all_layers})")
    subject_rdms = [compute_rdm(r.matrix) for r in responses]
    records = []
    for step, s in sorted(checkpoint_stores, key=lambda t: t[0]):
        for lid in wanted:
            dm = compute_rdm(s.layer(lid).matrix)
            vals = [compare_rdms(dm, ds) for ds in subject_rdms]
            records.append({"step": int(step), "layer_id": int(lid),
                            "rho": float(np.mean(vals))})
    return records
