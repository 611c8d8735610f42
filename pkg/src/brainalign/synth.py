"""Synthetic dataset generators with known ground truth.

These make every pipeline statistic checkable at desk scale: responses are
built as a linear read-out of one designated activation layer at a chosen
signal-to-noise ratio, so the population R^2 of the generating model is
snr / (1 + snr) by construction.  A graded model family ties probe-task labels
and synthetic responses to one latent representation, so members mixed with
less noise must score higher on both axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import (
    ActivationStore,
    ActivationTensor,
    ComponentMatrix,
    ResponseMatrix,
    StimulusCatalog,
    canonical_catalog,
)
from .errors import DataValidationError
from .probe import TaskSpec


@dataclass(frozen=True)
class SynthSpec:
    n_stimuli: int = 165
    n_layers: int = 4
    dims: tuple[int, ...] = ()          # per layer; one value recycled if shorter
    signal_layer: int = 1               # 1-based layer id carrying the signal
    snr: float = 4.0
    n_subjects: int = 3
    n_voxels: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.n_stimuli < 10 or self.n_layers < 1:
            raise DataValidationError("need >= 10 stimuli and >= 1 layer")
        if not (1 <= self.signal_layer <= self.n_layers):
            raise DataValidationError(
                f"signal_layer {self.signal_layer} outside 1..{self.n_layers}"
            )
        if not (np.isfinite(self.snr) and self.snr >= 0):
            raise DataValidationError("snr must be finite and >= 0")
        if self.n_subjects < 1 or self.n_voxels < 1:
            raise DataValidationError("need >= 1 subject and >= 1 voxel")

    def layer_dims(self) -> list[int]:
        if not self.dims:
            return [16] * self.n_layers
        dims = list(self.dims)
        while len(dims) < self.n_layers:
            dims.append(dims[-1])
        return dims[:self.n_layers]

    @property
    def expected_r2(self) -> float:
        return self.snr / (1.0 + self.snr)


@dataclass(frozen=True)
class GroundTruth:
    spec: SynthSpec
    expected_r2: float
    weights_by_subject: dict


def gen_aligned_pair(spec: SynthSpec) -> tuple[ActivationStore, list[ResponseMatrix], GroundTruth]:
    """Activation store plus per-subject responses generated from one layer.

    Voxel responses are X_signal @ w_v plus Gaussian noise scaled per voxel so
    the empirical signal/noise variance ratio equals the requested snr; the
    other layers are independent noise of the same shape.
    """
    rng = np.random.default_rng(spec.seed)
    dims = spec.layer_dims()
    tensors = []
    signal = None
    for li in range(spec.n_layers):
        mat = rng.standard_normal((spec.n_stimuli, dims[li]))
        if li + 1 == spec.signal_layer:
            signal = mat
        tensors.append(ActivationTensor("synth", li + 1, mat))
    store = ActivationStore("synth", tuple(tensors))

    responses = []
    weights_by_subject = {}
    for si in range(spec.n_subjects):
        w = rng.standard_normal((dims[spec.signal_layer - 1], spec.n_voxels))
        clean = signal @ w
        sig_sd = clean.std(axis=0)
        if spec.snr == 0:
            y = rng.standard_normal(clean.shape)
        else:
            noise_sd = sig_sd / np.sqrt(spec.snr)
            y = clean + rng.standard_normal(clean.shape) * noise_sd
        sid = f"sub{si:02d}"
        responses.append(ResponseMatrix(sid, "SYNTH", y))
        weights_by_subject[sid] = w
    return store, responses, GroundTruth(spec, spec.expected_r2, weights_by_subject)


def gen_components(spec: SynthSpec, store: ActivationStore,
                   noise: float = 0.3) -> ComponentMatrix:
    """Six component targets derived from the signal layer plus noise."""
    rng = np.random.default_rng(spec.seed + 7919)
    X = store.layer(spec.signal_layer).matrix
    B = rng.standard_normal((X.shape[1], 6))
    clean = X @ B
    clean = clean / clean.std(axis=0)
    return ComponentMatrix(matrix=clean + noise * rng.standard_normal(clean.shape))


# ---------------------------------------------------------------------------
# Graded model family
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelFamily:
    catalog: StimulusCatalog
    stores: tuple[ActivationStore, ...]          # one per quality level, worst first
    quality_levels: tuple[float, ...]
    responses: tuple[ResponseMatrix, ...]        # shared across members
    tasks: tuple[TaskSpec, ...]
    latent: np.ndarray


def gen_model_family(quality_levels: Sequence[float], spec: SynthSpec,
                     n_tasks_classes: int = 4) -> ModelFamily:
    """Family of stores mixing one latent representation with noise.

    Member q has layers q * (Z @ R_l) + (1 - q) * noise; both the probe-task
    labels and the synthetic responses are read out of Z, so higher-q members
    are better on every axis by construction.
    """
    levels = [float(q) for q in quality_levels]
    if len(levels) < 3:
        raise DataValidationError("need at least 3 quality levels")
    if any(not (0.0 <= q <= 1.0) for q in levels):
        raise DataValidationError("quality levels must lie in [0, 1]")
    rng = np.random.default_rng(spec.seed)
    n = spec.n_stimuli
    dims = spec.layer_dims()
    d_latent = min(dims)
    catalog = canonical_catalog(n)
    Z = rng.standard_normal((n, d_latent))

    responses = []
    for si in range(spec.n_subjects):
        w = rng.standard_normal((d_latent, spec.n_voxels))
        clean = Z @ w
        noise_sd = clean.std(axis=0) / np.sqrt(max(spec.snr, 1e-9))
        y = clean + rng.standard_normal(clean.shape) * noise_sd
        responses.append(ResponseMatrix(f"sub{si:02d}", "SYNTH", y))

    # Frozen per-layer mixing so every member sees the same geometry.
    rotations = []
    for d in dims:
        g = rng.standard_normal((d_latent, d))
        if d <= d_latent:
            rotations.append(np.linalg.qr(g)[0])
        else:
            rotations.append(g / np.sqrt(d_latent))
    noise_banks = [[rng.standard_normal((n, d)) for d in dims] for _ in levels]

    stores = []
    for mi, q in enumerate(levels):
        tensors = []
        for li, d in enumerate(dims):
            clean = Z @ rotations[li]
            mat = q * clean + (1.0 - q) * noise_banks[mi][li]
            tensors.append(ActivationTensor(f"synth-q{mi:02d}", li + 1, mat))
        stores.append(ActivationStore(f"synth-q{mi:02d}", tuple(tensors)))

    # Two probe tasks read out of the latent: one multiclass, one multilabel.
    perm = rng.permutation(n)
    n_tr = int(n * 0.6)
    n_va = int(n * 0.2)
    train_idx = perm[:n_tr]
    valid_idx = perm[n_tr:n_tr + n_va]
    test_idx = perm[n_tr + n_va:]

    B = rng.standard_normal((d_latent, n_tasks_classes))
    y_mc = np.argmax(Z @ B, axis=1)
    task_mc = TaskSpec(
        name="latent_class", kind="multiclass", metric="accuracy",
        n_classes=n_tasks_classes, targets=y_mc.astype(np.int64),
        train_idx=train_idx, valid_idx=valid_idx, test_idx=test_idx,
    )
    n_ml = 5
    G = rng.standard_normal((d_latent, n_ml))
    raw = Z @ G
    y_ml = (raw > np.quantile(raw, 0.6, axis=0)).astype(np.float64)
    task_ml = TaskSpec(
        name="latent_events", kind="multilabel", metric="mAP",
        n_classes=n_ml, targets=y_ml,
        train_idx=train_idx, valid_idx=valid_idx, test_idx=test_idx,
    )
    return ModelFamily(
        catalog=catalog,
        stores=tuple(stores),
        quality_levels=tuple(levels),
        responses=tuple(responses),
        tasks=(task_mc, task_ml),
        latent=Z,
    )
