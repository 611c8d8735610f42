"""Voxel reliability filtering and region restriction for response matrices."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import REGION_NAMES, ResponseMatrix
from .errors import DataValidationError, DegenerateInputError


@dataclass(frozen=True)
class SessionPair:
    """One voxel's responses from early sessions (averaged) and a held-out session."""

    v12: np.ndarray
    v3: np.ndarray

    def __post_init__(self):
        v12 = np.asarray(self.v12, dtype=float)
        v3 = np.asarray(self.v3, dtype=float)
        if v12.shape != v3.shape or v12.ndim != 1:
            raise DataValidationError(
                f"session vectors must be equal-length 1-D, got {v12.shape} and {v3.shape}"
            )
        if not (np.all(np.isfinite(v12)) and np.all(np.isfinite(v3))):
            raise DataValidationError("session vectors contain non-finite values")


def session_consistency(pair: SessionPair) -> float:
    """Cross-session reliability: one minus the normalized residual of
    projecting the early-session response onto the held-out session.

    Returns 1.0 when the two responses are proportional and 0.0 when they are
    orthogonal; can go arbitrarily negative for anti-aligned noise.
    """
    v12 = np.asarray(pair.v12, dtype=float)
    v3 = np.asarray(pair.v3, dtype=float)
    n3 = float(v3 @ v3)
    n12 = float(np.linalg.norm(v12))
    if n3 == 0.0:
        raise DegenerateInputError("held-out session response is the zero vector")
    if n12 == 0.0:
        raise DegenerateInputError("early-session response is the zero vector")
    proj = (float(v3 @ v12) / n3) * v3
    resid = float(np.linalg.norm(v12 - proj))
    return 1.0 - resid / n12


def select_voxels(
    sessions: Sequence[SessionPair],
    threshold: float = 0.3,
    mask: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Boolean keep-vector: consistency strictly above threshold, ANDed with an
    optional precomputed significance mask."""
    keep = np.array([session_consistency(p) > threshold for p in sessions], dtype=bool)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != keep.shape:
            raise DataValidationError(
                f"mask length {mask.shape} does not match voxel count {keep.shape}"
            )
        keep &= mask
    return keep


def apply_voxel_selection(responses: ResponseMatrix, keep: np.ndarray) -> ResponseMatrix:
    """Drop voxels where keep is False, preserving column order."""
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != (responses.n_voxels,):
        raise DataValidationError(
            f"selection length {keep.shape} does not match {responses.n_voxels} voxels"
        )
    if not keep.any():
        raise DegenerateInputError("voxel selection removed every voxel")
    labels = None
    if responses.region_labels is not None:
        labels = tuple(r for r, k in zip(responses.region_labels, keep) if k)
    return ResponseMatrix(
        responses.subject_id,
        responses.dataset_id,
        np.ascontiguousarray(responses.matrix[:, keep]),
        labels,
    )


def region_subset(responses: ResponseMatrix, region: str) -> ResponseMatrix:
    """Restrict a response matrix to the voxels of one anatomical region."""
    if region not in REGION_NAMES:
        raise DataValidationError(f"unknown region {region!r}; expected one of {REGION_NAMES}")
    if responses.region_labels is None:
        raise DataValidationError(
            f"{responses.dataset_id}/{responses.subject_id} carries no region labels"
        )
    keep = np.array([r == region for r in responses.region_labels], dtype=bool)
    if not keep.any():
        raise DegenerateInputError(
            f"region {region!r} matches no voxels in {responses.dataset_id}/{responses.subject_id}"
        )
    return ResponseMatrix(
        responses.subject_id,
        responses.dataset_id,
        np.ascontiguousarray(responses.matrix[:, keep]),
        tuple(region for _ in range(int(keep.sum()))),
    )
