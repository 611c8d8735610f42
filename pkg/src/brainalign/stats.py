"""Correlation analysis between alignment metrics and downstream performance,
significance banding, and trajectory smoothing."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special as sp

from .errors import DataValidationError, DegenerateInputError

SIG_STRONG = "p<0.01"
SIG_MID = "0.01<=p<=0.05"
SIG_WEAK = "p>0.05"


def significance_band(p: float) -> str:
    """Band boundaries are closed on the middle interval: p=0.01 and p=0.05
    both land in the middle band."""
    if p < 0.01:
        return SIG_STRONG
    if p <= 0.05:
        return SIG_MID
    return SIG_WEAK


@dataclass(frozen=True)
class CorrelationCell:
    r: float
    p: float
    n: int
    significance: str

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0):
            raise DataValidationError(f"p-value {self.p} outside [0, 1]")
        if self.significance != significance_band(self.p):
            raise DataValidationError("significance band inconsistent with p-value")


def pearson_test(x: np.ndarray, y: np.ndarray) -> CorrelationCell:
    """Pearson r with a two-sided p-value from the exact t reference
    distribution (via the regularized incomplete beta function)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DataValidationError(f"shape mismatch: {x.shape} vs {y.shape}")
    n = x.size
    if n < 3:
        raise DataValidationError("correlation test needs n >= 3")
    dx = x - x.mean()
    dy = y - y.mean()
    vx = float(dx @ dx)
    vy = float(dy @ dy)
    if vx == 0.0 or vy == 0.0:
        raise DegenerateInputError("constant input: correlation undefined")
    r = float(np.clip((dx @ dy) / np.sqrt(vx * vy), -1.0, 1.0))
    df = n - 2
    if abs(r) == 1.0:
        p = 0.0
    else:
        # P(|T| >= t) for t = r*sqrt(df/(1-r^2)) equals I_{df/(df+t^2)}(df/2, 1/2).
        p = float(sp.betainc(df / 2.0, 0.5, df / (df + df * r * r / (1.0 - r * r))))
    p = min(max(p, 0.0), 1.0)
    return CorrelationCell(r=r, p=p, n=n, significance=significance_band(p))


@dataclass(frozen=True)
class CorrelationMatrix:
    """Table-shaped grid of correlation cells: alignment metrics x task scores."""

    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    cells: tuple[tuple[CorrelationCell, ...], ...]
    n_models: int
    filter_threshold: Optional[float] = None

    def to_jsonable(self) -> dict:
        return {
            "row_labels": list(self.row_labels),
            "col_labels": list(self.col_labels),
            "n_models": self.n_models,
            "filter_threshold": self.filter_threshold,
            "cells": [
                [
                    {"r": c.r, "p": c.p, "n": c.n, "significance": c.significance}
                    for c in row
                ]
                for row in self.cells
            ],
        }


def correlate_alignment_performance(table, filter_threshold: Optional[float] = None
                                    ) -> CorrelationMatrix:
    """Correlate every alignment metric against every task score and the
    overall score, optionally keeping only models above an overall threshold.
    """
    rows = [r for r in table.rows]
    if filter_threshold is not None:
        rows = [r for r in rows if r.overall is not None and r.overall > filter_threshold]
    if len(rows) < 3:
        raise DataValidationError(
            f"need at least 3 models after filtering, have {len(rows)}"
        )

    def _ordered_keys(getter):
        keys = []
        for r in rows:
            for k in (getter(r) or {}):
                if k not in keys:
                    keys.append(k)
        return keys

    align_cols: list[tuple[str, list]] = []
    for ds in _ordered_keys(lambda r: r.r2):
        align_cols.append((f"R2[{ds}]", [None if r.r2 is None else r.r2.get(ds) for r in rows]))
    for ds in _ordered_keys(lambda r: r.rho):
        align_cols.append((f"rho[{ds}]", [None if r.rho is None else r.rho.get(ds) for r in rows]))
    comp_names = None
    for r in rows:
        if r.component_r2 is not None:
            comp_names = list(r.component_r2.keys())
            break
    if comp_names:
        for name in comp_names:
            align_cols.append(
                (f"component[{name}]",
                 [None if r.component_r2 is None else r.component_r2.get(name) for r in rows])
            )
    if not align_cols:
        raise DataValidationError("score table carries no alignment metrics")

    task_names = _ordered_keys(lambda r: r.task_scores)
    perf_cols: list[tuple[str, list]] = [
        (t, [None if r.task_scores is None else r.task_scores.get(t) for r in rows])
        for t in task_names
    ]
    perf_cols.append(("overall", [r.overall for r in rows]))

    cells = []
    for label_a, vals_a in align_cols:
        row_cells = []
        for label_p, vals_p in perf_cols:
            pair = [(a, b) for a, b in zip(vals_a, vals_p) if a is not None and b is not None]
            if len(pair) < 3:
                raise DataValidationError(
                    f"fewer than 3 models carry both {label_a} and {label_p}"
                )
            xs = np.array([a for a, _ in pair])
            ys = np.array([b for _, b in pair])
            row_cells.append(pearson_test(xs, ys))
        cells.append(tuple(row_cells))
    return CorrelationMatrix(
        row_labels=tuple(l for l, _ in align_cols),
        col_labels=tuple(l for l, _ in perf_cols),
        cells=tuple(cells),
        n_models=len(rows),
        filter_threshold=filter_threshold,
    )


# ---------------------------------------------------------------------------
# Savitzky-Golay smoothing
# ---------------------------------------------------------------------------

def savgol_smooth(series: np.ndarray, window: int = 10, order: int = 3) -> np.ndarray:
    """Least-squares local polynomial smoothing.

    Even windows place the fit point just left of the window center: a window
    of 10 covers offsets [-4, +5] around the smoothed sample.  Edge points are
    fit on the window truncated to the series bounds.
    """
    y = np.asarray(series, dtype=float)
    if y.ndim != 1:
        raise DataValidationError("series must be 1-D")
    if window <= order:
        raise DataValidationError(f"window ({window}) must exceed order ({order})")
    n = y.size
    if n < window:
        raise DataValidationError(f"series length {n} shorter than window {window}")
    left = (window - 1) // 2   # fit point sits left of center for even windows
    right = window - 1 - left
    offsets = np.arange(-left, right + 1, dtype=float)
    # Interior coefficients: row of the least-squares smoothing operator at offset 0.
    A = np.vander(offsets, order + 1, increasing=True)
    coeffs = np.linalg.lstsq(A.T @ A, A.T, rcond=None)[0][0]
    out = np.empty(n)
    for i in range(n):
        lo, hi = i - left, i + right + 1
        if lo >= 0 and hi <= n:
            out[i] = coeffs @ y[lo:hi]
        else:
            lo2, hi2 = max(0, lo), min(n, hi)
            t = np.arange(lo2, hi2, dtype=float) - i
            Aw = np.vander(t, order + 1, increasing=True)
            sol = np.linalg.lstsq(Aw, y[lo2:hi2], rcond=None)[0]
            out[i] = sol[0]
    return out
