"""Independent brute-force oracles used to verify the analysis engines.

Everything here is deliberately naive and self-contained: no imports from the
rest of the package, elimination instead of factorizations, exact rational
arithmetic where possible.  Inputs are capped at small sizes to keep the
naive algorithms honest and fast.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

_MAX_ORACLE_N = 2000


class OracleSizeError(ValueError):
    pass


def _cap(n: int, what: str, cap: int = _MAX_ORACLE_N) -> None:
    if n > cap:
        raise OracleSizeError(f"{what}: oracle capped at {cap} elements, got {n}")


def ridge_normal_equations(X, y, alpha: float):
    """Ridge weights via explicit normal equations and pivoted Gaussian elimination.

    Centers X and y, assembles (Xc'Xc + alpha*I) w = Xc'y_c, and solves it by
    partial-pivot elimination written out longhand.  Returns (weights, intercept).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    _cap(n, "ridge oracle rows", 500)
    _cap(d, "ridge oracle dims", 120)
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    yc = y - y_mean
    A = Xc.T @ Xc + alpha * np.eye(d)
    b = Xc.T @ yc
    # Forward elimination with partial pivoting.
    A = A.copy()
    b = b.copy()
    for col in range(d):
        pivot = col + int(np.argmax(np.abs(A[col:, col])))
        if abs(A[pivot, col]) == 0.0:
            raise np.linalg.LinAlgError("singular normal equations")
        if pivot != col:
            A[[col, pivot]] = A[[pivot, col]]
            b[[col, pivot]] = b[[pivot, col]]
        for row in range(col + 1, d):
            f = A[row, col] / A[col, col]
            A[row, col:] -= f * A[col, col:]
            b[row] -= f * b[col]
    # Back substitution.
    w = np.zeros(d)
    for col in range(d - 1, -1, -1):
        w[col] = (b[col] - A[col, col + 1:] @ w[col + 1:]) / A[col, col]
    intercept = y_mean - x_mean @ w
    return w, intercept


def pearson_exact(x, y):
    """Exact rational Pearson pieces for integer/rational inputs.

    Returns (sign, r_squared) with r_squared a Fraction, so that
    r = sign * sqrt(r_squared) exactly.
    """
    xs = [Fraction(v) for v in x]
    ys = [Fraction(v) for v in y]
    if len(xs) != len(ys):
        raise ValueError("length mismatch")
    n = len(xs)
    _cap(n, "exact Pearson", 500)
    mx = sum(xs, Fraction(0)) / n
    my = sum(ys, Fraction(0)) / n
    dx = [v - mx for v in xs]
    dy = [v - my for v in ys]
    num = sum((a * b for a, b in zip(dx, dy)), Fraction(0))
    vx = sum((a * a for a in dx), Fraction(0))
    vy = sum((b * b for b in dy), Fraction(0))
    if vx == 0 or vy == 0:
        raise ValueError("constant input: Pearson undefined")
    sign = 0 if num == 0 else (1 if num > 0 else -1)
    r2 = (num * num) / (vx * vy)
    return sign, r2


def pearson_exact_float(x, y) -> float:
    sign, r2 = pearson_exact(x, y)
    return sign * math.sqrt(float(r2))


def _average_ranks(values) -> list[Fraction]:
    """Average ranks (1-based) with ties sharing the mean rank, via enumeration."""
    vals = list(values)
    n = len(vals)
    ranks = []
    for v in vals:
        less = sum(1 for u in vals if u < v)
        equal = sum(1 for u in vals if u == v)
        # ranks occupied by the tie group: less+1 .. less+equal
        ranks.append(Fraction(2 * less + equal + 1, 2))
    return ranks


def spearman_exact_float(x, y) -> float:
    """Spearman rho via explicit average ranks and exact Pearson on those ranks."""
    _cap(len(list(x)), "exact Spearman", 500)
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    return pearson_exact_float(rx, ry)


def covariance_eigendecomposition(X):
    """Eigenpairs of the sample covariance (ddof=1), sorted by decreasing eigenvalue."""
    X = np.asarray(X, dtype=float)
    _cap(X.shape[0], "covariance oracle rows", 1000)
    _cap(X.shape[1], "covariance oracle dims", 200)
    cov = np.cov(X, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    return vals[order], vecs[:, order]


def average_precision_sweep(scores, labels) -> float:
    """Average precision by exhaustive threshold sweep.

    Ranks by descending score with ties broken by original index, then for each
    positive computes precision among all items at or above its threshold
    position, counting set memberships explicitly.
    """
    scores = list(scores)
    labels = [int(v) for v in labels]
    n = len(scores)
    _cap(n, "AP oracle", 200)
    if n != len(labels):
        raise ValueError("length mismatch")
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    precisions = []
    for pos_rank, idx in enumerate(order, start=1):
        if labels[idx] != 1:
            continue
        retrieved = order[:pos_rank]
        tp = sum(1 for j in retrieved if labels[j] == 1)
        precisions.append(Fraction(tp, pos_rank))
    if not precisions:
        raise ValueError("no positive labels")
    return float(sum(precisions, Fraction(0)) / len(precisions))


def expected_average_precision_random(n: int, p: int) -> float:
    """Exact expected AP when p of n items are positive and ranks are uniform.

    The rank of the j-th positive follows a negative hypergeometric law:
    P(R_j = r) = C(r-1, j-1) C(n-r, p-j) / C(n, p); the expectation of the
    mean of j / R_j is enumerated directly.
    """
    from math import comb

    _cap(n, "expected-AP oracle", 500)
    if not (1 <= p <= n):
        raise ValueError("need 1 <= p <= n")
    total = Fraction(0)
    denom = comb(n, p)
    for j in range(1, p + 1):
        for r in range(j, n - (p - j) + 1):
            prob = Fraction(comb(r - 1, j - 1) * comb(n - r, p - j), denom)
            total += Fraction(j, r) * prob
    return float(total / p)


def permutation_pvalue(x, y, draws: int = 10000, seed: int = 0) -> float:
    """Two-sided permutation p-value for the Pearson correlation of x and y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _cap(len(x), "permutation oracle", 500)
    _cap(draws, "permutation draws", 200000)

    def _r(a, b):
        a = a - a.mean()
        b = b - b.mean()
        return float(a @ b / math.sqrt((a @ a) * (b @ b)))

    r_obs = abs(_r(x, y))
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(draws):
        perm = rng.permutation(len(y))
        if abs(_r(x, y[perm])) >= r_obs - 1e-12:
            hits += 1
    return hits / draws


def windowed_polyfit(series, window: int, order: int, fit_offset: int):
    """Per-point polynomial smoothing by direct np.polyfit on each window.

    ``fit_offset`` is the index of the fit point inside a full window.  Windows
    are truncated at the series boundaries.
    """
    y = np.asarray(series, dtype=float)
    n = len(y)
    _cap(n, "polyfit oracle", 5000)
    left = fit_offset
    right = window - fit_offset - 1
    out = np.empty(n)
    for i in range(n):
        lo = max(0, i - left)
        hi = min(n, i + right + 1)
        t = np.arange(lo, hi, dtype=float)
        coeffs = np.polyfit(t - i, y[lo:hi], deg=order)
        out[i] = np.polyval(coeffs, 0.0)
    return out


def oracle_suite() -> dict:
    """Registry of all oracles, keyed by what they check."""
    return {
        "ridge_normal_equations": ridge_normal_equations,
        "pearson_exact": pearson_exact,
        "pearson_exact_float": pearson_exact_float,
        "spearman_exact_float": spearman_exact_float,
        "covariance_eigendecomposition": covariance_eigendecomposition,
        "average_precision_sweep": average_precision_sweep,
        "expected_average_precision_random": expected_average_precision_random,
        "permutation_pvalue": permutation_pvalue,
        "windowed_polyfit": windowed_polyfit,
    }
