"""Score tables and report emission: CSV/JSON serialization plus SVG bar
charts, scatter plots, and RDM heatmaps rendered without plotting libraries."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import DataValidationError
from .stats import CorrelationMatrix, pearson_test


@dataclass(frozen=True)
class ModelScore:
    """One model's alignment and downstream metrics.

    Alignment metrics are keyed by dataset; optional per-subject vectors feed
    the standard-error bars in the report.
    """

    model_id: str
    r2: Optional[dict] = None                 # dataset_id -> R^2
    rho: Optional[dict] = None                # dataset_id -> rho
    component_r2: Optional[dict] = None       # component name -> R^2
    task_scores: Optional[dict] = None        # task name -> metric
    overall: Optional[float] = None
    r2_by_subject: Optional[dict] = None      # dataset_id -> [per-subject R^2]
    rho_by_subject: Optional[dict] = None

    def __post_init__(self):
        for name in ("r2", "rho", "component_r2", "task_scores"):
            d = getattr(self, name)
            if d is not None:
                for k, v in d.items():
                    if not np.isfinite(v):
                        raise DataValidationError(f"{self.model_id}: {name}[{k}] not finite")
        if self.overall is not None and not np.isfinite(self.overall):
            raise DataValidationError(f"{self.model_id}: overall score not finite")


@dataclass(frozen=True)
class ScoreTable:
    rows: tuple[ModelScore, ...]

    def __post_init__(self):
        ids = [r.model_id for r in self.rows]
        if len(ids) != len(set(ids)):
            raise DataValidationError("duplicate model_ids in score table")

    def row(self, model_id: str) -> ModelScore:
        for r in self.rows:
            if r.model_id == model_id:
                return r
        raise KeyError(model_id)

    def to_jsonable(self) -> dict:
        out = []
        for r in self.rows:
            item = {"model_id": r.model_id}
            for name in ("r2", "rho", "component_r2", "task_scores",
                         "r2_by_subject", "rho_by_subject"):
                v = getattr(r, name)
                if v is not None:
                    item[name] = v
            if r.overall is not None:
                item["overall"] = r.overall
            out.append(item)
        return {"rows": out}


def save_score_table(table: ScoreTable, path) -> None:
    Path(path).write_text(json.dumps(table.to_jsonable(), indent=2))


def load_score_table(path) -> ScoreTable:
    raw = json.loads(Path(path).read_text())
    rows = []
    for item in raw["rows"]:
        rows.append(ModelScore(
            model_id=item["model_id"],
            r2=item.get("r2"),
            rho=item.get("rho"),
            component_r2=item.get("component_r2"),
            task_scores=item.get("task_scores"),
            overall=item.get("overall"),
            r2_by_subject=item.get("r2_by_subject"),
            rho_by_subject=item.get("rho_by_subject"),
        ))
    return ScoreTable(rows=tuple(rows))


def standard_error(values: Sequence[float]) -> float:
    """Sample SD over sqrt(n); the half-length of the report's error bars."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return 0.0
    return float(np.std(v, ddof=1) / np.sqrt(v.size))


# ---------------------------------------------------------------------------
# SVG primitives
# ---------------------------------------------------------------------------

def _svg(width: float, height: float, body: list[str]) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}">\n'
        + "\n".join(body) + "\n</svg>\n"
    )


def _text(x, y, s, size=11, anchor="middle", rotate=None) -> str:
    t = f'transform="rotate({rotate} {x:.1f} {y:.1f})" ' if rotate is not None else ""
    return (f'<text x="{x:.1f}" y="{y:.1f}" {t}font-size="{size}" '
            f'font-family="sans-serif" text-anchor="{anchor}">{escape(str(s))}</text>')


def _line(x1, y1, x2, y2, color="#333", width=1.0) -> str:
    return (f'<line x1="{x1:.1f}" y1="{y1:.1f}" x2="{x2:.1f}" y2="{y2:.1f}" '
            f'stroke="{color}" stroke-width="{width}"/>')


def bar_chart_svg(labels: Sequence[str], values: Sequence[float],
                  errors: Optional[Sequence[float]] = None, title: str = "",
                  topline: Optional[float] = None) -> str:
    """Vertical bar chart with optional +/- error bars and a reference line."""
    n = len(labels)
    if n == 0 or n != len(values):
        raise DataValidationError("bar chart needs matching labels and values")
    width = max(320.0, 60.0 + 28.0 * n)
    height = 300.0
    x0, y0, x1, y1 = 50.0, 40.0, width - 15.0, height - 70.0
    errs = list(errors) if errors is not None else [0.0] * n
    vmax = max(max(v + e for v, e in zip(values, errs)), topline or 0.0, 1e-9)
    vmax *= 1.1
    body = [_text((x0 + x1) / 2, 20, title, size=13)]
    body.append(_line(x0, y1, x1, y1))
    body.append(_line(x0, y0, x0, y1))
    for frac in (0.0, 0.5, 1.0):
        v = frac * vmax
        y = y1 - frac * (y1 - y0)
        body.append(_text(x0 - 6, y + 4, f"{v:.2f}", size=9, anchor="end"))
        body.append(_line(x0 - 3, y, x0, y, width=0.8))
    slot = (x1 - x0) / n
    bar_w = slot * 0.6
    for i, (lab, val, err) in enumerate(zip(labels, values, errs)):
        cx = x0 + slot * (i + 0.5)
        h = (val / vmax) * (y1 - y0)
        body.append(
            f'<rect x="{cx - bar_w / 2:.1f}" y="{y1 - h:.1f}" width="{bar_w:.1f}" '
            f'height="{h:.1f}" fill="#4878a8"/>'
        )
        if err > 0:
            e = (err / vmax) * (y1 - y0)
            body.append(_line(cx, y1 - h - e, cx, y1 - h + e, color="#222", width=1.2))
            body.append(_line(cx - 3, y1 - h - e, cx + 3, y1 - h - e, color="#222"))
            body.append(_line(cx - 3, y1 - h + e, cx + 3, y1 - h + e, color="#222"))
        body.append(_text(cx, y1 + 12, lab, size=8, anchor="end", rotate=-45))
    if topline is not None:
        y = y1 - (topline / vmax) * (y1 - y0)
        body.append(_line(x0, y, x1, y, color="#888", width=1.0))
        body.append(_text(x1, y - 4, "topline", size=8, anchor="end"))
    return _svg(width, height, body)


def scatter_svg(x: Sequence[float], y: Sequence[float], labels: Sequence[str],
                title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """Scatter with least-squares line and the correlation annotation."""
    xv = np.asarray(x, dtype=float)
    yv = np.asarray(y, dtype=float)
    if xv.size != yv.size or xv.size < 3:
        raise DataValidationError("scatter needs at least 3 paired points")
    width, height = 420.0, 340.0
    x0, y0, x1, y1 = 60.0, 40.0, width - 20.0, height - 50.0
    xmin, xmax = float(xv.min()), float(xv.max())
    ymin, ymax = float(yv.min()), float(yv.max())
    xpad = (xmax - xmin or 1.0) * 0.08
    ypad = (ymax - ymin or 1.0) * 0.08
    xmin, xmax = xmin - xpad, xmax + xpad
    ymin, ymax = ymin - ypad, ymax + ypad

    def sx(v):
        return x0 + (v - xmin) / (xmax - xmin) * (x1 - x0)

    def sy(v):
        return y1 - (v - ymin) / (ymax - ymin) * (y1 - y0)

    cell = pearson_test(xv, yv)
    body = [
        _text((x0 + x1) / 2, 20, title, size=13),
        _line(x0, y1, x1, y1), _line(x0, y0, x0, y1),
        _text((x0 + x1) / 2, height - 12, xlabel, size=10),
        _text(18, (y0 + y1) / 2, ylabel, size=10, rotate=-90),
        _text(x1 - 4, y0 + 12, f"r={cell.r:.3f} (p={cell.p:.2g})", size=10, anchor="end"),
    ]
    slope = float(np.polyfit(xv, yv, 1)[0])
    intercept = float(np.polyfit(xv, yv, 1)[1])
    body.append(_line(sx(xmin), sy(slope * xmin + intercept),
                      sx(xmax), sy(slope * xmax + intercept), color="#c44", width=1.2))
    for xi, yi in zip(xv, yv):
        body.append(f'<circle cx="{sx(xi):.1f}" cy="{sy(yi):.1f}" r="3.2" fill="#4878a8"/>')
    return _svg(width, height, body)


def rdm_heatmap_svg(matrix: np.ndarray, title: str = "") -> str:
    """Grayscale heatmap of a dissimilarity matrix (0 = white, 2 = black)."""
    m = np.asarray(matrix, dtype=float)
    n = m.shape[0]
    cell = max(2.0, min(6.0, 480.0 / n))
    width = n * cell + 40
    height = n * cell + 50
    body = [_text(width / 2, 18, title, size=12)]
    for i in range(n):
        for j in range(n):
            g = int(255 * (1.0 - min(max(m[i, j] / 2.0, 0.0), 1.0)))
            body.append(
                f'<rect x="{20 + j * cell:.1f}" y="{30 + i * cell:.1f}" '
                f'width="{cell:.2f}" height="{cell:.2f}" fill="rgb({g},{g},{g})"/>'
            )
    return _svg(width, height, body)


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

def _csv_columns(table: ScoreTable) -> list[str]:
    cols: list[str] = []
    for r in table.rows:
        for ds in (r.r2 or {}):
            c = f"R2[{ds}]"
            if c not in cols:
                cols.append(c)
        for ds in (r.rho or {}):
            c = f"rho[{ds}]"
            if c not in cols:
                cols.append(c)
        for name in (r.component_r2 or {}):
            c = f"component[{name}]"
            if c not in cols:
                cols.append(c)
        for t in (r.task_scores or {}):
            c = f"task[{t}]"
            if c not in cols:
                cols.append(c)
    cols.append("overall")
    return cols


def _csv_value(row: ModelScore, col: str):
    for prefix, attr in (("R2[", "r2"), ("rho[", "rho"),
                         ("component[", "component_r2"), ("task[", "task_scores")):
        if col.startswith(prefix):
            d = getattr(row, attr)
            key = col[len(prefix):-1]
            return "" if d is None or key not in d else repr(d[key])
    return "" if row.overall is None else repr(row.overall)


def emit_report(table: ScoreTable, cells: Optional[CorrelationMatrix] = None,
                out_dir=".", rdms: Optional[dict] = None,
                topline: Optional[float] = None) -> list[Path]:
    """Write the numeric tables (CSV + JSON) and the SVG figures for a score table.

    Returns the list of written paths.  ``rdms`` may map titles to square
    matrices to render as heatmaps; ``topline`` draws a reference line on the
    alignment bar charts.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    json_path = out / "scores.json"
    save_score_table(table, json_path)
    written.append(json_path)

    csv_path = out / "scores.csv"
    cols = _csv_columns(table)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model_id"] + cols)
        for r in table.rows:
            w.writerow([r.model_id] + [_csv_value(r, c) for c in cols])
    written.append(csv_path)

    if cells is not None:
        cpath = out / "correlations.json"
        cpath.write_text(json.dumps(cells.to_jsonable(), indent=2))
        written.append(cpath)

    labels = [r.model_id for r in table.rows]
    datasets = []
    for r in table.rows:
        for ds in (r.r2 or {}):
            if ds not in datasets:
                datasets.append(ds)
    for ds in datasets:
        vals = [float((r.r2 or {}).get(ds, 0.0)) for r in table.rows]
        errs = [standard_error((r.r2_by_subject or {}).get(ds, [])) for r in table.rows]
        p = out / f"r2_{ds}.svg"
        p.write_text(bar_chart_svg(labels, vals, errs, title=f"Encoding R2 ({ds})",
                                   topline=topline))
        written.append(p)
    rho_datasets = []
    for r in table.rows:
        for ds in (r.rho or {}):
            if ds not in rho_datasets:
                rho_datasets.append(ds)
    for ds in rho_datasets:
        vals = [float((r.rho or {}).get(ds, 0.0)) for r in table.rows]
        errs = [standard_error((r.rho_by_subject or {}).get(ds, [])) for r in table.rows]
        p = out / f"rsa_{ds}.svg"
        p.write_text(bar_chart_svg(labels, vals, errs, title=f"RSA coefficient ({ds})",
                                   topline=topline))
        written.append(p)

    with_overall = [r for r in table.rows if r.overall is not None]
    if len(with_overall) >= 3:
        for ds in datasets:
            pairs = [(r.overall, (r.r2 or {}).get(ds)) for r in with_overall
                     if (r.r2 or {}).get(ds) is not None]
            if len(pairs) >= 3:
                p = out / f"overall_vs_r2_{ds}.svg"
                p.write_text(scatter_svg(
                    [a for a, _ in pairs], [b for _, b in pairs],
                    [r.model_id for r in with_overall],
                    title=f"Downstream overall vs encoding R2 ({ds})",
                    xlabel="overall downstream score", ylabel="R2",
                ))
                written.append(p)
        for ds in rho_datasets:
            pairs = [(r.overall, (r.rho or {}).get(ds)) for r in with_overall
                     if (r.rho or {}).get(ds) is not None]
            if len(pairs) >= 3:
                p = out / f"overall_vs_rsa_{ds}.svg"
                p.write_text(scatter_svg(
                    [a for a, _ in pairs], [b for _, b in pairs],
                    [r.model_id for r in with_overall],
                    title=f"Downstream overall vs RSA ({ds})",
                    xlabel="overall downstream score", ylabel="rho",
                ))
                written.append(p)

    for name, matrix in (rdms or {}).items():
        p = out / f"rdm_{name}.svg"
        p.write_text(rdm_heatmap_svg(np.asarray(matrix), title=f"RDM: {name}"))
        written.append(p)
    return written
