"""Trust report emission: JSON document, ranked-feature text table,
importance/presence heatmap matrices, and an optional static SVG rendering.

All outputs are deterministic byte-for-byte given the same report object:
no timestamps, fixed float formatting, sorted keys.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .audit import AuditRecord
from .composition import IterationPlan
from .distill import FeatureSet
from .errors import IoFailure
from .manifest import CATEGORIES
from .util import dump_json, stable_id

REPORT_FORMAT_VERSION = 1


@dataclass
class TrustReport:
    config: dict  # resolved experiment config, re-runnable
    composition: dict
    plan: IterationPlan
    feature_sets: list[FeatureSet]
    metrics: list[dict[str, float]]  # per iteration
    audit_records: list[AuditRecord]
    stability_top10_jaccard: float | None
    artifact_dominance: float
    master_seed: int

    @property
    def experiment_id(self) -> str:
        return stable_id(self.config)

    def to_dict(self) -> dict:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "experiment_id": self.experiment_id,
            "config": self.config,
            "composition": self.composition,
            "plan": self.plan.to_dict(),
            "iterations": [
                {
                    "index": fs.iteration,
                    "metrics": self.metrics[i],
                    "feature_set": fs.to_dict(),
                }
                for i, fs in enumerate(self.feature_sets)
            ],
            "stability_top10_jaccard": self.stability_top10_jaccard,
            "artifact_dominance": self.artifact_dominance,
            "audit": [rec.to_dict() for rec in self.audit_records],
            "seeds": {"master": self.master_seed},
        }


def _feature_frequency(report: TrustReport) -> dict[str, dict[str, int]]:
    return {rec.feature: rec.frequency for rec in report.audit_records}


def _verdicts(report: TrustReport) -> dict[str, str]:
    return {rec.feature: rec.verdict.value for rec in report.audit_records}


def render_table(report: TrustReport, top_n: int = 3) -> str:
    """Ranked-feature table, one block of rows per run:
    Run | Feature | Importance | PB | UB | PM."""
    freq = _feature_frequency(report)
    verdicts = _verdicts(report)
    rows: list[tuple[str, ...]] = []
    for fs in report.feature_sets:
        for rank, (name, importance) in enumerate(fs.features[:top_n]):
            f = freq.get(name, {})
            rows.append((
                str(fs.iteration + 1) if rank == 0 else "",
                name,
                f"{importance:.3f}",
                str(f.get("PB", "-")),
                str(f.get("UB", "-")),
                str(f.get("PM", "-")),
                verdicts.get(name, "-"),
            ))
    header = ("Run", "Feature", "Importance", "PB", "UB", "PM", "Verdict")
    widths = [max(len(header[i]), max((len(r[i]) for r in rows), default=0)) for i in range(len(header))]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(header)),
        "  ".join("-" * w for w in widths),
    ]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    summary = [
        "",
        f"experiment: {report.experiment_id}",
        f"stability (mean pairwise Jaccard of top-10 names): "
        + (f"{report.stability_top10_jaccard:.3f}" if report.stability_top10_jaccard is not None else "n/a"),
        f"artifact dominance: {report.artifact_dominance:.3f}",
    ]
    return "\n".join(lines + summary) + "\n"


def emit_report(report: TrustReport, out_dir: str | Path) -> dict[str, Path]:
    """Write report.json and report.txt; returns the emitted paths."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out_dir}: {exc}") from exc
    json_path = out_dir / "report.json"
    dump_json(report.to_dict(), json_path)
    txt_path = out_dir / "report.txt"
    try:
        txt_path.write_text(render_table(report), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {txt_path}: {exc}") from exc
    return {"json": json_path, "text": txt_path}


def _ranked_feature_union(report: TrustReport) -> list[str]:
    totals: dict[str, float] = {}
    for fs in report.feature_sets:
        for name, importance in fs.features:
            totals[name] = totals.get(name, 0.0) + importance
    return [name for name, _ in sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))]


def importance_matrix(report: TrustReport) -> tuple[list[str], list[list[float]]]:
    """Feature x iteration importance; 0.0 where a feature is absent."""
    features = _ranked_feature_union(report)
    by_iter = [dict(fs.features) for fs in report.feature_sets]
    matrix = [[it.get(name, 0.0) for it in by_iter] for name in features]
    return features, matrix


def presence_matrix(report: TrustReport) -> tuple[list[str], list[list[int]]]:
    """Feature x category counts of containing samples, from the audit."""
    freq = _feature_frequency(report)
    features = [name for name in _ranked_feature_union(report) if name in freq]
    matrix = [[freq[name].get(cat, 0) for cat in CATEGORIES] for name in features]
    return features, matrix


def _write_matrix_csv(path: Path, row_names: list[str], col_names: list[str], matrix: list[list]) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["feature"] + col_names)
            for name, row in zip(row_names, matrix):
                writer.writerow([name] + [repr(v) if isinstance(v, float) else str(v) for v in row])
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _svg_heatmap(path: Path, title: str, row_names: list[str], col_names: list[str], matrix: list[list[float]]) -> None:
    """Static SVG grid with a linear white-to-blue color scale."""
    cell, label_w, header_h = 28, 360, 40
    width = label_w + cell * max(1, len(col_names)) + 10
    height = header_h + cell * max(1, len(row_names)) + 10
    peak = max((v for row in matrix for v in row), default=0.0) or 1.0
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="monospace" font-size="11">',
        f'<text x="4" y="14">{title}</text>',
    ]
    for j, col in enumerate(col_names):
        parts.append(f'<text x="{label_w + j * cell + 4}" y="{header_h - 6}">{col}</text>')
    for i, name in enumerate(row_names):
        label = name if len(name) <= 48 else name[:45] + "..."
        label = label.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
        y = header_h + i * cell
        parts.append(f'<text x="4" y="{y + cell - 10}">{label}</text>')
        for j, value in enumerate(matrix[i]):
            shade = int(255 - 200 * (value / peak))
            parts.append(
                f'<rect x="{label_w + j * cell}" y="{y}" width="{cell - 2}" height="{cell - 2}" '
                f'fill="rgb({shade},{shade},255)" stroke="gray"/>'
            )
    parts.append("</svg>")
    try:
        path.write_text("\n".join(parts) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def emit_heatmaps(report: TrustReport, out_dir: str | Path, svg: bool = True) -> dict[str, Path]:
    """Write importance and presence matrices as CSV (and SVG when asked)."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out_dir}: {exc}") from exc
    features, imp = importance_matrix(report)
    iter_cols = [f"iteration_{fs.iteration}" for fs in report.feature_sets]
    imp_path = out_dir / "heatmap_importance.csv"
    _write_matrix_csv(imp_path, features, iter_cols, imp)
    pres_features, pres = presence_matrix(report)
    pres_path = out_dir / "heatmap_presence.csv"
    _write_matrix_csv(pres_path, pres_features, list(CATEGORIES), pres)
    out = {"importance": imp_path, "presence": pres_path}
    if svg:
        svg_path = out_dir / "heatmap_importance.svg"
        _svg_heatmap(svg_path, "feature importance by iteration", features, iter_cols, imp)
        out["svg"] = svg_path
    return out
