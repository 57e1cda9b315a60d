"""Text, markdown and CSV renderings of evaluation results.

Every human table has a CSV twin built from the same formatted cells, so the
two never disagree. Fractions are shown as percentages with one decimal.
"""

from __future__ import annotations

import csv
import io
import json
from typing import Sequence

from .metrics import AUG_DEFINITION, DEGENERATE, EvalReport

EVAL_COLUMNS = ("detector", "auc_pct", "aug_pct", "n_positive", "n_negative")
LAMBDA_COLUMNS = ("lambda", "auc_pct", "aug_pct", "best")
REPORT_SCHEMA_VERSION = 1


def pct(x) -> str:
    if x == DEGENERATE:
        return DEGENERATE
    return f"{100.0 * x:.1f}"


def _num(x: float) -> str:
    return repr(float(x))


def eval_rows(reports: Sequence[EvalReport]) -> list[list[str]]:
    return [
        [r.detector_name, pct(r.auc), pct(r.aug), str(r.n_positive), str(r.n_negative)]
        for r in reports
    ]


def stability_rows(reports: Sequence[EvalReport]) -> tuple[list[str], list[list[str]]]:
    header = ["green_threshold"] + [r.detector_name for r in reports]
    if not reports or not reports[0].stability:
        return header, []
    rows = []
    for k, (t, _) in enumerate(reports[0].stability):
        rows.append([_num(t)] + [pct(r.stability[k][1]) for r in reports])
    return header, rows


def lambda_rows(sweep: Sequence[tuple[float, float, float]], best: float) -> list[list[str]]:
    return [[_num(lam), pct(a), pct(g), "*" if lam == best else ""] for lam, a, g in sweep]


def aligned(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [len(h) for h in header]
    for row in rows:
        widths = [max(w, len(c)) for w, c in zip(widths, row)]

    def fmt(cells):
        first, *rest = cells
        parts = [first.ljust(widths[0])] + [c.rjust(w) for c, w in zip(rest, widths[1:])]
        return "  ".join(parts).rstrip()

    lines = [fmt(header), "  ".join("-" * w for w in widths)]
    lines += [fmt(r) for r in rows]
    return "\n".join(lines) + "\n"


def markdown(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def to_csv(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def report_json(reports: Sequence[EvalReport], *, source: str, n_samples: int, green_threshold: float) -> str:
    doc = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "source": source,
        "n_samples": n_samples,
        "green_threshold": green_threshold,
        "aug_definition": AUG_DEFINITION,
        "reports": [r.to_dict() for r in reports],
    }
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def load_report_json(text: str) -> tuple[dict, list[EvalReport]]:
    doc = json.loads(text)
    return doc, [EvalReport.from_dict(d) for d in doc["reports"]]


def render_eval(reports: Sequence[EvalReport], fmt: str = "text") -> str:
    rows = eval_rows(reports)
    if fmt == "csv":
        return to_csv(EVAL_COLUMNS, rows)
    if fmt == "markdown":
        return markdown(EVAL_COLUMNS, rows)
    return f"# {AUG_DEFINITION}\n" + aligned(EVAL_COLUMNS, rows)
