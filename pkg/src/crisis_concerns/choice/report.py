"""Estimation-table layout: four fit-statistic rows, then coefficient rows
grouped by variable (constants first) and ordered by alternative."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

from ..activity.labels import DISPLAY_NAMES
from ..errors import DataError
from .model import ASC, MNLEstimate, UtilitySpec

NON_CONVERGED = "NON-CONVERGED"
STAT_LABELS = (
    ("n_obs", "Number of observations"),
    ("loglik", "Loglikelihood of estimated model"),
    ("loglik_null", "Loglikelihood of null model"),
    ("rho_squared", "Rho-squared against null model"),
)
COLUMNS = ("variable", "utility", "parameter", "estimate", "std_error", "t_stat")
TEXT_DECIMALS = 3
CSV_DECIMALS = 6


@dataclass
class TableRow:
    variable: str
    utility: str
    parameter: str
    estimate: float
    std_error: float
    t_stat: float


@dataclass
class ReportTable:
    stats: dict
    rows: list
    converged: bool = True
    notice: str = ""
    iterations: int = 0

    @property
    def body_variables(self):
        return [r.variable for r in self.rows]


def _display(alt):
    return DISPLAY_NAMES.get(alt, alt)


def report_table(est: MNLEstimate, spec: UtilitySpec) -> ReportTable:
    # One row per (variable, parameter); tied alternatives share the row.
    groups = {}
    for t in spec.terms:
        key = (t.variable, t.parameter)
        groups.setdefault(key, set()).update(t.alternatives)
    var_order = [ASC] if any(v == ASC for v, _ in groups) else []
    for v, _ in groups:
        if v not in var_order:
            var_order.append(v)
    rows = []
    for v in var_order:
        keys = sorted((k for k in groups if k[0] == v), key=lambda k: (min(groups[k]), sorted(groups[k])))
        for k in keys:
            p = k[1]
            alts = sorted(groups[k])
            rows.append(
                TableRow(
                    variable=spec.variable_labels.get(v, v),
                    utility=", ".join(_display(spec.alternatives[a]) for a in alts),
                    parameter=spec.parameter_names[p],
                    estimate=float(est.beta[p]),
                    std_error=float(est.std_errors[p]),
                    t_stat=float(est.t_stats[p]),
                )
            )
    stats = {
        "n_obs": int(est.n_obs),
        "loglik": float(est.loglik),
        "loglik_null": float(est.loglik_null),
        "rho_squared": float(est.rho_squared),
    }
    notice = "" if est.converged else (
        f"{NON_CONVERGED}: stopped after {est.iterations} iterations with max|gradient| = {est.gradient_norm:.3g}"
    )
    return ReportTable(stats, rows, est.converged, notice, est.iterations)


def _fmt(x, decimals):
    return "nan" if not math.isfinite(x) else f"{x:.{decimals}f}"


def _fmt_stat(key, value, decimals, thousands):
    if key == "n_obs":
        return f"{value:,d}" if thousands else str(value)
    if thousands:
        return f"{value:,.{decimals}f}"
    return _fmt(value, decimals)


def _num(s):
    try:
        return float(s.replace(",", ""))
    except ValueError:
        raise DataError(f"not a number: {s!r}") from None


def emit_text(table: ReportTable) -> str:
    """Aligned plain text with ``|``-separated columns."""
    lines = []
    if not table.converged:
        lines.append(f"*** {table.notice} ***")
    w = max(len(lab) for _, lab in STAT_LABELS)
    for key, lab in STAT_LABELS:
        lines.append(f"{lab:<{w}}  {_fmt_stat(key, table.stats[key], TEXT_DECIMALS, True)}")
    head = ("Variable", "Utility", "Parameter", "Parameter Estimate", "Std. Error", "t-stat")
    cells = []
    prev = None
    for r in table.rows:
        shown = r.variable if r.variable != prev else ""
        prev = r.variable
        cells.append((shown, r.utility, r.parameter, *(_fmt(v, TEXT_DECIMALS) for v in (r.estimate, r.std_error, r.t_stat))))
    widths = [max(len(c[i]) for c in [head, *cells]) for i in range(len(head))]

    def line(c):
        parts = [c[i].ljust(widths[i]) if i < 3 else c[i].rjust(widths[i]) for i in range(len(c))]
        return " | ".join(parts).rstrip()

    lines.append(line(head))
    lines.append("-+-".join("-" * x for x in widths))
    lines.extend(line(c) for c in cells)
    return "\n".join(lines) + "\n"


def emit_csv(table: ReportTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if not table.converged:
        w.writerow([NON_CONVERGED, table.notice])
    w.writerow(["statistic", "value"])
    for key, _ in STAT_LABELS:
        w.writerow([key, _fmt_stat(key, table.stats[key], CSV_DECIMALS, False)])
    w.writerow([])
    w.writerow(COLUMNS)
    for r in table.rows:
        w.writerow([r.variable, r.utility, r.parameter, *(_fmt(v, CSV_DECIMALS) for v in (r.estimate, r.std_error, r.t_stat))])
    return buf.getvalue()


def _stats_from(pairs):
    stats = {}
    for key, value in pairs:
        stats[key] = int(_num(value)) if key == "n_obs" else _num(value)
    if set(stats) != {k for k, _ in STAT_LABELS}:
        raise DataError("table header must carry the four fit statistics")
    return stats


def parse_csv(text: str) -> ReportTable:
    rows = list(csv.reader(io.StringIO(text)))
    converged, notice = True, ""
    if rows and rows[0] and rows[0][0] == NON_CONVERGED:
        converged, notice = False, rows[0][1]
        rows = rows[1:]
    if not rows or rows[0] != ["statistic", "value"]:
        raise DataError("missing statistics block")
    stats = _stats_from((r[0], r[1]) for r in rows[1:5] if len(r) == 2)
    try:
        start = rows.index(list(COLUMNS))
    except ValueError:
        raise DataError("missing coefficient header") from None
    body = []
    for r in rows[start + 1 :]:
        if not r:
            continue
        if len(r) != len(COLUMNS):
            raise DataError(f"malformed coefficient row: {r!r}")
        body.append(TableRow(r[0], r[1], r[2], *(_num(v) for v in r[3:6])))
    return ReportTable(stats, body, converged, notice)


def parse_text(text: str) -> ReportTable:
    lines = text.rstrip("\n").split("\n")
    converged, notice = True, ""
    if lines and lines[0].startswith("*** ") and NON_CONVERGED in lines[0]:
        converged, notice = False, lines[0].strip("* ").strip()
        lines = lines[1:]
    pairs = []
    for (key, lab), ln in zip(STAT_LABELS, lines[:4]):
        if not ln.startswith(lab):
            raise DataError(f"expected statistic row {lab!r}")
        pairs.append((key, ln[len(lab) :].strip()))
    stats = _stats_from(pairs)
    body, current = [], None
    for ln in lines[6:]:
        c = [x.strip() for x in ln.split(" | ")]
        if len(c) != 6:
            raise DataError(f"malformed coefficient row: {ln!r}")
        current = c[0] or current
        body.append(TableRow(current, c[1], c[2], *(_num(v) for v in c[3:])))
    return ReportTable(stats, body, converged, notice)
