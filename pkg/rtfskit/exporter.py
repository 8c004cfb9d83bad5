"""Cost report serialisation: text table, JSON and CSV."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .errors import UsageError
from .models import CostReport, CostRow

FORMATS = ("text", "json", "csv")

COLUMNS = ["module", "params", "params_m", "macs", "macs_g", "applications"]


def millions(value: int) -> str:
    return f"{value / 1e6:.3f}"


def billions(value: int) -> str:
    return f"{value / 1e9:.3f}"


class ReportExporter:
    """Renders one ``CostReport`` in a fixed column order."""

    def __init__(self, report: CostReport):
        self.report = report

    def cells(self, row: CostRow) -> List[str]:
        return [
            row.module,
            str(row.params),
            millions(row.params),
            str(row.macs),
            billions(row.macs),
            str(row.applications),
        ]

    def total_cells(self) -> List[str]:
        report = self.report
        return [
            "total",
            str(report.total_params),
            millions(report.total_params),
            str(report.total_macs),
            billions(report.total_macs),
            "",
        ]

    def generate_table(self, format: str = "text") -> str:
        if format == "json":
            return self._generate_json()
        if format == "csv":
            return self._generate_csv()
        if format == "text":
            return self._generate_text()
        raise UsageError(f"Unknown report format {format!r}; choose from {', '.join(FORMATS)}")

    def _generate_json(self) -> str:
        payload: Dict[str, Any] = self.report.to_dict()
        payload["total"]["params_m"] = millions(self.report.total_params)
        payload["total"]["macs_g"] = billions(self.report.total_macs)
        return json.dumps(payload, indent=2) + "\n"

    def _generate_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in self.report.rows:
            writer.writerow(self.cells(row))
        writer.writerow(self.total_cells())
        return buffer.getvalue()

    def _generate_text(self) -> str:
        report = self.report
        body = [self.cells(row) for row in report.rows] + [self.total_cells()]
        header = ["Module", "Params", "Params (M)", "MACs", "MACs (G)", "x"]
        lines = [f"# input: {report.input_samples} samples @ {report.sample_rate} Hz ({report.seconds:g} s)"]
        lines.extend(_aligned(header, body))
        return "\n".join(lines) + "\n"


def _aligned(header: Sequence[str], body: Sequence[Sequence[str]]) -> List[str]:
    widths = [max(len(header[i]), *(len(row[i]) for row in body)) for i in range(len(header))]

    def render(cells: Sequence[str]) -> str:
        first = cells[0].ljust(widths[0])
        rest = [cell.rjust(width) for cell, width in zip(cells[1:], widths[1:])]
        return "  ".join([first, *rest]).rstrip()

    rule = "-" * (sum(widths) + 2 * (len(widths) - 1))
    return [render(header), rule, *(render(row) for row in body[:-1]), rule, render(body[-1])]


def report_table(report: CostReport, format: str = "text") -> str:
    return ReportExporter(report).generate_table(format)


def sweep_table(key: str, values: Sequence[object], reports: Sequence[CostReport], format: str = "text") -> str:
    """One summary line per swept value."""

    if not reports:
        raise UsageError("--sweep needs at least one value")
    header = [key, "params", "params_m", "macs", "macs_g"]
    body = [
        [str(value), str(rep.total_params), millions(rep.total_params), str(rep.total_macs), billions(rep.total_macs)]
        for value, rep in zip(values, reports)
    ]
    if format == "json":
        records = [
            {key: value, "params": rep.total_params, "macs": rep.total_macs}
            for value, rep in zip(values, reports)
        ]
        return json.dumps(records, indent=2) + "\n"
    if format == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(body)
        return buffer.getvalue()
    if format != "text":
        raise UsageError(f"Unknown report format {format!r}; choose from {', '.join(FORMATS)}")
    widths = [max(len(header[i]), *(len(row[i]) for row in body)) for i in range(len(header))]
    lines = ["  ".join(cell.rjust(width) for cell, width in zip(row, widths)) for row in [header, *body]]
    return "\n".join(lines) + "\n"


def export_table(report: CostReport, format: str = "text", output_file: Optional[Path] = None) -> str:
    """Render and optionally save the table."""

    table = report_table(report, format)
    if output_file:
        Path(output_file).write_text(table, encoding="utf-8")
    return table
