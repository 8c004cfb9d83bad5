"""Tests for cost report rendering."""

import csv
import io
import json

import pytest

from rtfskit import ledger
from rtfskit.errors import UsageError
from rtfskit.exporter import COLUMNS, ReportExporter, export_table, millions, report_table, sweep_table


@pytest.fixture
def report(small_config):
    return ledger.build_report(small_config, 400)


class TestReportTable:
    def test_csv_rows(self, report):
        rows = list(csv.reader(io.StringIO(report_table(report, "csv"))))
        assert rows[0] == COLUMNS
        assert len(rows) == 1 + len(report.rows) + 1
        assert rows[-1][0] == "total"
        assert int(rows[-1][1]) == report.total_params
        assert int(rows[-1][3]) == report.total_macs

    def test_json_totals(self, report):
        payload = json.loads(report_table(report, "json"))
        assert payload["total"]["params"] == report.total_params
        assert payload["total"]["params_m"] == millions(report.total_params)
        assert payload["input"]["samples"] == 400
        assert len(payload["rows"]) == len(report.rows)

    def test_text_layout(self, report):
        lines = report_table(report, "text").splitlines()
        assert lines[0].startswith("# input: 400 samples @ 16000 Hz")
        assert lines[1].split()[0] == "Module"
        assert set(lines[2]) == {"-"}
        assert lines[-1].startswith("total")
        assert len(lines) == 3 + len(report.rows) + 2

    def test_unknown_format(self, report):
        with pytest.raises(UsageError):
            ReportExporter(report).generate_table("xml")

    def test_export_writes_file(self, report, tmp_path):
        path = tmp_path / "report.csv"
        table = export_table(report, "csv", path)
        assert path.read_text(encoding="utf-8") == table

    def test_millions(self):
        assert millions(739_000) == "0.739"


class TestSweepTable:
    def test_json(self, small_config):
        reports = ledger.sweep(small_config, "r", [2, 4])
        records = json.loads(sweep_table("r", [2, 4], reports, "json"))
        assert [record["r"] for record in records] == [2, 4]
        assert records[0]["params"] == reports[0].total_params

    def test_text_one_line_per_value(self, small_config):
        reports = ledger.sweep(small_config, "q", [1, 2])
        lines = sweep_table("q", [1, 2], reports).splitlines()
        assert len(lines) == 3

    def test_empty(self):
        with pytest.raises(UsageError):
            sweep_table("r", [], [], "csv")
