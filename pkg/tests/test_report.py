#!/usr/bin/env python3
"""
Tests for the PDF run report.
"""

import pandas as pd

from src.report import clean_text, generate_report_pdf


def test_clean_text_normalizes_whitespace_and_encoding():
    assert clean_text("  eps\t=\n0.125 ") == "eps = 0.125"
    assert clean_text("λ₁") == "??"


def test_report_has_toc_and_tables(tmp_path):
    manifest = {
        "status": "success",
        "started": "2024-01-01T00:00:00+00:00",
        "summary": {"lower_spread": 1.02},
        "failures": [],
        "config": {"command": "observe"},
    }
    rows = pd.DataFrame({"epsilon": [0.125] * 100, "upper_ratio": range(100)})
    tables = {"rows": rows, "summary": rows.head(2)}
    path = generate_report_pdf(manifest, tables, tmp_path / "nested" / "report.pdf")
    data = path.read_bytes()
    assert data.startswith(b"%PDF")
    assert data.rstrip().endswith(b"%%EOF")


def test_report_lists_failures(tmp_path):
    manifest = {"status": "numerical-failure", "failures": ["eps=0.0625: blew up"], "partial": True}
    path = generate_report_pdf(manifest, {}, tmp_path / "failed.pdf")
    assert path.exists()
