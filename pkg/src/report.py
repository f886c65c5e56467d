#!/usr/bin/env python3
"""
Optional PDF summary of a run: a table of contents with page numbers, the
manifest echo, and the first rows of every result table.
"""
import logging
import re
from pathlib import Path

import numpy as np
import pandas as pd
from fpdf import FPDF
from fpdf.enums import XPos, YPos

# --- Constants for PDF Layout ---
PAGE_WIDTH_MM = 210  # A4 width
MARGIN_MM = 15
CONTENT_WIDTH_MM = PAGE_WIDTH_MM - 2 * MARGIN_MM
LINE_HEIGHT = 6
FONT_SIZE = 8
HEADER_FONT_SIZE = 10
FONT = "Helvetica"
MAX_ROWS = 40
MAX_COLUMNS = 8


def clean_text(text) -> str:
    """Printable latin-1 text with normalized whitespace."""
    text = str(text).encode("latin-1", errors="replace").decode("latin-1")
    text = re.sub(r"[\x00-\x1F\x7F]", " ", text)
    return re.sub(r"\s+", " ", text).strip()


def _format_value(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{value:.6g}"
    return clean_text(value)


def _new_pdf() -> FPDF:
    pdf = FPDF(orientation="P", unit="mm", format="A4")
    pdf.set_auto_page_break(auto=True, margin=MARGIN_MM)
    pdf.set_margins(left=MARGIN_MM, top=MARGIN_MM, right=MARGIN_MM)
    return pdf


def _write_toc(pdf: FPDF, titles: list[str], pages: list[str], links: list | None = None) -> None:
    pdf.add_page()
    pdf.set_font(FONT, "B", 12)
    pdf.set_text_color(0, 0, 0)
    pdf.cell(CONTENT_WIDTH_MM, 10, "Table of Contents", new_x=XPos.LMARGIN, new_y=YPos.NEXT, align="C")
    pdf.ln(5)
    pdf.set_font(FONT, "", FONT_SIZE)
    pdf.set_text_color(0, 0, 255)
    for i, (title, page) in enumerate(zip(titles, pages)):
        link = links[i] if links else ""
        pdf.cell(CONTENT_WIDTH_MM * 0.8, LINE_HEIGHT, clean_text(title), link=link)
        pdf.cell(CONTENT_WIDTH_MM * 0.2, LINE_HEIGHT, page, new_x=XPos.LMARGIN, new_y=YPos.NEXT, align="R", link=link)
        pdf.ln(LINE_HEIGHT / 4)


def _write_summary(pdf: FPDF, manifest: dict) -> None:
    pdf.set_font(FONT, "B", HEADER_FONT_SIZE)
    pdf.set_text_color(0, 0, 0)
    pdf.multi_cell(CONTENT_WIDTH_MM, LINE_HEIGHT, "Run summary", new_x=XPos.LMARGIN, new_y=YPos.NEXT)
    pdf.ln(LINE_HEIGHT * 0.25)
    pdf.set_font(FONT, "", FONT_SIZE)
    for key in ("status", "started", "finished", "elapsed_seconds", "partial"):
        if key in manifest:
            pdf.multi_cell(CONTENT_WIDTH_MM, LINE_HEIGHT, f"{key}: {_format_value(manifest[key])}",
                           new_x=XPos.LMARGIN, new_y=YPos.NEXT)
    for section in ("summary", "versions", "config"):
        entries = manifest.get(section) or {}
        if not entries:
            continue
        pdf.ln(LINE_HEIGHT * 0.5)
        pdf.set_font(FONT, "B", FONT_SIZE)
        pdf.multi_cell(CONTENT_WIDTH_MM, LINE_HEIGHT, section, new_x=XPos.LMARGIN, new_y=YPos.NEXT)
        pdf.set_font(FONT, "", FONT_SIZE)
        for key, value in entries.items():
            pdf.multi_cell(CONTENT_WIDTH_MM, LINE_HEIGHT, f"  {key}: {_format_value(value)}",
                           new_x=XPos.LMARGIN, new_y=YPos.NEXT)
    for failure in manifest.get("failures") or []:
        pdf.set_text_color(200, 0, 0)
        pdf.multi_cell(CONTENT_WIDTH_MM, LINE_HEIGHT, f"failure: {clean_text(failure)}",
                       new_x=XPos.LMARGIN, new_y=YPos.NEXT)
        pdf.set_text_color(0, 0, 0)


def _write_table(pdf: FPDF, name: str, df: pd.DataFrame) -> None:
    pdf.set_font(FONT, "B", HEADER_FONT_SIZE)
    pdf.set_text_color(0, 0, 0)
    pdf.multi_cell(CONTENT_WIDTH_MM, LINE_HEIGHT, clean_text(name), new_x=XPos.LMARGIN, new_y=YPos.NEXT)
    pdf.set_font(FONT, "", FONT_SIZE)
    pdf.multi_cell(
        CONTENT_WIDTH_MM, LINE_HEIGHT,
        f"{len(df)} rows, {len(df.columns)} columns" + (f"; first {MAX_ROWS} rows shown" if len(df) > MAX_ROWS else ""),
        new_x=XPos.LMARGIN, new_y=YPos.NEXT,
    )
    columns = list(df.columns[:MAX_COLUMNS])
    if not columns:
        return
    width = CONTENT_WIDTH_MM / len(columns)
    pdf.set_font(FONT, "B", FONT_SIZE - 1)
    for column in columns:
        pdf.cell(width, LINE_HEIGHT, clean_text(column)[:18], border=1)
    pdf.ln(LINE_HEIGHT)
    pdf.set_font(FONT, "", FONT_SIZE - 1)
    for _, row in df.head(MAX_ROWS).iterrows():
        for column in columns:
            pdf.cell(width, LINE_HEIGHT, _format_value(row[column])[:18], border=1)
        pdf.ln(LINE_HEIGHT)


def _write_body(pdf: FPDF, manifest: dict, tables: dict[str, pd.DataFrame], links: list | None = None) -> list[int]:
    """Write the summary and table sections; return each section's starting page."""
    starts = []
    sections = [("Run summary", None)] + list(tables.items())
    for i, (name, df) in enumerate(sections):
        pdf.add_page()
        starts.append(pdf.page_no())
        if links:
            pdf.set_link(links[i], page=pdf.page_no())
        if df is None:
            _write_summary(pdf, manifest)
        else:
            _write_table(pdf, name, df)
    return starts


def generate_report_pdf(manifest: dict, tables: dict[str, pd.DataFrame], output_path: Path) -> Path:
    """
    Write the run report.

    Args:
        manifest: manifest dictionary as written next to the artifacts.
        tables: result tables by name, in TOC order.
        output_path: destination PDF.

    Returns:
        output_path.
    """
    logging.info(f"--- Generating report PDF {output_path.name} ---")
    titles = ["Run summary"] + list(tables)

    # First pass: TOC page count and section start pages
    pdf_calc = _new_pdf()
    _write_toc(pdf_calc, titles, ["999"] * len(titles))
    toc_page_count = pdf_calc.page_no()
    body_calc = _new_pdf()
    starts = _write_body(body_calc, manifest, tables)
    logging.info(f"   TOC requires {toc_page_count} page(s), body {body_calc.page_no()} page(s)")

    # Second pass with real page numbers and internal links
    pdf = _new_pdf()
    links = [pdf.add_link() for _ in titles]
    _write_toc(pdf, titles, [str(start + toc_page_count) for start in starts], links)
    _write_body(pdf, manifest, tables, links)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    pdf.output(str(output_path))
    logging.info(f"   Report written to {output_path}")
    return output_path
