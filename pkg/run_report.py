"""
PDF summaries of a simulation run and of a convergence study.
Pure ReportLab tables; no figure rendering.
"""

import logging
from datetime import datetime
from io import BytesIO
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd
from reportlab.lib import colors
from reportlab.lib.enums import TA_CENTER, TA_LEFT
from reportlab.lib.pagesizes import landscape, letter
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import inch
from reportlab.platypus import (HRFlowable, Paragraph, SimpleDocTemplate, Spacer,
                                Table, TableStyle)

from checks import THRESHOLDS, get_status_label
from harness import REFERENCE_TABLES

log = logging.getLogger(__name__)


# ─────────────────────────────────────────────────────────
# COLOR PALETTE
# ─────────────────────────────────────────────────────────
class C:
    PRIMARY = colors.HexColor('#1e40af')
    SUCCESS = colors.HexColor('#059669')
    SUCCESS_BG = colors.HexColor('#ecfdf5')
    WARNING = colors.HexColor('#d97706')
    WARNING_BG = colors.HexColor('#fffbeb')
    DANGER = colors.HexColor('#dc2626')
    DANGER_BG = colors.HexColor('#fef2f2')
    DARK = colors.HexColor('#111827')
    GRAY = colors.HexColor('#6b7280')
    LIGHT_GRAY = colors.HexColor('#f3f4f6')
    BORDER = colors.HexColor('#e5e7eb')
    WHITE = colors.white


# ─────────────────────────────────────────────────────────
# STYLES
# ─────────────────────────────────────────────────────────
def get_styles():
    styles = getSampleStyleSheet()
    styles.add(ParagraphStyle(
        'ReportTitle', parent=styles['Title'], fontSize=24,
        textColor=C.PRIMARY, spaceAfter=4, fontName='Helvetica-Bold',
        alignment=TA_LEFT, leading=30
    ))
    styles.add(ParagraphStyle(
        'ReportSubtitle', parent=styles['Normal'], fontSize=11,
        textColor=C.GRAY, spaceAfter=16, fontName='Helvetica', alignment=TA_LEFT
    ))
    styles.add(ParagraphStyle(
        'SectionHead', parent=styles['Heading2'], fontSize=14,
        textColor=C.PRIMARY, spaceAfter=8, spaceBefore=14, fontName='Helvetica-Bold'
    ))
    styles.add(ParagraphStyle(
        'ReportBody', parent=styles['Normal'], fontSize=9,
        textColor=C.DARK, fontName='Helvetica', leading=13
    ))
    styles.add(ParagraphStyle(
        'KPIValue', parent=styles['Normal'], fontSize=16,
        textColor=C.DARK, fontName='Helvetica-Bold', alignment=TA_CENTER
    ))
    styles.add(ParagraphStyle(
        'KPILabel', parent=styles['Normal'], fontSize=8,
        textColor=C.GRAY, fontName='Helvetica', alignment=TA_CENTER
    ))
    return styles


def _header_footer(canvas_obj, doc):
    canvas_obj.saveState()
    w, h = landscape(letter)
    canvas_obj.setFillColor(C.PRIMARY)
    canvas_obj.rect(0, h - 6, w, 6, fill=1, stroke=0)
    canvas_obj.setStrokeColor(C.BORDER)
    canvas_obj.setLineWidth(0.5)
    canvas_obj.line(40, 28, w - 40, 28)
    canvas_obj.setFont('Helvetica', 7)
    canvas_obj.setFillColor(C.GRAY)
    canvas_obj.drawString(40, 16, f"Phase-field run summary  |  Generated {datetime.now().strftime('%Y-%m-%d %H:%M')}")
    canvas_obj.drawRightString(w - 40, 16, f"Page {doc.page}")
    canvas_obj.restoreState()


def make_kpi_row(items, styles):
    """items = list of (label, value, color_hex) tuples."""
    top = [Paragraph(f"<font color='{col}'><b>{value}</b></font>", styles['KPIValue']) for _, value, col in items]
    bottom = [Paragraph(label, styles['KPILabel']) for label, _, _ in items]
    n = len(items)
    col_w = 9.5 * inch / n if n else 2.0 * inch
    t = Table([top, bottom], colWidths=[col_w] * n, rowHeights=[30, 18])
    t.setStyle(TableStyle([
        ('ALIGN', (0, 0), (-1, -1), 'CENTER'),
        ('VALIGN', (0, 0), (-1, -1), 'MIDDLE'),
        ('BOX', (0, 0), (-1, -1), 0.5, C.BORDER),
        ('INNERGRID', (0, 0), (-1, -1), 0.25, C.BORDER),
        ('BACKGROUND', (0, 0), (-1, -1), C.LIGHT_GRAY),
    ]))
    return t


def _status_colors(status: str):
    if status == 'Pass':
        return C.SUCCESS, C.SUCCESS_BG
    if status == 'Marginal':
        return C.WARNING, C.WARNING_BG
    return C.DANGER, C.DANGER_BG


def _table(data: List[List], col_widths: Sequence[float], status_col: Optional[int] = None):
    t = Table(data, colWidths=col_widths, repeatRows=1)
    style = [
        ('BACKGROUND', (0, 0), (-1, 0), C.PRIMARY),
        ('TEXTCOLOR', (0, 0), (-1, 0), C.WHITE),
        ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
        ('FONTSIZE', (0, 0), (-1, -1), 8),
        ('ALIGN', (1, 0), (-1, -1), 'RIGHT'),
        ('GRID', (0, 0), (-1, -1), 0.25, C.BORDER),
        ('ROWBACKGROUNDS', (0, 1), (-1, -1), [C.WHITE, C.LIGHT_GRAY]),
    ]
    if status_col is not None:
        for r, row in enumerate(data[1:], start=1):
            fg, bg = _status_colors(row[status_col])
            style += [('TEXTCOLOR', (status_col, r), (status_col, r), fg),
                      ('BACKGROUND', (status_col, r), (status_col, r), bg)]
    t.setStyle(TableStyle(style))
    return t


def _fmt(value) -> str:
    if value is None or (isinstance(value, float) and value != value):
        return '-'
    if isinstance(value, float):
        return f'{value:.4e}'
    return str(value)


def _build(story) -> bytes:
    buffer = BytesIO()
    doc = SimpleDocTemplate(buffer, pagesize=landscape(letter),
                            topMargin=0.45 * inch, bottomMargin=0.45 * inch,
                            leftMargin=0.5 * inch, rightMargin=0.5 * inch)
    doc.build(story, onFirstPage=_header_footer, onLaterPages=_header_footer)
    return buffer.getvalue()


# ═══════════════════════════════════════════════════════════
# RUN SUMMARY
# ═══════════════════════════════════════════════════════════
def summary_checks(summary: Dict[str, float]) -> List[Tuple[str, float, str]]:
    """(property, value, status) rows graded against THRESHOLDS."""
    drift = max(summary.get('max_bulk_drift', 0.0), summary.get('max_bottom_drift', 0.0),
                summary.get('max_top_drift', 0.0))
    slack = max(summary.get('worst_slack', 0.0), 0.0) / max(1.0, abs(summary.get('final_energy', 0.0)))
    rows = [('energy_slack', slack), ('mass_drift', drift),
            ('scheme_residual', summary.get('max_scheme_residual', float('nan'))),
            ('newton_residual', summary.get('max_residual', float('nan')))]
    return [(name, value, get_status_label(name, value)) for name, value in rows]


def generate_run_report(series: pd.DataFrame, summary: Dict[str, float],
                        config_lines: Sequence[str]):
    """Returns (pdf_bytes, None) or (None, error message)."""
    try:
        styles = get_styles()
        story = [Spacer(1, 0.2 * inch),
                 Paragraph('Phase-Field Run Summary', styles['ReportTitle']),
                 Paragraph(f"{summary.get('steps', 0)} steps to t = {summary.get('final_time', 0.0):.4g}",
                           styles['ReportSubtitle']),
                 HRFlowable(width='100%', thickness=1, color=C.PRIMARY, spaceAfter=12)]
        story.append(make_kpi_row([
            ('Steps', str(summary.get('steps', 0)), '#1e40af'),
            ('Final energy', f"{summary.get('final_energy', 0.0):.6g}", '#059669'),
            ('Worst mass drift', f"{max(summary.get('max_bulk_drift', 0.0), summary.get('max_bottom_drift', 0.0), summary.get('max_top_drift', 0.0)):.2e}", '#7c3aed'),
            ('Mean Newton its', f"{summary.get('mean_newton_iters', 0.0):.2f}", '#d97706'),
            ('Energy-law violations', str(summary.get('energy_violations', 0)), '#dc2626'),
        ], styles))

        story.append(Paragraph('Checks', styles['SectionHead']))
        data = [['Property', 'Value', 'Bound', 'Status']]
        for name, value, status in summary_checks(summary):
            data.append([name, f'{value:.3e}', f"{THRESHOLDS[name]['tol']:.0e}", status])
        story.append(_table(data, [3.0 * inch, 2.0 * inch, 2.0 * inch, 1.5 * inch], status_col=3))

        story.append(Paragraph('Last steps', styles['SectionHead']))
        tail = series.tail(10)
        data = [list(tail.columns)] + [[_fmt(v) for v in row] for row in tail.itertuples(index=False)]
        story.append(_table(data, [min(1.2, 9.9 / len(tail.columns)) * inch] * len(tail.columns)))

        story.append(Paragraph('Configuration', styles['SectionHead']))
        for line in config_lines:
            story.append(Paragraph(line, styles['ReportBody']))
        return _build(story), None
    except Exception as e:
        log.debug('run report failed', exc_info=True)
        return None, str(e)


# ═══════════════════════════════════════════════════════════
# CONVERGENCE SUMMARY
# ═══════════════════════════════════════════════════════════
def generate_convergence_report(table: pd.DataFrame):
    """Returns (pdf_bytes, None) or (None, error message)."""
    try:
        styles = get_styles()
        story = [Spacer(1, 0.2 * inch),
                 Paragraph('Convergence Study', styles['ReportTitle']),
                 Paragraph('Cauchy differences between consecutive grids at the common final time',
                           styles['ReportSubtitle']),
                 HRFlowable(width='100%', thickness=1, color=C.PRIMARY, spaceAfter=12)]
        for block, rows in table.groupby('block', sort=False):
            story.append(Paragraph(block.replace('_', ' ').title(), styles['SectionHead']))
            ref = REFERENCE_TABLES.get(block, {})
            data = [['Pair', 'l2', 'l2 rate', 'linf', 'linf rate', 'reference l2', 'reference rate']]
            for k, row in enumerate(rows.itertuples(index=False)):
                ref_l2 = ref.get('l2', [])[k] if k < len(ref.get('l2', [])) else None
                ref_rate = ref.get('l2_rate', [])[k] if k < len(ref.get('l2_rate', [])) else None
                data.append([row.pair, _fmt(row.l2), _fmt(row.l2_rate), _fmt(row.linf),
                             _fmt(row.linf_rate), _fmt(ref_l2), _fmt(ref_rate)])
            story.append(_table(data, [1.0 * inch] + [1.3 * inch] * 6))
        return _build(story), None
    except Exception as e:
        log.debug('convergence report failed', exc_info=True)
        return None, str(e)
