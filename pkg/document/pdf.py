import logging
import os
from datetime import datetime
from typing import Any, Dict, List, Optional, Sequence, Tuple

from reportlab.lib.enums import TA_CENTER
from reportlab.lib.pagesizes import A4
from reportlab.lib.styles import ParagraphStyle, getSampleStyleSheet
from reportlab.lib.units import cm
from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

from config import REPORT_TEMPLATES, TOOL_VERSION, get_configured_report_template
from utils.helpers import fmt_float, safe_color

logger = logging.getLogger(__name__)


def create_report_styles(template: Dict[str, Any]):
    """ReportLab styles for the run report, driven by a template from config.REPORT_TEMPLATES."""
    styles = getSampleStyleSheet()
    font_family = template.get('font_family', 'Helvetica')
    bold = 'Courier-Bold' if font_family == 'Courier' else f'{font_family}-Bold'
    title_size = template.get('title_size', 18)
    heading_size = template.get('heading_size', 13)
    body_size = template.get('body_size', 10)

    styles.add(ParagraphStyle(
        name='ReportTitle',
        fontName=bold,
        fontSize=title_size,
        leading=title_size * 1.2,
        alignment=TA_CENTER,
        spaceAfter=18,
        textColor=safe_color(template.get('title_color')),
    ))
    styles.add(ParagraphStyle(
        name='ReportHeading',
        fontName=bold,
        fontSize=heading_size,
        spaceBefore=10,
        spaceAfter=6,
        textColor=safe_color(template.get('heading_color')),
    ))
    styles.add(ParagraphStyle(
        name='ReportBody',
        fontName=font_family,
        fontSize=body_size,
        leading=body_size * 1.35,
    ))
    styles.add(ParagraphStyle(
        name='ReportCell',
        fontName=font_family,
        fontSize=max(6, body_size - 1),
        leading=max(6, body_size - 1) * 1.25,
    ))
    return styles


def _flatten(data: Any, prefix: str = "") -> List[Tuple[str, str]]:
    """Nested summary dict -> (dotted key, printable value) rows."""
    rows: List[Tuple[str, str]] = []
    if isinstance(data, dict):
        for key in sorted(data):
            rows.extend(_flatten(data[key], f"{prefix}.{key}" if prefix else str(key)))
    elif isinstance(data, (list, tuple)):
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in data) and len(data) <= 8:
            rows.append((prefix, ", ".join(fmt_float(v) for v in data)))
        else:
            rows.append((prefix, f"[{len(data)} entries]"))
    elif isinstance(data, float):
        rows.append((prefix, fmt_float(data)))
    else:
        rows.append((prefix, str(data)))
    return rows


def _summary_table(rows: Sequence[Tuple[str, str]], styles, template) -> Table:
    data = [[Paragraph('<b>quantity</b>', styles['ReportCell']), Paragraph('<b>value</b>', styles['ReportCell'])]]
    data += [[Paragraph(k, styles['ReportCell']), Paragraph(v, styles['ReportCell'])] for k, v in rows]
    table = Table(data, colWidths=[7 * cm, 10 * cm], repeatRows=1)
    table.setStyle(TableStyle([
        ('BACKGROUND', (0, 0), (-1, 0), safe_color(template.get('table_header'), '#DCE6F0')),
        ('GRID', (0, 0), (-1, -1), 0.5, safe_color(template.get('grid_color'), '#9AA5B1')),
        ('VALIGN', (0, 0), (-1, -1), 'TOP'),
        ('LEFTPADDING', (0, 0), (-1, -1), 4),
        ('RIGHTPADDING', (0, 0), (-1, -1), 4),
    ]))
    return table


def save_run_report(path: str, command: str, parameters: Dict[str, Any], summary: Dict[str, Any],
                    files: Sequence[str] = (), template_name: Optional[str] = None) -> str:
    """Render a one-page PDF with the parameters, the summary numbers and the produced files."""
    template = REPORT_TEMPLATES.get(template_name) if template_name else get_configured_report_template()
    template = template or get_configured_report_template()
    styles = create_report_styles(template)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)

    story = [
        Paragraph(f"Run report: {command}", styles['ReportTitle']),
        Paragraph(f"StickyLDP {TOOL_VERSION}, {datetime.now().strftime('%Y-%m-%d %H:%M')}", styles['ReportBody']),
        Spacer(1, 0.4 * cm),
        Paragraph("Parameters", styles['ReportHeading']),
        _summary_table(_flatten(parameters), styles, template),
        Paragraph("Results", styles['ReportHeading']),
        _summary_table(_flatten(summary), styles, template),
    ]
    if files:
        story.append(Paragraph("Files", styles['ReportHeading']))
        for name in files:
            story.append(Paragraph(name, styles['ReportBody']))

    doc = SimpleDocTemplate(path, pagesize=A4, leftMargin=2 * cm, rightMargin=2 * cm,
                            topMargin=2 * cm, bottomMargin=2 * cm, title=f"StickyLDP {command}")
    doc.build(story)
    logger.info("report written: %s", path)
    return path
