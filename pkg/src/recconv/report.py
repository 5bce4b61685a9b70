"""Plain-text and ``key,value`` CSV rendering of complexity reports."""
from __future__ import annotations

import csv
import io
from fractions import Fraction
from typing import Dict, List, Tuple, Union

from .analysis import ComplexityReport

Value = Union[int, Fraction, str]


def _fmt(v: Value) -> str:
    if isinstance(v, Fraction):
        return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"
    return str(v)


def csv_rows(report: ComplexityReport) -> List[Tuple[str, Value]]:
    rows: List[Tuple[str, Value]] = [
        ("params_measured", report.params_measured),
        ("params_closed_form", report.params_closed_form),
        ("macs_total", report.macs_total),
        ("include_resize_macs", int(report.include_resize_macs)),
    ]
    for st in report.stages:
        p = st.name
        rows += [
            (f"{p}.input_h", st.input_hw[0]),
            (f"{p}.input_w", st.input_hw[1]),
            (f"{p}.channels", st.cfg.channels),
            (f"{p}.kernel", st.cfg.kernel),
            (f"{p}.level", st.cfg.level),
            (f"{p}.blocks", st.blocks),
            (f"{p}.params_measured", st.params_measured),
            (f"{p}.params_closed_form", st.params_closed_form),
            (f"{p}.upsample_params", st.upsample_params),
            (f"{p}.base_macs", st.base_macs),
            (f"{p}.macs_measured", st.macs_measured),
            (f"{p}.macs_closed_form", st.macs_closed_form),
            (f"{p}.mac_factor", st.mac_factor),
            (f"{p}.mac_factor_closed_form", st.mac_factor_closed_form),
            (f"{p}.upsample_macs", st.upsample_macs),
            (f"{p}.resize_macs", st.resize_macs),
            (f"{p}.nominal_erf", st.nominal_erf),
            (f"{p}.structural_rf", st.structural_rf),
        ]
    return rows


def to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for key, value in rows:
        writer.writerow([key, _fmt(value)])
    return buf.getvalue()


def parse_csv(text: str) -> Dict[str, Value]:
    """Inverse of :func:`to_csv`: integers and ``a/b`` fractions come back exact."""
    out: Dict[str, Value] = {}
    for row in csv.reader(io.StringIO(text)):
        if not row:
            continue
        key, raw = row
        try:
            value = Fraction(raw)
            out[key] = value.numerator if value.denominator == 1 else value
        except ValueError:
            out[key] = raw
    return out


def to_text(report: ComplexityReport) -> str:
    header = ("stage", "C", "k", "lvl", "HxW", "params", "closed", "MACs", "closed",
              "factor", "closed", "nominal ERF", "struct RF")
    body = []
    for st in report.stages:
        body.append((
            st.name, str(st.cfg.channels), str(st.cfg.kernel), str(st.cfg.level),
            f"{st.input_hw[0]}x{st.input_hw[1]}",
            str(st.params_measured), str(st.params_closed_form),
            str(st.macs_measured), _fmt(st.macs_closed_form),
            _fmt(st.mac_factor), _fmt(st.mac_factor_closed_form),
            str(st.nominal_erf), str(st.structural_rf),
        ))
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    line = lambda r: "  ".join(c.rjust(w) for c, w in zip(r, widths))
    out = [line(header), line(tuple("-" * w for w in widths))] + [line(r) for r in body]
    out.append("")
    out.append(f"total params: measured {report.params_measured}, closed form {report.params_closed_form}")
    label = "incl. resize" if report.include_resize_macs else "convolutions only"
    out.append(f"total MACs ({label}): {report.macs_total}")
    out.append("MACs count multiply-accumulates (the \"FLOPs\" convention of conv complexity tables).")
    return "\n".join(out) + "\n"
