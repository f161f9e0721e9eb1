"""Run reports: a flat key-value text rendering plus a two-column CSV.

Every command emits one report echoing its full effective configuration so a
run can be reproduced from the report alone. Numbers use 9 significant
digits; nested mappings flatten to dotted keys; sequences join with ';'.
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from typing import Any, Mapping

from . import __version__

REPORT_FORMATS = ("text", "csv")


def _scalar(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return "%.9g" % value
    if value is None:
        return "none"
    return str(value)


def format_value(value: Any) -> str:
    if isinstance(value, (list, tuple)):
        return ";".join(_scalar(v) for v in value)
    return _scalar(value)


def flatten(mapping: Mapping[str, Any], prefix: str = "") -> list[tuple[str, str]]:
    rows: list[tuple[str, str]] = []
    for key, value in mapping.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping):
            rows.extend(flatten(value, prefix=f"{name}."))
        else:
            rows.append((name, format_value(value)))
    return rows


@dataclass(frozen=True)
class RunReport:
    """Outcome of one CLI command."""

    command: str
    config: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def rows(self) -> list[tuple[str, str]]:
        head = [
            ("command", self.command),
            ("version", __version__),
            ("walltime_s", "%.9g" % self.wall_time),
        ]
        return (
            head
            + flatten(self.config, prefix="config.")
            + flatten(self.metrics, prefix="metrics.")
        )

    def render_text(self) -> str:
        return "\n".join(f"{k} = {v}" for k, v in self.rows()) + "\n"

    def render_csv(self) -> str:
        out = ["key,value"]
        for k, v in self.rows():
            cell = f'"{v}"' if "," in v else v
            out.append(f"{k},{cell}")
        return "\n".join(out) + "\n"

    def render(self, fmt: str) -> str:
        if fmt == "text":
            return self.render_text()
        if fmt == "csv":
            return self.render_csv()
        raise ValueError(f"unknown report format {fmt!r}")


def emit(report: RunReport, fmt: str = "text", out_path: str | None = None) -> None:
    """Write to ``out_path``, or stdout when no path is given."""
    text = report.render(fmt)
    if out_path is None:
        sys.stdout.write(text)
    else:
        with open(out_path, "w", encoding="ascii") as fh:
            fh.write(text)
