"""CSV persistence with exact numeric round-trips.

All artifact tables go through one dialect: comma separator, `.` decimal,
LF line endings, mandatory header line. Floats are serialized with 17
significant digits so reading a written file recovers the exact values;
integers and bare strings pass through unchanged. The schemas in use are
small and flat (`x,y` sample clouds, `x,y,value` grid dumps, `i,j,w` edge
lists, `i,x,y,f` labelings, `patch,x,y,u` converged fields, study tables),
so the dialect supports no quoting: cells must not contain separators or
line breaks.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

_INT_CELL = re.compile(r"^[+-]?\d+$")


@dataclass(frozen=True)
class Table:
    """Rectangular table: a header tuple and a tuple of row tuples."""

    header: tuple
    rows: tuple

    def __post_init__(self):
        header = tuple(str(name) for name in self.header)
        if not header:
            raise ValidationError("table needs at least one column")
        rows = tuple(tuple(row) for row in self.rows)
        for row in rows:
            if len(row) != len(header):
                raise ValidationError(
                    f"ragged table: row of width {len(row)}, header of width {len(header)}"
                )
        object.__setattr__(self, "header", header)
        object.__setattr__(self, "rows", rows)

    @classmethod
    def from_columns(cls, header, columns) -> "Table":
        """Build a table from per-column sequences of equal length."""
        cols = [list(c) for c in columns]
        if len(cols) != len(tuple(header)):
            raise ValidationError("one column sequence per header entry required")
        if cols and any(len(c) != len(cols[0]) for c in cols):
            raise ValidationError("columns differ in length")
        return cls(tuple(header), tuple(zip(*cols)) if cols and cols[0] else ())

    def column(self, name: str) -> list:
        if name not in self.header:
            raise ValidationError(f"no column named {name!r}")
        k = self.header.index(name)
        return [row[k] for row in self.rows]


def _format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        raise ValidationError("boolean cells are not part of the dialect; use 0/1")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        text = format(float(value), ".17g")
        # keep a float marker so the reader does not narrow whole values to int
        if _INT_CELL.match(text):
            text += ".0"
        return text
    text = str(value)
    if "," in text or "\n" in text or "\r" in text:
        raise ValidationError(f"cell {text!r} contains a separator or line break")
    return text


def _parse_cell(text: str):
    if _INT_CELL.match(text):
        return int(text)
    try:
        return float(text)
    except ValueError:
        return text


def write_csv(table: Table, path) -> None:
    """Write a table; `read_csv` on the result reproduces it exactly."""
    lines = [",".join(_format_cell(name) for name in table.header)]
    for row in table.rows:
        lines.append(",".join(_format_cell(v) for v in row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path) -> Table:
    """Read a table written by `write_csv` (header line mandatory)."""
    with open(path, newline="\n") as fh:
        text = fh.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0]:
        raise ValidationError(f"{path}: missing header line")
    header = tuple(lines[0].split(","))
    width = len(header)
    rows = []
    for k, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != width:
            raise ValidationError(f"{path}:{k}: expected {width} cells, found {len(cells)}")
        rows.append(tuple(_parse_cell(c) for c in cells))
    return Table(header, tuple(rows))
