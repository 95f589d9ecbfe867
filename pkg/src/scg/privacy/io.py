"""CSV tables and hierarchy files for the anonymize command.

Hierarchy file: one line per raw value, fields separated by ``;``::

    attribute;raw;level1;...;levelL

A final ``*`` level is appended when absent. Lines starting with ``#`` are
comments. Every raw value of an attribute must list the same number of levels.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

from ..errors import ValidationError
from .tcloseness import AnonTable, Hierarchy


def read_table(path, quasi_identifiers, sensitive, kind) -> AnonTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            columns = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty CSV file") from None
        rows = [row for row in reader if row]
    return AnonTable(columns, rows, quasi_identifiers, sensitive, kind)


def write_table(table: AnonTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(table.columns)
        writer.writerows(table.rows)


def read_hierarchies(path, delimiter: str = ";") -> dict[str, Hierarchy]:
    ladders: dict[str, dict] = defaultdict(dict)
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = [p.strip() for p in line.split(delimiter)]
        if len(parts) < 2:
            raise ValidationError(f"{path}:{lineno}: expected attribute{delimiter}raw[{delimiter}levels...]")
        attribute, raw, *levels = parts
        if raw in ladders[attribute]:
            raise ValidationError(f"{path}:{lineno}: duplicate value {raw!r} for {attribute!r}")
        ladders[attribute][raw] = (raw, *levels)
    return {attr: Hierarchy(attr, ladder) for attr, ladder in ladders.items()}
