"""t-closeness checking and full-domain generalization.

A table is t-close when, for every equivalence class (rows sharing the same
quasi-identifier tuple), the EMD between the class's sensitive-value
distribution and the whole table's distribution is at most ``t``.

:func:`anonymize` searches the generalization lattice breadth-first: nodes
are level vectors ordered by total height, then lexicographically, and the
first node that satisfies the constraints is returned.
"""

from __future__ import annotations

import enum
import itertools
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

from ..errors import Infeasible, ValidationError
from .emd import emd_equal_distance, emd_ordered

SUPPRESSED = "*"
# absorbs float rounding in the partial sums so an exact-boundary EMD still passes
EMD_TOLERANCE = 1e-12


class SensitiveKind(str, enum.Enum):
    CATEGORICAL = "categorical"
    ORDERED_NUMERIC = "ordered-numeric"

    @classmethod
    def parse(cls, text) -> "SensitiveKind":
        if text in ("numeric", "ordered", "ordered_numeric"):
            return cls.ORDERED_NUMERIC
        return cls(text)


@dataclass(frozen=True)
class AnonTable:
    columns: tuple
    rows: tuple
    quasi_identifiers: tuple
    sensitive: str
    sensitive_kind: SensitiveKind = SensitiveKind.CATEGORICAL

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "rows", tuple(tuple(r) for r in self.rows))
        object.__setattr__(self, "quasi_identifiers", tuple(self.quasi_identifiers))
        object.__setattr__(self, "sensitive_kind", SensitiveKind.parse(self.sensitive_kind))
        if len(set(self.columns)) != len(self.columns):
            raise ValidationError("column names must be unique")
        missing = [c for c in (*self.quasi_identifiers, self.sensitive) if c not in self.columns]
        if missing:
            raise ValidationError(f"unknown columns: {missing}")
        if self.sensitive in self.quasi_identifiers:
            raise ValidationError("the sensitive column cannot also be a quasi-identifier")
        width = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise ValidationError(f"row {i} has {len(row)} cells, expected {width}")
        if self.sensitive_kind is SensitiveKind.ORDERED_NUMERIC:
            idx = self.columns.index(self.sensitive)
            for row in self.rows:
                try:
                    float(row[idx])
                except (TypeError, ValueError):
                    raise ValidationError(f"sensitive value {row[idx]!r} is not numeric") from None

    def column(self, name: str) -> list:
        idx = self.columns.index(name)
        return [row[idx] for row in self.rows]

    def with_rows(self, rows) -> "AnonTable":
        return AnonTable(self.columns, rows, self.quasi_identifiers, self.sensitive, self.sensitive_kind)


def _categories(values: Sequence, kind: SensitiveKind) -> list:
    distinct = set(values)
    if kind is SensitiveKind.ORDERED_NUMERIC:
        return sorted(distinct, key=lambda v: (float(v), str(v)))
    return sorted(distinct, key=lambda v: (type(v).__name__, str(v)))


def _distribution(values: Sequence, categories: Sequence) -> list[float]:
    counts = Counter(values)
    n = len(values)
    return [counts.get(c, 0) / n for c in categories]


@dataclass
class TClosenessResult:
    satisfied: bool
    per_class: list = field(default_factory=list)
    t: float = 1.0

    @property
    def max_emd(self) -> float:
        return max((d for _, d in self.per_class), default=0.0)

    def to_dict(self) -> dict:
        return {
            "satisfied": self.satisfied,
            "t": self.t,
            "max_emd": self.max_emd,
            "per_class": [{"class": list(k), "emd": d} for k, d in self.per_class],
        }


def _check_t(t) -> None:
    if not isinstance(t, (int, float)) or not 0 < t <= 1:
        raise ValidationError(f"t must lie in (0, 1], got {t!r}")


def check_t_closeness(table: AnonTable, t: float) -> TClosenessResult:
    _check_t(t)
    if not table.rows:
        raise ValidationError("cannot check t-closeness of an empty table")
    s_idx = table.columns.index(table.sensitive)
    q_idx = [table.columns.index(q) for q in table.quasi_identifiers]
    sensitive = [row[s_idx] for row in table.rows]
    cats = _categories(sensitive, table.sensitive_kind)
    overall = _distribution(sensitive, cats)
    classes = defaultdict(list)
    for row in table.rows:
        classes[tuple(row[i] for i in q_idx)].append(row[s_idx])
    ordered = table.sensitive_kind is SensitiveKind.ORDERED_NUMERIC
    per_class = []
    for key in sorted(classes, key=lambda k: tuple(str(x) for x in k)):
        dist = _distribution(classes[key], cats)
        if len(cats) < 2:
            d = 0.0
        elif ordered:
            d = emd_ordered(dist, overall)
        else:
            d = emd_equal_distance(dist, overall)
        per_class.append((key, d))
    worst = max(d for _, d in per_class)
    return TClosenessResult(worst <= t + EMD_TOLERANCE, per_class, t)


@dataclass(frozen=True)
class Hierarchy:
    """Generalization ladder for one quasi-identifier.

    ``ladder`` maps each raw value (as text) to its generalized value at every
    level; index 0 is the raw value and the top level is ``"*"``.
    """

    attribute: str
    ladder: Mapping[str, tuple]

    def __post_init__(self):
        ladder = {str(k): tuple(str(x) for x in v) for k, v in self.ladder.items()}
        if not ladder:
            raise ValidationError(f"hierarchy for {self.attribute!r} is empty")
        heights = {len(v) for v in ladder.values()}
        if len(heights) != 1:
            raise ValidationError(f"hierarchy for {self.attribute!r} has ragged levels")
        for raw, levels in list(ladder.items()):
            if levels[0] != raw:
                levels = (raw, *levels)
            if levels[-1] != SUPPRESSED:
                levels = (*levels, SUPPRESSED)
            ladder[raw] = levels
        if len({len(v) for v in ladder.values()}) != 1:
            raise ValidationError(f"hierarchy for {self.attribute!r} has ragged levels")
        height = len(next(iter(ladder.values())))
        for lvl in range(1, height - 1):
            parent = {}
            for levels in ladder.values():
                if parent.setdefault(levels[lvl], levels[lvl + 1]) != levels[lvl + 1]:
                    raise ValidationError(
                        f"hierarchy for {self.attribute!r}: level {lvl + 1} does not coarsen level {lvl}"
                    )
        object.__setattr__(self, "ladder", ladder)

    @property
    def height(self) -> int:
        """Index of the top (fully suppressed) level."""
        return len(next(iter(self.ladder.values()))) - 1

    def generalize(self, value, level: int) -> str:
        try:
            return self.ladder[str(value)][level]
        except KeyError:
            raise ValidationError(f"value {value!r} missing from hierarchy {self.attribute!r}") from None

    @classmethod
    def flat(cls, attribute: str, values) -> "Hierarchy":
        """Two-level ladder: raw value, then suppressed."""
        return cls(attribute, {str(v): (str(v), SUPPRESSED) for v in values})


@dataclass(frozen=True)
class PrivacyParams:
    t: float
    hierarchies: Mapping[str, Hierarchy]
    k: Optional[int] = None
    suppression_budget: float = 0.05

    def __post_init__(self):
        _check_t(self.t)
        if self.k is not None and (not isinstance(self.k, int) or self.k < 1):
            raise ValidationError("k must be a positive integer")
        if not 0 <= self.suppression_budget <= 1:
            raise ValidationError("suppression budget must be a fraction in [0, 1]")


@dataclass
class AnonymizationResult:
    table: AnonTable
    levels: dict
    suppressed: int
    check: TClosenessResult

    def to_dict(self) -> dict:
        return {"levels": dict(self.levels), "suppressed": self.suppressed,
                "rows": len(self.table.rows), **self.check.to_dict()}


def lattice(heights: Sequence[int]) -> list[tuple]:
    """All level vectors, breadth-first from the bottom node."""
    nodes = itertools.product(*(range(h + 1) for h in heights))
    return sorted(nodes, key=lambda v: (sum(v), v))


def _generalize(table: AnonTable, hierarchies: Sequence[Hierarchy], q_idx, levels) -> list[tuple]:
    rows = []
    for row in table.rows:
        cells = list(row)
        for h, i, lvl in zip(hierarchies, q_idx, levels):
            cells[i] = h.generalize(row[i], lvl)
        rows.append(tuple(cells))
    return rows


def anonymize(table: AnonTable, params: PrivacyParams) -> AnonymizationResult:
    if not table.rows:
        raise ValidationError("cannot anonymize an empty table")
    missing = [q for q in table.quasi_identifiers if q not in params.hierarchies]
    if missing:
        raise ValidationError(f"no hierarchy for quasi-identifiers {missing}")
    hierarchies = [params.hierarchies[q] for q in table.quasi_identifiers]
    q_idx = [table.columns.index(q) for q in table.quasi_identifiers]
    for h, i in zip(hierarchies, q_idx):
        for row in table.rows:
            h.generalize(row[i], 0)

    n = len(table.rows)
    budget = math.floor(params.suppression_budget * n) if params.k else 0
    for levels in lattice([h.height for h in hierarchies]):
        rows = _generalize(table, hierarchies, q_idx, levels)
        suppressed = 0
        if params.k:
            sizes = Counter(tuple(r[i] for i in q_idx) for r in rows)
            small = {key for key, size in sizes.items() if size < params.k}
            suppressed = sum(sizes[key] for key in small)
            if suppressed > budget:
                continue
            rows = [r for r in rows if tuple(r[i] for i in q_idx) not in small]
        if not rows:
            continue
        candidate = table.with_rows(rows)
        check = check_t_closeness(candidate, params.t)
        if check.satisfied:
            chosen = dict(zip(table.quasi_identifiers, levels))
            return AnonymizationResult(candidate, chosen, suppressed, check)
    raise Infeasible(
        f"no generalization satisfies t={params.t}" + (f", k={params.k}" if params.k else "")
        + f" within a suppression budget of {budget} rows"
    )
