"""Earth mover's distance between two distributions over the same m categories.

Two ground distances are supported: every pair of distinct categories one
unit apart (categorical attributes), and rank distance ``|i - j| / (m - 1)``
for ordered attributes.
"""

from __future__ import annotations

import math
from typing import Sequence

from ..errors import ValidationError

SUM_TOLERANCE = 1e-9


def _check(p: Sequence[float], q: Sequence[float]) -> None:
    if len(p) != len(q):
        raise ValidationError(f"distributions have different supports ({len(p)} vs {len(q)} categories)")
    if not p:
        raise ValidationError("distributions must have at least one category")
    for name, dist in (("P", p), ("Q", q)):
        if any(x < 0 or not math.isfinite(x) for x in dist):
            raise ValidationError(f"{name} has a negative or non-finite mass")
        if abs(math.fsum(dist) - 1.0) > SUM_TOLERANCE:
            raise ValidationError(f"{name} sums to {math.fsum(dist)!r}, not 1")


def emd_equal_distance(p: Sequence[float], q: Sequence[float]) -> float:
    _check(p, q)
    return min(1.0, 0.5 * math.fsum(abs(a - b) for a, b in zip(p, q)))


def emd_ordered(p: Sequence[float], q: Sequence[float]) -> float:
    _check(p, q)
    m = len(p)
    if m < 2:
        raise ValidationError("ordered EMD needs at least two categories")
    total, carried = [], 0.0
    for a, b in zip(p, q):
        carried += a - b
        total.append(abs(carried))
    # the final partial sum is ~0 and only adds rounding noise
    return min(1.0, math.fsum(total[:-1]) / (m - 1))
