"""Independent reference implementations used to check the library."""

from __future__ import annotations

import itertools
import random
from fractions import Fraction

import networkx as nx


def transport_emd(a, b, ordered: bool) -> Fraction:
    """Exact EMD by integer min-cost flow.

    ``a`` and ``b`` are integer mass vectors with equal totals; the result is
    returned normalized by the total mass (and by m-1 for rank distance).
    """
    m = len(a)
    total = sum(a)
    assert total == sum(b) and total > 0
    g = nx.DiGraph()
    for i in range(m):
        g.add_node(("s", i), demand=-a[i])
        g.add_node(("t", i), demand=b[i])
    for i, j in itertools.product(range(m), repeat=2):
        cost = abs(i - j) if ordered else int(i != j)
        g.add_edge(("s", i), ("t", j), weight=cost)
    cost = nx.min_cost_flow_cost(g)
    scale = total * (m - 1) if ordered else total
    return Fraction(cost, scale)


def random_masses(rng: random.Random, m: int, total: int) -> list[int]:
    cuts = sorted(rng.randint(0, total) for _ in range(m - 1))
    edges = [0, *cuts, total]
    return [edges[i + 1] - edges[i] for i in range(m)]


def contiguous_partitions(n: int = 8):
    """Every split of 0..n-1 into contiguous ranges, as lists of (lo, hi)."""
    for mask in range(1 << (n - 1)):
        parts, lo = [], 0
        for i in range(n - 1):
            if mask >> i & 1:
                parts.append((lo, i))
                lo = i + 1
        parts.append((lo, n - 1))
        yield parts


def class_map_ok(ranges) -> bool:
    """Reference acceptance rule for an alert map given as (lo, hi) ranges."""
    if not 4 <= len(ranges) <= 8:
        return False
    covered = []
    for lo, hi in ranges:
        if hi < lo or hi - lo + 1 > 2:
            return False
        covered.extend(range(lo, hi + 1))
    return covered == list(range(8))
