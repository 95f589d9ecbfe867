import random
from fractions import Fraction

import pytest

from oracles import random_masses, transport_emd
from scg.errors import ValidationError
from scg.privacy.emd import emd_equal_distance, emd_ordered


def test_oracle_self_check():
    assert transport_emd([2, 0], [1, 1], ordered=False) == Fraction(1, 2)
    assert transport_emd([3, 0, 0], [1, 1, 1], ordered=True) == Fraction(1, 2)
    assert transport_emd([3, 0, 0], [1, 1, 1], ordered=False) == Fraction(2, 3)


def test_examples():
    assert emd_equal_distance([0.2, 0.8], [0.2, 0.8]) == 0
    assert emd_equal_distance([1, 0], [0.5, 0.5]) == pytest.approx(0.5, abs=1e-12)
    assert emd_equal_distance([1, 0, 0], [1 / 3] * 3) == pytest.approx(2 / 3, abs=1e-12)
    assert emd_ordered([0.3, 0.7], [0.3, 0.7]) == 0
    assert emd_ordered([1, 0, 0], [1 / 3] * 3) == pytest.approx(0.5, abs=1e-12)
    assert emd_ordered([0.75, 0.25], [0.5, 0.5]) == pytest.approx(0.25, abs=1e-12)


def test_errors():
    with pytest.raises(ValidationError):
        emd_equal_distance([1, 0], [1, 0, 0])
    with pytest.raises(ValidationError):
        emd_ordered([1.0], [1.0])
    with pytest.raises(ValidationError):
        emd_equal_distance([0.5, 0.4], [0.5, 0.5])
    with pytest.raises(ValidationError):
        emd_equal_distance([1.5, -0.5], [0.5, 0.5])


def oracle_agreement(pairs: int, seed: int = 0) -> float:
    """Largest deviation between library and oracle over random pairs."""
    rng = random.Random(seed)
    worst = 0.0
    for _ in range(pairs):
        m = rng.randint(2, 6)
        total = rng.choice([7, 10, 60, 97, 1000])
        a, b = random_masses(rng, m, total), random_masses(rng, m, total)
        p, q = [x / total for x in a], [x / total for x in b]
        for ordered, fn in ((False, emd_equal_distance), (True, emd_ordered)):
            got = fn(p, q)
            worst = max(worst, abs(got - float(transport_emd(a, b, ordered))))
            worst = max(worst, abs(got - fn(q, p)))
    return worst


def test_oracle_agreement():
    assert oracle_agreement(300, seed=3) <= 1e-9
