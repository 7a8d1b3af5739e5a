import numpy as np
import pytest

from adubf.errors import DimensionError
from adubf.stats import paired_bootstrap


def test_clear_difference_detected():
    rng = np.random.default_rng(0)
    b = rng.standard_normal(500)
    c = paired_bootstrap(b + 0.5 + 0.1 * rng.standard_normal(500), b)
    assert c.a_greater and c.a_not_less
    assert c.lo < 0.5 < c.hi


def test_no_difference_is_not_greater():
    rng = np.random.default_rng(1)
    a = rng.standard_normal(300)
    c = paired_bootstrap(a, a + 0.01 * rng.standard_normal(300))
    assert not c.a_greater


def test_interval_coverage_monte_carlo():
    # the 95% interval should cover the true mean difference ~95% of the time
    rng = np.random.default_rng(2)
    hits = 0
    for i in range(200):
        d = rng.standard_normal(100) + 0.3
        c = paired_bootstrap(d, np.zeros(100), n_boot=2000, seed=i)
        hits += c.lo <= 0.3 <= c.hi
    assert 0.88 <= hits / 200 <= 0.99


def test_shape_contract():
    with pytest.raises(DimensionError):
        paired_bootstrap([1.0, 2.0], [1.0])
