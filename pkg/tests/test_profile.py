import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from locindex.profile import emit_profile


def test_ends():
    assert emit_profile(1.0, 0.5, [1.0])[0] == 1.0
    assert emit_profile(1.0, 0.5, [5.0])[0] == 0.0
    assert np.all(emit_profile(1.0, 0.5, [-3.0, 0.0]) == 1.0)
    assert np.all(emit_profile(1.0, 0.5, [6.0, 100.0]) == 0.0)


def test_monotone():
    v = emit_profile(0.0, 2.0, np.linspace(-1, 2, 500))
    assert np.all(np.diff(v) <= 0)


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(0.05, 20))
def test_slope_bounded_by_eps(a, eps):
    x = np.linspace(a - 1, a + 2 / eps + 1, 1000)
    v = emit_profile(a, eps, x)
    slope = np.max(np.abs(np.diff(v) / np.diff(x)))
    assert slope <= eps * (1 + 1e-6)


def test_eps_must_be_positive():
    with pytest.raises(ValueError):
        emit_profile(0.0, 0.0, [0.0])
