import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rotd.features import (
    FeatureMap,
    fourier_features,
    inverted_features,
    dependent_features,
    pad_terminal_states,
    rbf_grid_features,
    stack_action_features,
    tabular_features,
)

MC_BOUNDS = ((-1.2, 0.6), (-0.07, 0.07))


def test_tabular_examples():
    f = tabular_features(5)
    np.testing.assert_array_equal(f(1), [0, 1, 0, 0, 0])
    np.testing.assert_array_equal(tabular_features(1)(0), [1.0])
    Phi = f.matrix()
    np.testing.assert_array_equal(Phi.T @ Phi, np.eye(5))


def test_tabular_rejects_bad_state():
    with pytest.raises(IndexError):
        tabular_features(3)(3)
    with pytest.raises(ValueError):
        tabular_features(0)


def test_inverted_examples():
    f = inverted_features(5)
    np.testing.assert_allclose(f(0), [0, 0.5, 0.5, 0.5, 0.5], rtol=0, atol=1e-15)
    for s in range(5):
        assert f(s)[s] == 0.0
        assert abs(np.linalg.norm(f(s)) - 1.0) < 1e-12
    with pytest.raises(ValueError):
        inverted_features(1)


def test_dependent_examples():
    f = dependent_features(5)
    assert f.d == 3
    np.testing.assert_allclose(f(0), [1, 0, 0])
    np.testing.assert_allclose(f(2), np.full(3, 1 / math.sqrt(3)), atol=1e-15)
    np.testing.assert_allclose(f(4), [0, 0, 1])
    np.testing.assert_allclose(f(1), np.array([1, 1, 0]) / math.sqrt(2), atol=1e-15)
    np.testing.assert_allclose(f(3), np.array([0, 1, 1]) / math.sqrt(2), atol=1e-15)
    with pytest.raises(ValueError):
        dependent_features(4)
    with pytest.raises(ValueError):
        dependent_features(1)


@given(st.integers(2, 40))
def test_inverted_rows_unit_norm(n):
    rows = np.linalg.norm(inverted_features(n).matrix(), axis=1)
    assert np.all(np.abs(rows - 1.0) < 1e-12)


@given(st.integers(1, 20).map(lambda k: 2 * k + 1))
def test_dependent_rows_unit_norm(n):
    f = dependent_features(n)
    assert f.d == (n + 1) // 2
    rows = np.linalg.norm(f.matrix(), axis=1)
    assert np.all(np.abs(rows - 1.0) < 1e-12)


def test_pad_terminal_states_zero_rows():
    f = pad_terminal_states(tabular_features(5))
    assert f.n_states == 7 and f.terminal == (0, 6)
    np.testing.assert_array_equal(f(0), np.zeros(5))
    np.testing.assert_array_equal(f(6), np.zeros(5))
    np.testing.assert_array_equal(f(3), np.eye(5)[2])


def test_rbf_counts():
    assert rbf_grid_features(MC_BOUNDS, [2, 4, 8, 16, 32], include_constant=True).d == 1365
    assert rbf_grid_features(MC_BOUNDS, [2], include_constant=False).d == 4


def test_rbf_peak_at_center():
    f = rbf_grid_features(MC_BOUNDS, [2, 4], include_constant=True)
    for i in (0, 3, 4, 10, 19):
        assert f(f.rbf_center(i))[i] == pytest.approx(1.0, abs=1e-15)
    assert f((0.0, 0.0))[-1] == 1.0


def test_rbf_value_matches_formula():
    # 3x3 grid over [0,2]x[0,4]: spacing (1, 2) per dimension, width equal to spacing
    f = rbf_grid_features(((0, 2), (0, 4)), [3], include_constant=False)
    s = np.array([0.3, 2.5])
    centers = [(cx, cy) for cx in (0, 1, 2) for cy in (0, 2, 4)]
    expected = sorted(math.exp(-0.5 * (((s[0] - cx) / 1.0) ** 2 + ((s[1] - cy) / 2.0) ** 2)) for cx, cy in centers)
    np.testing.assert_allclose(sorted(f(s)), expected, rtol=1e-14)


def test_rbf_errors():
    with pytest.raises(ValueError):
        rbf_grid_features(MC_BOUNDS, [])
    with pytest.raises(ValueError):
        rbf_grid_features(((0, 0), (0, 1)), [2])


def test_fourier_counts_and_values():
    assert fourier_features(8, 2, [(0, 1)] * 8).d == 6561
    f0 = fourier_features(3, 0, [(0, 1)] * 3)
    assert f0.d == 1 and f0((0.2, 0.5, 0.9))[0] == 1.0
    f = fourier_features(2, 1, [(-1, 1), (0, 5)])
    np.testing.assert_array_equal(f((-1, 0)), np.ones(4))
    # c = (1, 1) at the top corner: cos(2 pi) = 1; c = (1, 0): cos(pi) = -1
    v = dict(zip(map(tuple, f.coefficients.astype(int)), f((1, 5))))
    assert v[(1, 0)] == pytest.approx(-1.0) and v[(1, 1)] == pytest.approx(1.0)


def test_fourier_clamps_out_of_bounds():
    f = fourier_features(2, 2, [(0, 1), (0, 1)])
    np.testing.assert_array_equal(f((-3.0, 7.0)), f((0.0, 1.0)))


def test_action_stacking():
    class Fixed(FeatureMap):
        def __init__(self):
            super().__init__(3)

        def __call__(self, state):
            return np.array([1.0, 2.0, 3.0])

    base = Fixed()
    f = stack_action_features(base, 3)
    np.testing.assert_array_equal(f((None, 1)), [0, 0, 0, 1, 2, 3, 0, 0, 0])
    np.testing.assert_array_equal(stack_action_features(base, 1)((None, 0)), base(None))
    with pytest.raises(IndexError):
        f((None, 3))


@settings(max_examples=50)
@given(p=st.floats(-1.2, 0.6), v=st.floats(-0.07, 0.07), a=st.integers(0, 2), b=st.integers(0, 2))
def test_stacked_rbf_properties(p, v, a, b):
    base = rbf_grid_features(MC_BOUNDS, [2, 4], include_constant=True)
    f = stack_action_features(base, 3)
    x, y = f(((p, v), a)), f(((p, v), b))
    assert len(x) == f.d == 3 * base.d
    assert np.all(np.isfinite(x))
    assert np.linalg.norm(x) == pytest.approx(np.linalg.norm(base((p, v))))
    if a != b:
        assert x @ y == 0.0
