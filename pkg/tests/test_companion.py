import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpqml.companion import (
    build_aj_bj,
    build_dj,
    companion,
    companion_matrices,
    companion_powers,
)


def simulate_recursion(delta, presample, shocks):
    """Reference simulation of y_t = sum_j delta_j y_{t-j} + shock_t.

    ``presample`` is (y_0, y_{-1}, ..., y_{-p+1}); returns the full path
    indexed t = -p+1 .. T as a flat array.
    """
    p = len(delta)
    t_len = len(shocks)
    path = list(presample[::-1])  # y_{-p+1} .. y_0
    for t in range(t_len):
        val = shocks[t]
        for j in range(1, p + 1):
            val += delta[j - 1] * path[-j]
        path.append(val)
    return np.array(path)


def test_companion_scalar():
    assert companion([0.5]) == pytest.approx(np.array([[0.5]]))


def test_companion_second_order_structure():
    f = companion([0.5, 0.2])
    assert f == pytest.approx(np.array([[0.5, 0.2], [1.0, 0.0]]))


def test_companion_power_scalar():
    powers = companion_powers([0.5], 2)
    assert powers[2][0, 0] == pytest.approx(0.25)


def test_build_aj_bj_first_order_small():
    a1, b1 = build_aj_bj([0.5], 2, 1)
    assert a1 == pytest.approx(np.array([[1.0], [0.5]]))
    assert b1 == pytest.approx(np.array([[0.0, 0.0], [1.0, 0.0]]))


def test_build_dj_first_order_small():
    d1 = build_dj([0.5], 3, 1)
    assert d1 == pytest.approx(np.array([[0, 0, 0], [1, 0, 0], [0.5, 1, 0]], dtype=float))


@given(
    st.integers(min_value=1, max_value=4),
    st.integers(min_value=5, max_value=9),
    st.integers(min_value=0, max_value=10**6),
)
@settings(max_examples=40, deadline=None)
def test_traces_vanish(p, t_len, seed):
    rng = np.random.default_rng(seed)
    delta = rng.uniform(-1.2, 1.2, size=p)
    for j in range(1, p + 1):
        _, b_j = build_aj_bj(delta, t_len, j)
        d_j = build_dj(delta, t_len, j)
        assert np.trace(b_j) == 0.0
        assert np.trace(d_j) == 0.0


def test_permutation_rows_of_aj():
    delta = np.array([0.3, -0.2, 0.1])
    for j in (1, 2, 3):
        a_j, _ = build_aj_bj(delta, 7, j)
        for r in range(1, j + 1):
            row = a_j[r - 1]
            assert np.count_nonzero(row) == 1
            assert row[j - r] == 1.0


@pytest.mark.parametrize("p", [1, 2])
def test_reconstruction_against_simulation(p):
    rng = np.random.default_rng(42)
    t_len = 6
    tol = 2.0**-40
    for _ in range(25):
        delta = rng.uniform(-0.9, 0.9, size=p) / p
        presample = rng.standard_normal(p)
        shocks = rng.standard_normal(t_len)  # stands in for X beta + e
        path = simulate_recursion(delta, presample, shocks)
        # path index m holds time t = m - p + 1
        for j in range(1, p + 1):
            a_j, b_j = build_aj_bj(delta, t_len, j)
            lag = np.array([path[(t - j) + p - 1] for t in range(1, t_len + 1)])
            recon = a_j @ presample + b_j @ shocks
            assert np.max(np.abs(recon - lag) / (1.0 + np.abs(lag))) <= tol


@pytest.mark.parametrize("p", [1, 2, 3])
def test_differenced_reconstruction_against_simulation(p):
    rng = np.random.default_rng(7)
    t_len = 6
    tol = 2.0**-40
    for _ in range(10):
        delta = rng.uniform(-0.9, 0.9, size=p) / p
        presample = rng.standard_normal(p)
        shocks = rng.standard_normal(t_len)
        path = simulate_recursion(delta, presample, shocks)
        dpath = np.diff(path)  # index m holds the difference at time m - p + 2
        top = dpath[:p]  # initial differences at times -p+2 .. 1
        bottom = np.diff(shocks)  # differenced shocks at times 2 .. T
        vec = np.concatenate([top, bottom])
        for j in range(1, p + 1):
            d_j = build_dj(delta, t_len, j)
            recon = d_j @ vec
            dlag = dpath[p - j : p - j + t_len - 1]  # lag-j differences, times 2-j .. T-j
            target = np.concatenate([np.zeros(p), dlag])
            assert np.max(np.abs(recon - target) / (1.0 + np.abs(target))) <= tol


def test_companion_matrices_container():
    cm = companion_matrices([0.4, 0.1], 5)
    assert cm.lag_order == 2
    assert cm.f_powers.shape == (6, 2, 2)
    assert len(cm.a) == len(cm.b) == len(cm.d) == 2
    assert cm.i_star == pytest.approx(np.array([[0.0, 1.0], [1.0, 0.0]]))
    a1, b1 = build_aj_bj([0.4, 0.1], 5, 1)
    assert cm.a[0] == pytest.approx(a1)
    assert cm.b[0] == pytest.approx(b1)
