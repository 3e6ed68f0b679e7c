import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from boltzgate.numerics import (NonFiniteError, finite_diff_gradient, logsumexp,
                                relative_error, sigmoid, tape_gradient)


def test_sigmoid_values():
    assert sigmoid(0.0) == 0.5
    assert abs(sigmoid(700.0) - 1.0) <= 1e-12
    assert sigmoid(-700.0) >= 0.0
    assert abs(sigmoid(math.log(3.0)) - 0.75) <= 1e-15


@given(st.floats(-700, 700))
def test_sigmoid_symmetry(x):
    assert abs(sigmoid(x) + sigmoid(-x) - 1.0) <= 1e-15


def test_logsumexp_examples():
    assert logsumexp([0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-15)
    assert logsumexp([3.25]) == 3.25
    assert logsumexp([1000.0, 1000.0]) == pytest.approx(1000 + math.log(2), abs=1e-12)


def test_logsumexp_empty():
    with pytest.raises(ValueError, match="empty reduction"):
        logsumexp([])


@settings(max_examples=50)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-100, 100))
def test_logsumexp_shift(v, c):
    assert logsumexp(np.array(v) + c) == pytest.approx(logsumexp(v) + c, abs=1e-12)


def test_finite_diff_examples():
    assert finite_diff_gradient(lambda t: t[0] ** 2, [3.0], 1e-5)[0] == pytest.approx(6.0, abs=1e-6)
    np.testing.assert_array_equal(finite_diff_gradient(lambda t: 4.0, [1.0, 2.0]), [0.0, 0.0])
    assert finite_diff_gradient(lambda t: sigmoid(t[0]), [0.0])[0] == pytest.approx(0.25, abs=1e-8)


def test_finite_diff_reports_coordinate():
    def f(t):
        return float("inf") if t[1] > 0.5 else 0.0

    with pytest.raises(NonFiniteError) as err:
        finite_diff_gradient(f, [0.0, 0.5, 0.0])
    assert err.value.index == 1


def test_finite_diff_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_diff_gradient(lambda t: 0.0, [0.0], h=0.0)


def test_tape_matches_differences(rng):
    x = rng.uniform(-2, 2, 5)

    def f_torch(t):
        return (torch.sigmoid(t) * torch.tanh(t.flip(0))).sum() + torch.logsumexp(t, 0)

    def f_np(t):
        return float(f_torch(torch.as_tensor(t)))

    assert relative_error(tape_gradient(f_torch, x), finite_diff_gradient(f_np, x)) <= 1e-4


def test_tape_constant_and_sum():
    x = np.array([0.3, -1.2])
    np.testing.assert_array_equal(tape_gradient(lambda t: torch.tensor(2.0), x), [0.0, 0.0])
    g1 = tape_gradient(lambda t: (t**2).sum(), x)
    g2 = tape_gradient(lambda t: t.sin().sum(), x)
    g12 = tape_gradient(lambda t: (t**2).sum() + t.sin().sum(), x)
    np.testing.assert_allclose(g12, g1 + g2, atol=1e-15)
