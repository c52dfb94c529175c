import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pmc.core import FactorizedMatrix, MatrixClassSpec, VersionSpaceSpec, max_norm_upper, version_space_contains
from pmc.rounding import (
    angle,
    cos_gap,
    expected_flip_value,
    flip_value_lower_bound,
    gw_suite,
    random_unit_vector,
    sign_flip_round,
)

finite = st.floats(-2, 2, allow_nan=False)
factors = st.tuples(arrays(float, (4, 2), elements=finite), arrays(float, (3, 2), elements=finite))


def test_unit_vector_norm():
    rng = np.random.default_rng(0)
    for d in (1, 2, 5):
        assert abs(np.linalg.norm(random_unit_vector(rng, d)) - 1) <= 1e-12


def test_equal_rows_product_invariant():
    u = np.array([[0.3, -0.4]] * 3)
    M = FactorizedMatrix(u, u.copy())
    for seed in range(10):
        assert np.allclose(sign_flip_round(M, seed).flipped.dense(), M.dense())


@given(factors, st.integers(0, 2**31 - 1))
@settings(max_examples=100, deadline=None)
def test_flip_preserves_magnitudes_and_norm(f, seed):
    M = FactorizedMatrix(*f)
    s = sign_flip_round(M, seed)
    assert np.allclose(np.abs(s.flipped.dense()), np.abs(M.dense()), atol=1e-12)
    assert max_norm_upper(s.flipped) == max_norm_upper(M)
    assert abs(np.linalg.norm(s.w) - 1) <= 1e-12


def test_zero_rows_keep_plus_sign():
    M = FactorizedMatrix(np.zeros((2, 2)), np.array([[1.0, 0.0]]))
    s = sign_flip_round(M, 0)
    assert np.array_equal(s.flipped.U, M.U)


@given(factors, st.integers(0, 1000))
@settings(max_examples=50, deadline=None)
def test_version_space_closed_under_rounding(f, seed):
    M = FactorizedMatrix(*f)
    vs = VersionSpaceSpec(([0, 1, 3], [0, 2, 1]), 0.5, MatrixClassSpec(2.0), (4, 3))
    s = sign_flip_round(M, seed).flipped
    assert version_space_contains(vs, M) == version_space_contains(vs, s)


def test_expected_flip_value_examples():
    u = np.array([1.0, 2.0, -1.0])
    assert expected_flip_value(u, u) == pytest.approx(u @ u)
    assert expected_flip_value(np.array([1.0, 0.0]), np.array([0.0, 3.0])) == pytest.approx(0.0, abs=1e-15)


def test_angle_clamps_overshoot():
    u = np.array([1e-8, 1.0])
    assert angle(u, u * (1 + 1e-16)) == pytest.approx(0.0, abs=1e-7)
    with pytest.raises(ValueError):
        angle(np.zeros(2), u)


@given(arrays(float, 3, elements=finite), arrays(float, 3, elements=finite))
@settings(max_examples=200, deadline=None)
def test_closed_form_dominates_bound(u, v):
    if np.linalg.norm(u) < 1e-6 or np.linalg.norm(v) < 1e-6:
        return
    assert expected_flip_value(u, v) >= flip_value_lower_bound(u, v) - 1e-12


def test_cos_gap_examples():
    assert cos_gap(math.pi / 2) == pytest.approx(0.0, abs=1e-15)
    assert cos_gap(0.0) == pytest.approx(1 - 2 / math.pi)
    assert cos_gap(0.0) == pytest.approx(0.3634, abs=1e-4)
    with pytest.raises(ValueError):
        cos_gap(2.0)


def test_cos_gap_sweep():
    th = np.linspace(-math.pi / 2, math.pi / 2, 10_000)
    assert np.min(cos_gap(th)) >= -1e-12


def test_gw_suite_small_budget_passes():
    out = gw_suite(pairs=10, mc=2000, flip_draws=20000, seed=3)
    assert out["cos_sweep_ok"] and out["pairs_ok"] and out["flip_ok"]
