import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmc.completion import (
    FullCompConfig,
    ObservationSet,
    default_rank,
    full_complete,
    read_observations,
    sample_budget_max,
    sample_budget_trace,
    write_observations,
)
from pmc.core import IndexSpace, MatrixClassSpec, class_violation, max_norm_upper


def sample_obs(M, N, rng, noise=0.0):
    m, n = M.shape
    r = rng.integers(0, m, N)
    c = rng.integers(0, n, N)
    y = M[r, c] + noise * rng.choice([-1.0, 1.0], N)
    return ObservationSet(IndexSpace(m, n), r, c, y)


# ---- budgets -------------------------------------------------------------


def test_budget_max_frozen_value():
    assert sample_budget_max(0.25, 0.1, 1.0, 50, 50) == 1637


def test_budget_trace_frozen_value():
    expected = math.ceil((10 * math.sqrt(200) + math.log(10)) / 0.25)
    assert sample_budget_trace(0.5, 0.1, 10.0, 100, 100) == expected


def test_budget_rank_form_matches_k():
    k = 3
    assert sample_budget_max(0.2, 0.05, math.sqrt(k), 30, 40) == math.ceil((k * 70 + math.log(20)) / 0.04 - 1e-9)


@given(st.floats(0.01, 0.9), st.floats(0.01, 0.9), st.integers(1, 200))
@settings(max_examples=50, deadline=None)
def test_budget_inverse_square_law(eps, delta, m):
    # halving eps multiplies the real-valued budget by four; the ceilings stay within rounding
    a = sample_budget_max(eps, delta, 1.0, m, m)
    b = sample_budget_max(eps / 2, delta, 1.0, m, m)
    assert 4 * (a - 1) < b <= 4 * a


def test_budget_trace_linear_in_tau():
    base = (math.log(10)) / 0.25
    t1 = sample_budget_trace(0.5, 0.1, 1.0, 50, 50)
    t4 = sample_budget_trace(0.5, 0.1, 4.0, 50, 50)
    assert (t4 - base) == pytest.approx(4 * (t1 - base), abs=4)


def test_all_ones_trace_budget_exceeds_max_budget():
    m = n = 60
    assert sample_budget_trace(0.25, 0.1, math.sqrt(m * n), m, n) > sample_budget_max(0.25, 0.1, 1.0, m, n)


@pytest.mark.parametrize("eps,delta", [(0, 0.1), (1, 0.1), (0.1, 0), (0.1, 1.5)])
def test_budget_rejects_bad_eps_delta(eps, delta):
    with pytest.raises(ValueError):
        sample_budget_max(eps, delta, 1.0, 5, 5)


def test_default_rank():
    assert default_rank(1.0, 10, 10) == 1
    assert default_rank(math.sqrt(2), 10, 10) == 2
    assert default_rank(10.0, 3, 5) == 3


# ---- observation sets and IO ---------------------------------------------


def test_observations_reject_out_of_range():
    with pytest.raises(ValueError):
        ObservationSet(IndexSpace(2, 2), [2], [0], [0.0])
    with pytest.raises(ValueError):
        ObservationSet(IndexSpace(2, 2), [0], [0], [1.5])


def test_observations_are_read_only():
    obs = ObservationSet.from_triples(2, 2, [(0, 1, 0.5)])
    with pytest.raises(ValueError):
        obs.values[0] = 0.0


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    obs = sample_obs(rng.uniform(-1, 1, (4, 5)), 30, rng)
    path = tmp_path / "obs.csv"
    write_observations(path, obs)
    back = read_observations(path, 4, 5)
    assert np.array_equal(back.rows, obs.rows)
    assert np.array_equal(back.cols, obs.cols)
    assert np.array_equal(back.values, obs.values)


def test_csv_reports_line_numbers(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("i,j,value\n1,1,0.5\n2,x,0.1\n")
    with pytest.raises(ValueError, match=":3:"):
        read_observations(path)


def test_csv_rejects_zero_index(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("0,1,0.5\n")
    with pytest.raises(ValueError, match="1-based"):
        read_observations(path)


def test_csv_empty_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(ValueError, match="no observations"):
        read_observations(path)


# ---- full completion -----------------------------------------------------


def test_fit_rank_one_all_ones():
    rng = np.random.default_rng(1)
    obs = sample_obs(np.ones((20, 20)), 200, rng)
    res = full_complete(obs, FullCompConfig(K=1.0))
    assert res.loss < 1e-3


def test_fit_zero_targets():
    rng = np.random.default_rng(2)
    obs = sample_obs(np.zeros((20, 20)), 200, rng)
    res = full_complete(obs, FullCompConfig(K=1.0))
    M = res.dense()
    assert np.mean(M[obs.rows, obs.cols] ** 2) < 1e-4


def test_fit_noisy_targets_reach_noise_floor():
    rng = np.random.default_rng(3)
    u = rng.uniform(-0.8, 0.8, 30)
    v = rng.uniform(-0.8, 0.8, 30)
    obs = sample_obs(np.outer(u, v), 2000, rng, noise=0.1)
    res = full_complete(obs, FullCompConfig(K=1.0))
    assert 0.01 / 1.5 <= res.loss <= 0.01 * 1.5


def test_fit_output_in_class_and_reported_loss():
    rng = np.random.default_rng(4)
    A = rng.uniform(-1, 1, (15, 12))
    obs = sample_obs(A, 300, rng)
    res = full_complete(obs, FullCompConfig(K=math.sqrt(2), epochs=50))
    norm_ok, box_ok = class_violation(res.matrix, MatrixClassSpec(math.sqrt(2)))
    assert norm_ok and box_ok
    assert max_norm_upper(res.matrix) <= math.sqrt(2) + 1e-9
    fitted = res.dense()[obs.rows, obs.cols]
    assert res.loss == pytest.approx(np.mean((fitted - obs.values) ** 2), rel=1e-12)


def test_fit_history_non_increasing():
    rng = np.random.default_rng(5)
    obs = sample_obs(rng.uniform(-1, 1, (10, 10)), 150, rng)
    res = full_complete(obs, FullCompConfig(K=math.sqrt(2), lr=4.0, epochs=80))
    h = np.array(res.history)
    assert np.all(np.diff(h) <= 1e-6)


def test_fit_deterministic():
    rng = np.random.default_rng(6)
    obs = sample_obs(rng.uniform(-1, 1, (8, 9)), 100, rng)
    cfg = FullCompConfig(K=1.5, epochs=30, batch_size=16, seed=11)
    a, b = full_complete(obs, cfg), full_complete(obs, cfg)
    assert np.array_equal(a.matrix.U, b.matrix.U) and np.array_equal(a.matrix.V, b.matrix.V)


def test_fit_rejects_empty():
    with pytest.raises(ValueError):
        full_complete(ObservationSet.from_triples(3, 3, []))


@pytest.mark.parametrize("kw", [{"lr": 0.0}, {"rank": 0}, {"epochs": 0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        FullCompConfig(**kw)
