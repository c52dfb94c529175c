import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from pmc.completion import FullCompConfig
from pmc.harness import (
    RatingScale,
    SyntheticSpec,
    bucketed_error,
    confidence_error_study,
    fixture_20x20,
    generate,
    holdout_split,
    ingest_ratings,
    metrics_for,
    reveal_support,
    support_mass,
    synthetic_ratings,
    write_ratings_csv,
    write_table_csv,
)
from pmc.online import SimplifiedConfig


# ---------------------------------------------------------------- generate


def test_full_support_rank1_observations_equal_truth():
    inst = generate(SyntheticSpec(m=8, n=6, rank=1, structure="uniform-subset", c=1.0, N=200, seed=3))
    obs = inst.observations
    assert inst.support.all()
    np.testing.assert_array_equal(obs.values, inst.truth[obs.rows, obs.cols])
    assert np.linalg.matrix_rank(inst.truth) == 1


def test_two_block_support_size_and_groups():
    inst = generate(SyntheticSpec(m=60, n=60, rank=1, structure="two-block", N=10, seed=1))
    assert inst.support.sum() == 2 * 30 * 30
    g_row = inst.row_perm < 30
    g_col = inst.col_perm < 30
    np.testing.assert_array_equal(inst.support, g_row[:, None] == g_col[None, :])
    # the permutation scatters the groups
    assert not np.array_equal(g_row, np.sort(g_row))


def test_uniform_subset_size():
    inst = generate(SyntheticSpec(m=20, n=30, structure="uniform-subset", c=0.25, N=0, seed=2))
    assert inst.support.sum() == 150
    assert inst.observations.N == 0


def test_sample_histogram_is_uniform_on_support():
    inst = generate(SyntheticSpec(m=20, n=20, rank=2, structure="two-block", N=10_000, seed=4))
    obs = inst.observations
    assert inst.support[obs.rows, obs.cols].all()
    flat = np.ravel_multi_index((obs.rows, obs.cols), (20, 20))
    counts = np.bincount(flat, minlength=400)[inst.support.ravel()]
    assert chisquare(counts).pvalue > 0.01


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 1.0), st.sampled_from(["two-block", "uniform-subset", "full-uniform"]))
def test_observations_in_box_and_on_support(seed, amp, structure):
    noise = 1.0 - amp * amp
    inst = generate(SyntheticSpec(m=9, n=7, rank=2, structure=structure, c=0.4, noise=noise, amplitude=amp, N=60, seed=seed))
    obs = inst.observations
    assert np.all(np.abs(obs.values) <= 1.0)
    assert np.all(np.abs(inst.truth) <= amp * amp + 1e-12)
    assert inst.support[obs.rows, obs.cols].all()
    if noise > 0:
        assert np.all(np.abs(obs.values - inst.truth[obs.rows, obs.cols]) <= noise + 1e-12)


def test_infeasible_noise_rejected():
    with pytest.raises(ValueError, match="noise bound"):
        SyntheticSpec(noise=0.5, amplitude=0.9)
    with pytest.raises(ValueError):
        SyntheticSpec(c=0.0)
    with pytest.raises(ValueError):
        SyntheticSpec(structure="three-block")


def test_generate_is_deterministic():
    a = generate(SyntheticSpec(seed=5, N=50))
    b = generate(SyntheticSpec(seed=5, N=50))
    np.testing.assert_array_equal(a.truth, b.truth)
    np.testing.assert_array_equal(a.observations.rows, b.observations.rows)


def test_reveal_support_covers_support_once():
    inst = generate(SyntheticSpec(m=15, n=15, structure="uniform-subset", c=0.3, N=0, seed=1))
    obs = reveal_support(inst, seed=2)
    assert obs.N == inst.support.sum()
    flat = np.ravel_multi_index((obs.rows, obs.cols), (15, 15))
    assert np.unique(flat).size == obs.N
    np.testing.assert_array_equal(obs.values, inst.truth[obs.rows, obs.cols])


def test_fixture_shape():
    inst = fixture_20x20()
    assert inst.truth.shape == (20, 20)
    assert inst.observations.N == 400
    assert inst.support.sum() == 200


# ---------------------------------------------------------------- ingestion


def test_empty_ratings_file(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(ValueError, match="empty"):
        ingest_ratings(p)


def test_malformed_row_reports_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("i,j,value\n1,1,3.5\n2,x,4\n")
    with pytest.raises(ValueError, match=":3:"):
        ingest_ratings(p)


def test_out_of_range_index(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("1,1,3\n5,2,4\n")
    with pytest.raises(ValueError, match=":2:"):
        ingest_ratings(p, m=4, n=4)


def test_rescale_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    raw = np.round(rng.uniform(0.5, 5.0, 200) * 2) / 2
    raw[0], raw[1] = 0.5, 5.0
    triples = np.column_stack([rng.integers(1, 11, 200), rng.integers(1, 11, 200), raw])
    p = tmp_path / "r.csv"
    write_ratings_csv(p, triples)
    obs, scale = ingest_ratings(p)
    assert obs.values.min() == -1.0 and obs.values.max() == 1.0
    np.testing.assert_allclose(scale.inverse(obs.values), raw, atol=1e-12, rtol=0)


@given(st.floats(-100, 100), st.floats(0.01, 100), st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_rating_scale_inverts(lo, width, fracs):
    scale = RatingScale(lo, lo + width)
    x = lo + width * np.array(fracs)
    y = scale.forward(x)
    assert np.all(y >= -1 - 1e-9) and np.all(y <= 1 + 1e-9)
    np.testing.assert_allclose(scale.inverse(y), x, atol=1e-9 * max(1, abs(lo) + width))


def test_ratings_fixture_parses_5189_rows(tmp_path):
    p = tmp_path / "ratings.csv"
    write_ratings_csv(p, synthetic_ratings(250, 250, 5189, seed=0))
    obs, scale = ingest_ratings(p, 250, 250)
    assert obs.N == 5189
    assert obs.shape == (250, 250)
    assert scale.lo >= 0.5 and scale.hi <= 5.0


def test_holdout_split_partitions():
    inst = fixture_20x20()
    tr, ho = holdout_split(inst.observations, 0.2, seed=1)
    assert tr.N + ho.N == 400 and ho.N == 80
    a, b = holdout_split(inst.observations, 0.2, seed=1)
    np.testing.assert_array_equal(a.rows, tr.rows)
    with pytest.raises(ValueError):
        holdout_split(inst.observations, 1.0)


# ---------------------------------------------------------------- metrics


def test_bucketed_error_zero_when_estimate_is_truth():
    rng = np.random.default_rng(1)
    truth = rng.uniform(-1, 1, (10, 10))
    C = rng.uniform(size=(10, 10))
    r, c = np.nonzero(np.ones((10, 10), bool))
    tab = bucketed_error(C, truth, r, c, truth[r, c])
    assert np.all(tab.mse == 0)
    assert tab.count.sum() == 100


def test_bucketed_error_uniform_confidence_single_bucket():
    rng = np.random.default_rng(2)
    truth = rng.uniform(-1, 1, (8, 8))
    est = truth + rng.normal(0, 0.1, (8, 8))
    r, c = np.nonzero(np.ones((8, 8), bool))
    tab = bucketed_error(np.full((8, 8), 1 / 64), est, r, c, truth[r, c])
    full = tab.count > 0
    assert full.sum() == 1
    assert tab.mse[full][0] == pytest.approx(np.mean((est - truth) ** 2), rel=1e-12)


def test_bucketed_error_counts_sum_and_rank():
    rng = np.random.default_rng(3)
    C = rng.uniform(size=(20, 20))
    truth = np.zeros((20, 20))
    est = 1.0 - C  # error falls as confidence rises
    r, c = np.nonzero(np.ones((20, 20), bool))
    tab = bucketed_error(C, est, r, c, truth[r, c])
    assert tab.count.sum() == 400
    assert tab.spearman() == pytest.approx(-1.0)
    rows = tab.rows()
    assert len(rows) == 10 and set(rows[0]) == {"bucket", "confidence", "mse", "count"}


def test_bucketed_error_empty_holdout():
    with pytest.raises(ValueError):
        bucketed_error(np.ones((2, 2)), np.zeros((2, 2)), [], [], [])


def test_metrics_report_and_mass():
    inst = fixture_20x20()
    C = inst.support.astype(float)
    rep = metrics_for(C, inst.truth, inst, runtime_s=1.0, label="x")
    assert rep.coverage == 200 and rep.coverage_ratio == 1.0 and rep.weighted_error == 0.0
    d = rep.as_dict()
    assert d["label"] == "x" and d["buckets"] is None
    assert support_mass(C, inst.support) == 1.0
    assert support_mass(np.zeros_like(C), inst.support) == 0.0


def test_write_table_csv(tmp_path):
    p = tmp_path / "t.csv"
    write_table_csv(p, [{"a": 1, "b": 2.5}, {"a": 2, "b": 3.5}])
    assert p.read_text().splitlines() == ["a,b", "1,2.5", "2,3.5"]


def test_confidence_study_small_planted_run():
    # sparse rows and columns are completed worse and should get less confidence
    inst = generate(SyntheticSpec(m=40, n=40, rank=2, structure="uniform-subset", c=0.2, N=0, seed=0, popularity_skew=1.0))
    train = reveal_support(inst, seed=0)
    hr, hc = np.nonzero(~inst.support)
    study = confidence_error_study(train, hr, hc, inst.truth[hr, hc], SimplifiedConfig(seed=0),
                                   FullCompConfig(rank=6, seed=0))
    assert study.C_bar.shape == (40, 40)
    assert study.C_bar.sum() == pytest.approx(1.0)
    assert study.buckets.count.sum() == hr.size
    assert study.buckets.spearman() < 0
