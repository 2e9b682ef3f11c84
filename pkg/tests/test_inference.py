import csv
import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nphmm.bases import BasisSpec, eval_basis
from nphmm.errors import DimensionError
from nphmm.evaluation import align_to_model, aligned
from nphmm.experiments import posterior_gap_study
from nphmm.inference import (
    backward_smooth,
    estimated_emissions,
    forward_filter,
    oracle_posteriors,
    plugin_posteriors,
    posterior_track,
    true_emissions,
    tv_distance,
    tv_distance_half,
)
from nphmm.model import (
    HmmSpec,
    coefficient_matrix,
    emission_matrix,
    population_moments_for,
    sample_trajectory,
)
from nphmm.spectral import fit


def enumerate_posteriors(q, pi, lik):
    """Filtering and smoothing marginals by summing over all K^n hidden paths."""
    n, k = lik.shape
    filt, smooth = np.zeros((n, k)), np.zeros((n, k))
    for path in itertools.product(range(k), repeat=n):
        w = pi[path[0]] * lik[0, path[0]]
        prefix = [w]
        for t in range(1, n):
            w = w * q[path[t - 1], path[t]] * lik[t, path[t]]
            prefix.append(w)
        for t in range(n):
            smooth[t, path[t]] += w
        # filtering at t only depends on the first t+1 states; each prefix is
        # counted k^(n-1-t) times across full paths
        for t in range(n):
            filt[t, path[t]] += prefix[t] / k ** (n - 1 - t)
    return filt / filt.sum(1, keepdims=True), smooth / smooth.sum(1, keepdims=True)


def random_instance(seed):
    g = np.random.default_rng(seed)
    k = int(g.integers(1, 4))
    n = int(g.integers(1, 7))
    q = g.dirichlet(np.ones(k), size=k)
    pi = g.dirichlet(np.ones(k))
    lik = g.gamma(1.0, size=(n, k))
    return q, pi, lik


class TestForwardFilter:
    def test_symmetric(self, symmetric_hmm, rng):
        tr = oracle_posteriors(symmetric_hmm, rng.random(30))
        np.testing.assert_allclose(tr.filter, 0.5, atol=1e-15)
        np.testing.assert_allclose(tr.smooth, 0.5, atol=1e-15)

    @pytest.mark.parametrize("n", [1, 2, 4, 6])
    def test_enumeration_section4(self, hmm4, n):
        obs = sample_trajectory(hmm4, n, 100 + n).obs
        tr = oracle_posteriors(hmm4, obs)
        filt, smooth = enumerate_posteriors(hmm4.q, hmm4.pi, emission_matrix(hmm4, obs))
        np.testing.assert_allclose(tr.filter, filt, atol=1e-12)
        np.testing.assert_allclose(tr.smooth, smooth, atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31))
    def test_enumeration_random(self, seed):
        q, pi, lik = random_instance(seed)
        filt, smooth = enumerate_posteriors(q, pi, lik)
        tr = posterior_track(q, pi, lik, np.full(len(lik), 0.5))
        np.testing.assert_allclose(tr.filter, filt, atol=1e-12)
        np.testing.assert_allclose(tr.smooth, smooth, atol=1e-12)

    def test_sticky_chain_tracks_state(self):
        q = np.array([[0.99, 0.01], [0.01, 0.99]])
        hmm = HmmSpec.from_stationary(q, (((1, 2, 5),), ((1, 4, 3),)))
        mass = []
        for seed in range(20):
            obs = np.random.default_rng(seed).beta(2, 5, size=10)
            mass.append(forward_filter(q, hmm.pi, true_emissions(hmm), obs)[0][9, 0])
        assert np.median(mass) > 0.9

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31), st.floats(1e-3, 1e3))
    def test_scale_invariance(self, seed, scale):
        q, pi, lik = random_instance(seed)
        a, _ = forward_filter(q, pi, lik, np.zeros(len(lik)))
        b, _ = forward_filter(q, pi, lik * scale, np.zeros(len(lik)))
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_underflow_falls_back_to_prediction(self):
        q = np.array([[0.7, 0.3], [0.2, 0.8]])
        lik = np.array([[1.0, 2.0], [0.0, 0.0], [1.0, 1.0]])
        rows, degenerate = forward_filter(q, np.array([0.5, 0.5]), lik, np.zeros(3))
        assert degenerate == [1]
        np.testing.assert_allclose(rows[1], rows[0] @ q)

    def test_negative_likelihoods_clamped(self):
        lik = np.array([[-1.0, 1.0]])
        tr = posterior_track(np.eye(2) * 0.5 + 0.25, np.array([0.5, 0.5]), lik, [0.3])
        np.testing.assert_allclose(tr.filter[0], [0.0, 1.0])
        assert tr.clamped == 1

    def test_errors(self, hmm4):
        with pytest.raises(DimensionError):
            forward_filter(hmm4.q, hmm4.pi, true_emissions(hmm4), [])
        with pytest.raises(DimensionError):
            forward_filter(hmm4.q, np.ones(3) / 3, true_emissions(hmm4), [0.5])
        with pytest.raises(DimensionError):
            forward_filter(hmm4.q, hmm4.pi, np.ones((2, 3)), [0.5, 0.5])


class TestBackwardSmooth:
    def test_last_row_is_filter(self, hmm4):
        tr = oracle_posteriors(hmm4, sample_trajectory(hmm4, 50, 2).obs)
        np.testing.assert_array_equal(tr.smooth[-1], tr.filter[-1])

    def test_zero_denominator_fallback(self):
        q = np.array([[1.0, 0.0], [0.5, 0.5]])
        filt = np.array([[1.0, 0.0], [0.3, 0.7]])
        rows, degenerate = backward_smooth(q, filt)
        assert degenerate == [0]
        np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(rows >= 0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            backward_smooth(np.eye(3), np.ones((4, 2)) / 2)

    def test_no_degeneracy_on_long_run(self, hmm4):
        traj = sample_trajectory(hmm4, 1_000_000, 31)
        assert np.all((traj.obs > 0) & (traj.obs < 1))
        tr = oracle_posteriors(hmm4, traj.obs)
        assert tr.degenerate_steps == []
        np.testing.assert_allclose(tr.smooth.sum(axis=1), 1.0, atol=1e-10)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**31))
    def test_rows_are_distributions(self, seed):
        g = np.random.default_rng(seed)
        k, n = int(g.integers(1, 5)), int(g.integers(1, 40))
        q = g.dirichlet(np.full(k, 0.3), size=k)
        lik = g.gamma(0.2, size=(n, k)) * (g.random((n, k)) > 0.3)
        tr = posterior_track(q, g.dirichlet(np.ones(k)), lik, np.zeros(n))
        for rows in (tr.filter, tr.smooth):
            assert np.all(rows >= 0)
            np.testing.assert_allclose(rows.sum(axis=1), 1.0, atol=1e-10)
        assert tr.degenerate_steps == sorted(tr.degenerate_steps)


class TestTV:
    @pytest.mark.parametrize(
        "p, r, d", [((1, 0), (0, 1), 2.0), ((0.3, 0.7), (0.3, 0.7), 0.0), ((0.7, 0.3), (0.4, 0.6), 0.6)]
    )
    def test_examples(self, p, r, d):
        assert tv_distance(p, r) == pytest.approx(d, abs=1e-15)
        assert tv_distance_half(p, r) == pytest.approx(d / 2, abs=1e-15)

    def test_mismatch(self):
        with pytest.raises(DimensionError):
            tv_distance([1, 0], [1, 0, 0])


class TestPlugin:
    def test_population_estimate_matches_projected_oracle(self, hmm4, hist8):
        est = fit(population_moments_for(hmm4, hist8), 2)
        obs = sample_trajectory(hmm4, 300, 12).obs
        alignment = align_to_model(hmm4, est)
        plug = plugin_posteriors(est, obs).permuted(alignment.perm)
        lik = np.maximum(eval_basis(hist8, obs) @ coefficient_matrix(hmm4, hist8), 0)
        oracle = posterior_track(hmm4.q, hmm4.pi, lik, obs)
        assert tv_distance(plug.filter, oracle.filter).max() <= 1e-6
        assert tv_distance(plug.smooth, oracle.smooth).max() <= 1e-6

    def test_single_state(self, one_state):
        est = fit(population_moments_for(one_state, BasisSpec("hist", 4)), 1)
        tr = plugin_posteriors(est, np.linspace(0, 1, 9))
        np.testing.assert_array_equal(tr.filter, 1.0)
        np.testing.assert_array_equal(tr.smooth, 1.0)

    def test_estimated_emission_provenance(self, hmm4, hist8):
        est = fit(population_moments_for(hmm4, hist8), 2)
        e = estimated_emissions(est, perm=[1, 0])
        assert e.provenance == "projection-estimate" and e.k == 2
        assert true_emissions(hmm4).provenance == "true-density"
        np.testing.assert_allclose(e(0.3), eval_basis(hist8, [0.3]) @ est.o_hat[:, [1, 0]])

    def test_consistency_in_p(self, hmm4):
        gaps = posterior_gap_study(hmm4, BasisSpec("hist", 11), [6_000, 60_000], 1_000, range(20))
        assert np.median(gaps[60_000]) < np.median(gaps[6_000])


def test_csv_layout(hmm4, tmp_path):
    tr = oracle_posteriors(hmm4, sample_trajectory(hmm4, 4, 1).obs)
    path = tmp_path / "track.csv"
    tr.to_csv(path, extra_columns={"gap": np.zeros(4)}, header_comment="config_hash: abc")
    lines = path.read_text().splitlines()
    assert lines[0] == "# config_hash: abc"
    rows = list(csv.reader(lines[1:]))
    assert rows[0] == ["time", "state", "filter_prob", "smooth_prob", "gap", "degenerate_flag"]
    assert len(rows) == 1 + 4 * 2
    assert float(rows[1][2]) == tr.filter[0, 0]
