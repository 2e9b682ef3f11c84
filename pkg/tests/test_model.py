import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from nphmm.bases import BasisSpec, bin_index
from nphmm.errors import DomainError, StructureError
from nphmm.model import (
    HmmSpec,
    beta_pdf,
    c_star,
    c_star_constant,
    coefficient_matrix,
    emission_matrix,
    eval_emission,
    forgetting_constants,
    markov_constants,
    population_moments,
    population_moments_for,
    pseudo_spectral_gap,
    sample_trajectory,
)
from nphmm.numerics import stationary_of

T_MIX_SECTION4 = (1 + 3 * np.log(2) - np.log(3 / 7)) / 0.84


def random_chain(seed, k):
    g = np.random.default_rng(seed)
    q = 0.02 + (1 - 0.02 * k) * g.dirichlet(np.ones(k), size=k)
    return q


class TestHmmSpec:
    def test_section4(self, hmm4):
        assert hmm4.k == 2
        np.testing.assert_allclose(hmm4.pi, [4 / 7, 3 / 7], atol=1e-15)

    @pytest.mark.parametrize(
        "q, pi",
        [
            ([[0.5, 0.6], [0.5, 0.5]], [0.5, 0.5]),
            ([[0.4, 0.6], [0.8, 0.2]], [0.5, 0.5]),
            ([[1.2, -0.2], [0.5, 0.5]], [0.5, 0.5]),
        ],
    )
    def test_rejects_invalid(self, q, pi):
        with pytest.raises(ValueError):
            HmmSpec(q, pi, (((1.0, 2.0, 2.0),),) * 2)

    def test_non_stationary_start_allowed_when_flag_off(self):
        hmm = HmmSpec([[0.4, 0.6], [0.8, 0.2]], [1.0, 0.0], (((1, 2, 5),), ((1, 4, 3),)), False)
        assert hmm.pi[0] == 1.0

    def test_bad_mixture(self):
        with pytest.raises(ValueError):
            HmmSpec([[1.0]], [1.0], (((0.5, 2.0, 2.0),),))
        with pytest.raises(ValueError):
            HmmSpec([[1.0]], [1.0], (((1.0, 0.0, 2.0),),))

    def test_json_round_trip(self, hmm4, tmp_path):
        path = tmp_path / "hmm.json"
        hmm4.to_json(path)
        back = HmmSpec.from_json(path)
        np.testing.assert_array_equal(back.q, hmm4.q)
        np.testing.assert_array_equal(back.pi, hmm4.pi)
        assert back.emissions == hmm4.emissions
        assert json.loads(path.read_text())["K"] == 2

    def test_pi_optional_in_dict(self, hmm4):
        d = hmm4.to_dict()
        del d["pi"]
        np.testing.assert_allclose(HmmSpec.from_dict(d).pi, hmm4.pi, atol=1e-15)

    def test_permuted(self, hmm4):
        p = hmm4.permuted([1, 0])
        np.testing.assert_array_equal(p.q, [[0.2, 0.8], [0.6, 0.4]])
        assert p.emissions[0] == hmm4.emissions[1]


@pytest.fixture(scope="module")
def long_run(hmm4):
    return sample_trajectory(hmm4, 100_000, 2024)


class TestSimulation:
    def test_single_state(self, one_state):
        traj = sample_trajectory(one_state, 5, 3)
        assert np.all(traj.hidden == 0)
        assert np.all((traj.obs >= 0) & (traj.obs <= 1)) and len(traj) == 5

    def test_deterministic(self, hmm4):
        a, b = sample_trajectory(hmm4, 500, 9), sample_trajectory(hmm4, 500, 9)
        np.testing.assert_array_equal(a.obs, b.obs)
        np.testing.assert_array_equal(a.hidden, b.hidden)

    def test_rejects_empty(self, hmm4):
        with pytest.raises(ValueError):
            sample_trajectory(hmm4, 0, 1)

    def test_transition_frequencies(self, hmm4, long_run):
        h = long_run.hidden
        counts = np.zeros((2, 2))
        np.add.at(counts, (h[:-1], h[1:]), 1)
        freq = counts / counts.sum(axis=1, keepdims=True)
        assert np.max(np.abs(freq - hmm4.q)) < 0.01

    def test_occupancy(self, hmm4, long_run):
        occ = np.bincount(long_run.hidden, minlength=2) / len(long_run)
        assert abs(occ[0] - 4 / 7) < 0.01
        _, pval = stats.chisquare(np.bincount(long_run.hidden), len(long_run) * hmm4.pi)
        assert pval > 0.01

    def test_emission_law(self, hmm4, long_run):
        for x, (a, b) in enumerate([(2, 5), (4, 3)]):
            y = long_run.obs[long_run.hidden == x]
            assert stats.kstest(y, "beta", args=(a, b)).pvalue > 0.001


class TestEmissions:
    def test_beta25(self, hmm4):
        assert eval_emission(hmm4, 0, 0.5) == pytest.approx(0.9375, abs=1e-13)

    def test_beta43(self, hmm4):
        assert eval_emission(hmm4, 1, 0.5) == pytest.approx(1.875, abs=1e-13)

    def test_uniform(self, one_state):
        np.testing.assert_allclose(emission_matrix(one_state, np.linspace(0, 1, 9)), 1.0)

    @pytest.mark.parametrize("a, b", [(2, 5), (4, 3), (0.5, 0.5), (1, 1), (1, 3)])
    def test_matches_scipy(self, a, b):
        y = np.linspace(0.01, 0.99, 99)
        np.testing.assert_allclose(beta_pdf(y, a, b), stats.beta.pdf(y, a, b), rtol=1e-12)

    def test_edges(self):
        assert beta_pdf(0.0, 2, 5) == 0.0 and beta_pdf(1.0, 4, 3) == 0.0
        assert beta_pdf(0.0, 1, 3) == pytest.approx(3.0)
        assert np.isinf(beta_pdf(0.0, 0.5, 0.5))
        assert beta_pdf(np.finfo(float).tiny, 2, 5) >= 0

    def test_mixture(self):
        hmm = HmmSpec([[1.0]], [1.0], (((0.3, 2.0, 5.0), (0.7, 4.0, 3.0)),))
        assert eval_emission(hmm, 0, 0.5) == pytest.approx(0.3 * 0.9375 + 0.7 * 1.875)

    def test_domain(self, hmm4):
        with pytest.raises(DomainError):
            eval_emission(hmm4, 0, 1.5)


class TestCStar:
    def test_midpoint(self, hmm4):
        assert c_star(hmm4, 0.5) == pytest.approx(1.125, abs=1e-13)

    def test_single_state(self, one_state):
        assert c_star(one_state, 0.37) == pytest.approx(1.0)

    def test_boundary_zero(self, hmm4):
        assert c_star(hmm4, 0.0) == 0.0

    def test_domain(self, hmm4):
        with pytest.raises(DomainError):
            c_star(hmm4, -0.1)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 1))
    def test_minimum_property(self, y):
        hmm = HmmSpec.from_stationary(
            np.array([[0.4, 0.6], [0.8, 0.2]]), (((1, 2, 5),), ((1, 4, 3),))
        )
        rows = hmm.q @ emission_matrix(hmm, y)[0]
        assert c_star(hmm, y) <= rows.min() + 1e-15
        assert c_star(hmm, y) == pytest.approx(rows.min())


class TestMarkovConstants:
    def test_section4(self, hmm4):
        mc = markov_constants(hmm4)
        assert mc.delta_star == pytest.approx(0.2, abs=1e-15)
        assert mc.rho_star == pytest.approx(0.75, abs=1e-15)
        assert mc.c_big_star == pytest.approx(16.0, abs=1e-13)
        assert mc.g_ps == pytest.approx(0.84, abs=1e-12)
        assert mc.t_mix == pytest.approx(T_MIX_SECTION4, abs=1e-12)
        assert mc.t_mix == pytest.approx(4.674, abs=1e-3)
        assert mc.g_ps_argmax == 1 and mc.k_max == 50

    def test_zero_entry_flags_unavailable(self):
        hmm = HmmSpec.from_stationary(np.array([[0.0, 1.0], [0.5, 0.5]]), (((1, 2, 5),),) * 2)
        mc = markov_constants(hmm)
        assert not mc.prop_constants_available and mc.delta_star is None
        assert mc.g_ps > 0 and mc.t_mix > 0

    def test_periodic_rejected(self):
        hmm = HmmSpec([[0.0, 1.0], [1.0, 0.0]], [0.5, 0.5], (((1, 2, 5),),) * 2)
        with pytest.raises(StructureError):
            markov_constants(hmm)

    @pytest.mark.parametrize("delta", [0.01, 0.1, 0.25, 0.4, 0.49])
    def test_rho_in_unit_interval(self, delta):
        rho, cbig = forgetting_constants(delta)
        assert 0 < rho < 1 and cbig == pytest.approx(4 * (1 - delta) / delta)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.integers(2, 5))
    def test_invariants(self, seed, k):
        q = random_chain(seed, k)
        hmm = HmmSpec.from_stationary(q, (((1, 2, 5),),) * k)
        mc = markov_constants(hmm)
        assert 0 < mc.delta_star <= 1 / k
        assert 0 < mc.g_ps <= 2 and mc.t_mix > 0
        perm = np.random.default_rng(seed).permutation(k)
        pq = q[np.ix_(perm, perm)]
        g_perm, _ = pseudo_spectral_gap(pq, stationary_of(pq))
        assert g_perm == pytest.approx(mc.g_ps, abs=1e-12)


class TestCStarConstant:
    def test_section4(self, hmm4):
        expected = np.sqrt(2 / 0.84) + 2 * np.sqrt(2 * T_MIX_SECTION4)
        assert c_star_constant(hmm4, np.exp(-1)) == pytest.approx(expected, abs=1e-12)
        assert c_star_constant(hmm4, np.exp(-1)) == pytest.approx(7.658, abs=1e-3)

    def test_limit_delta_one(self, hmm4):
        assert c_star_constant(hmm4, 1 - 1e-15) == pytest.approx(np.sqrt(2 / 0.84), abs=1e-6)

    def test_monotone(self, hmm4):
        assert c_star_constant(hmm4, 0.01) > c_star_constant(hmm4, 0.1)

    @pytest.mark.parametrize("delta", [0.0, 1.0, -0.5, 2.0])
    def test_domain(self, hmm4, delta):
        with pytest.raises(DomainError):
            c_star_constant(hmm4, delta)


class TestPopulationMoments:
    def test_single_state(self, rng):
        o = rng.random((5, 1))
        mom = population_moments(o, np.eye(1), np.ones(1))
        np.testing.assert_allclose(mom.l, o[:, 0])
        np.testing.assert_allclose(mom.n, o @ o.T)
        np.testing.assert_allclose(mom.p, o @ o.T)
        for b in range(5):
            np.testing.assert_allclose(mom.m3[:, b, :], o[b, 0] * o @ o.T)

    def test_identity_chain(self, rng):
        o = rng.random((4, 2))
        pi = np.array([0.5, 0.5])
        mom = population_moments(o, np.eye(2), pi)
        np.testing.assert_allclose(mom.n, o @ np.diag(pi) @ o.T)
        np.testing.assert_allclose(mom.p, mom.n)

    def test_histogram_marginalization(self, hmm4, hist8):
        mom = population_moments_for(hmm4, hist8)
        np.testing.assert_allclose(mom.m3.sum(axis=1) / np.sqrt(8), mom.p, atol=1e-12)
        np.testing.assert_allclose(mom.p.sum(axis=1) / np.sqrt(8), mom.l, atol=1e-12)
        assert mom.basis == hist8

    def test_monte_carlo_triples(self, hmm4, hist8):
        """Independent stationary triples, binned directly (no basis code)."""
        g = np.random.default_rng(77)
        total, m = 10_000_000, 8
        counts = np.zeros(m**3)
        cum = np.cumsum(hmm4.q, axis=1)
        for _ in range(5):
            n = total // 5
            x = [np.searchsorted(np.cumsum(hmm4.pi), g.random(n), side="right")]
            for _ in range(2):
                x.append((g.random(n)[:, None] > cum[x[-1]]).sum(axis=1))
            ab = np.array([[2.0, 5.0], [4.0, 3.0]])
            y = [g.beta(ab[xi, 0], ab[xi, 1]) for xi in x]
            bins = [np.minimum((yi * m).astype(int), m - 1) for yi in y]
            counts += np.bincount((bins[0] * m + bins[1]) * m + bins[2], minlength=m**3)
        freq = counts / total
        mc = freq.reshape(m, m, m) * m**1.5
        se = np.sqrt(freq * (1 - freq) / total).reshape(m, m, m) * m**1.5
        exact = population_moments_for(hmm4, hist8).m3
        z = np.abs(mc - exact) / np.maximum(se, 1e-300)
        # 512 entries: nearly all within 3 SE, and all within a Bonferroni-adjusted band
        assert np.mean(z <= 3) >= 0.99
        assert z.max() <= stats.norm.isf(0.01 / (2 * m**3))

    def test_coefficients_are_bin_probabilities(self, hmm4, hist8):
        o = coefficient_matrix(hmm4, hist8)
        edges = np.arange(9) / 8
        np.testing.assert_allclose(o[:, 0], np.sqrt(8) * np.diff(stats.beta.cdf(edges, 2, 5)), atol=1e-13)
        assert bin_index(8, 1.0) == 7
