import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from mixlogit.errors import NumericalError, SpecificationError
from mixlogit.model import ChoiceSituation, Dataset, Individual
from mixlogit.samplers import (MhTuning, acceptance_probability, adapt_step_size,
                               metropolis_accept, mh_update_alpha, mh_update_betas,
                               mh_update_individual, rng_stream, sample_inverse_wishart,
                               sample_mvn)

from conftest import fixed_only_spec, small_spec


def _flat(rows):
    return np.zeros(len(rows))


def run_betas(n_chains, steps, zeta, omega, rho, loglik=_flat, seed=0, start=None):
    """Parallel independent random-walk chains; returns the stacked states per step."""
    rng = rng_stream(seed)
    p = len(zeta)
    b = np.tile(zeta, (n_chains, 1)) if start is None else start.copy()
    ll = loglik(b)
    out = np.empty((steps, n_chains, p))
    for t in range(steps):
        z = rng.standard_normal((n_chains, p))
        u = rng.random(n_chains)
        b, _, ll = mh_update_betas(b, loglik, ll, zeta, omega, rho, z, u)
        out[t] = b
    return out


class TestStreams:
    def test_same_seed_same_stream(self):
        np.testing.assert_array_equal(rng_stream(7, 3).random(5), rng_stream(7, 3).random(5))

    def test_streams_differ(self):
        assert not np.array_equal(rng_stream(7, 0).random(5), rng_stream(7, 1).random(5))


class TestMvn:
    def test_zero_cov_returns_mean(self):
        mean = np.array([0.3, -1.2])
        np.testing.assert_array_equal(sample_mvn(mean, np.zeros((2, 2)), rng_stream(0)), mean)

    def test_clt(self):
        rng = rng_stream(1)
        draws = np.array([sample_mvn([0.0, 0.0], np.eye(2), rng) for _ in range(100_000)])
        assert np.all(np.abs(draws.mean(axis=0)) < 4 / math.sqrt(100_000))

    def test_reproducible(self):
        a = [sample_mvn([1.0], [[2.0]], r) for r in [rng_stream(4)] * 3]
        rng = rng_stream(4)
        b = [sample_mvn([1.0], [[2.0]], rng) for _ in range(3)]
        np.testing.assert_array_equal(a, b)

    def test_covariance(self):
        cov = np.array([[2.0, 0.6], [0.6, 0.5]])
        rng = rng_stream(2)
        draws = np.array([sample_mvn([0, 0], cov, rng) for _ in range(50_000)])
        np.testing.assert_allclose(np.cov(draws.T), cov, atol=0.05)


class TestInverseWishart:
    def _draws(self, dof, scale, n, seed):
        rng = rng_stream(seed)
        return np.array([sample_inverse_wishart(dof, scale, rng) for _ in range(n)])

    def test_inverse_gamma_mean(self):
        d = self._draws(5, [[2.0]], 200_000, 0)[:, 0, 0]
        se = d.std(ddof=1) / math.sqrt(len(d))
        assert abs(d.mean() - 2 / 3) < 3 * se

    def test_inverse_gamma_distribution(self):
        # p=1: IW(nu, psi) is inverse-gamma(nu/2, psi/2)
        d = self._draws(5, [[2.0]], 20_000, 1)[:, 0, 0]
        assert stats.kstest(d, stats.invgamma(2.5, scale=1.0).cdf).statistic < 0.015

    def test_matrix_mean(self):
        d = self._draws(10, np.eye(2), 100_000, 2)
        se = d.std(axis=0, ddof=1) / math.sqrt(len(d))
        assert np.all(np.abs(d.mean(axis=0) - np.eye(2) / 7) < 3 * se)

    def test_spd_closure(self):
        rng = rng_stream(3)
        scale = np.array([[1.0, 0.9, 0.0], [0.9, 1.0, 0.2], [0.0, 0.2, 0.5]])
        for _ in range(2000):
            w = sample_inverse_wishart(3.5, scale, rng)
            assert np.max(np.abs(w - w.T)) < 1e-12
            np.linalg.cholesky(w)

    def test_rejects_bad_scale(self):
        with pytest.raises(NumericalError):
            sample_inverse_wishart(5, [[1.0, 2.0], [2.0, 1.0]], rng_stream(0))

    def test_rejects_small_dof(self):
        with pytest.raises(SpecificationError):
            sample_inverse_wishart(0.5, np.eye(2), rng_stream(0))


class TestAcceptance:
    @given(st.floats(-1e300, 1e300), st.floats(-1e300, 1e300))
    def test_never_nan(self, new, old):
        p = acceptance_probability(new, old)
        assert 0.0 <= p <= 1.0

    def test_infinite_targets(self):
        assert acceptance_probability(-np.inf, -np.inf) == 0.0
        assert acceptance_probability(0.0, -np.inf) == 1.0
        assert acceptance_probability(-np.inf, 0.0) == 0.0

    def test_uphill_always_accepted(self):
        assert metropolis_accept(1.0, 0.0, 0.999999)

    def test_zero_uniform(self):
        # log(0) = -inf is below any finite log ratio
        assert metropolis_accept(-50.0, 0.0, 0.0)


class TestIndividualUpdate:
    def test_null_proposal(self):
        spec = small_spec()
        ind = Individual("i", "g", (ChoiceSituation(np.ones((3, 2)), np.ones(3, bool), "a"),))
        tuning = MhTuning(rho=0.0)
        beta, accepted = mh_update_individual([0.4], ind, [0.1], [0.0], [[1.0]], tuning,
                                              rng_stream(0), spec)
        assert accepted and np.array_equal(beta, [0.4])

    def test_reject_leaves_state(self):
        # target falls off a cliff away from the start: every move is rejected
        tuning = MhTuning(rho=1.0)
        cliff = lambda b: 0.0 if np.all(b == 0.25) else -np.inf
        beta, accepted = mh_update_individual([0.25], None, [], [0.0], [[1.0]], tuning,
                                              rng_stream(1), log_likelihood=cliff)
        assert not accepted and np.array_equal(beta, [0.25])

    def test_prior_recovery(self):
        zeta = np.array([0.5, -1.0])
        omega = np.array([[1.0, 0.3], [0.3, 0.5]])
        final = run_betas(20_000, 300, zeta, omega, 1.5, seed=5)[-1]
        n = len(final)
        se = np.sqrt(np.diag(omega) / n)
        assert np.all(np.abs(final.mean(axis=0) - zeta) < 3 * se)
        cov = np.cov(final.T)
        se_var = np.sqrt((omega ** 2 + np.outer(np.diag(omega), np.diag(omega))) / n)
        assert np.all(np.abs(cov - omega) < 3 * se_var)

    def test_ks_standard_normal(self):
        draws = run_betas(50, 10_000, np.zeros(1), np.eye(1), 2.4, seed=6)
        thinned = draws[1000::10, :, 0].ravel()[:50_000]
        assert len(thinned) >= 45_000
        assert stats.kstest(thinned, "norm").statistic < 0.02

    def test_conjugate_toy(self):
        # normal likelihood stand-in: y_i ~ N(beta, s^2), prior N(zeta, omega)
        y = rng_stream(7).normal(1.5, 2.0, size=12)
        s2, zeta, omega = 4.0, 0.0, 1.0
        post_var = 1 / (1 / omega + len(y) / s2)
        post_mean = post_var * (zeta / omega + y.sum() / s2)
        loglik = lambda b: -0.5 * ((y[None, :] - b[:, :1]) ** 2).sum(axis=1) / s2
        draws = run_betas(100, 1500, np.array([zeta]), np.array([[omega]]), 1.0,
                          loglik=loglik, seed=8)[500:, :, 0]
        assert draws.size == 100_000
        chain_means = draws.mean(axis=0)
        se = chain_means.std(ddof=1) / math.sqrt(len(chain_means))
        assert abs(draws.mean() - post_mean) < 3 * se

    def test_panel_likelihood_default(self):
        spec = small_spec()
        ind = Individual("i", "g", (ChoiceSituation(np.eye(3, 2), np.ones(3, bool), "a"),))
        out = [mh_update_individual([0.0], ind, [0.2], [0.0], [[1.0]], MhTuning(rho=0.5),
                                    rng_stream(9), spec) for _ in range(2)]
        np.testing.assert_array_equal(out[0][0], out[1][0])


def _toy_alpha_data(n, alpha, seed):
    spec = fixed_only_spec()
    rng = rng_stream(seed)
    people = []
    for i in range(n):
        x = rng.normal(size=(2, 1))
        p_a = 1 / (1 + math.exp(-alpha * (x[0, 0] - x[1, 0])))
        chosen = "a" if rng.random() < p_a else "b"
        people.append(Individual(f"i{i}", f"g{i}", (ChoiceSituation(x, [True, True], chosen),)))
    return Dataset(spec, tuple(people))


class TestAlphaUpdate:
    def test_null_proposal(self):
        data = _toy_alpha_data(20, 1.0, 0)
        alpha, accepted = mh_update_alpha([0.3], data, np.zeros((20, 0)),
                                          MhTuning(rho_alpha=0.0), rng_stream(0))
        assert accepted and np.array_equal(alpha, [0.3])

    def test_empty_alpha(self):
        alpha, accepted = mh_update_alpha([], None, None, MhTuning(), rng_stream(0))
        assert alpha.shape == (0,) and accepted

    def test_mode_matches_grid_mle(self):
        data = _toy_alpha_data(400, 1.2, 1)
        design = data.design
        grid = np.linspace(0, 3, 3001)
        ll = [design.individual_loglik([a], np.zeros((len(data), 0))).sum() for a in grid]
        mle = grid[int(np.argmax(ll))]
        rng, tuning = rng_stream(2), MhTuning(rho_alpha=1.0)
        alpha, draws = np.array([0.0]), []
        for t in range(6000):
            alpha, acc = mh_update_alpha(alpha, data, np.zeros((len(data), 0)), tuning, rng)
            tuning = tuning.record_alpha(alpha, acc)
            tuning = adapt_step_size(tuning, tuning.alpha_accepts / tuning.alpha_proposals,
                                     "alpha")
            if t >= 1000:
                draws.append(alpha[0])
        kde = stats.gaussian_kde(draws)
        mode = grid[int(np.argmax(kde(grid)))]
        assert abs(mode - mle) < 0.05


class TestAdaptation:
    def test_band(self):
        for rate in (0.29, 0.30, 0.31):
            assert adapt_step_size(MhTuning(rho=0.5), rate).rho == 0.5

    def test_low_rate_shrinks(self):
        assert adapt_step_size(MhTuning(rho=0.5), 0.0).rho == pytest.approx(0.49)

    def test_high_rate_grows(self):
        assert adapt_step_size(MhTuning(rho=0.5), 1.0).rho == pytest.approx(0.51)

    def test_clamped(self):
        assert adapt_step_size(MhTuning(rho=1e-6), 0.0).rho == 1e-6
        assert adapt_step_size(MhTuning(rho=100.0), 1.0).rho == 100.0

    def test_alpha_scale_independent(self):
        t = adapt_step_size(MhTuning(rho=0.5, rho_alpha=0.2), 1.0, "alpha")
        assert (t.rho, t.rho_alpha) == (0.5, pytest.approx(0.204))

    def test_rate_out_of_range(self):
        with pytest.raises(ValueError):
            adapt_step_size(MhTuning(), 1.5)

    def test_alpha_window(self):
        t = MhTuning()
        for k in range(30):
            t = t.record_alpha([0.0], k % 3 == 0)
        assert t.alpha_proposals == 20 and t.alpha_accepts == 6  # k = 12, 15, ..., 27
