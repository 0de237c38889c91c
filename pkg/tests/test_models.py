import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate
from scipy.interpolate import BSpline
from scipy.stats import kstest, multivariate_normal, norm

from panelpif.core import CovariateTable, PanelData, UnitData, unit_parameters
from panelpif.likelihood import replicated_eval
from panelpif.models import (ContactsModel, GompertzModel, PolioModel, default_parameters,
                             get_model, simulate_panel)
from panelpif.models.contacts import gamma_mean_sd, nb_log_pmf, renewal_integral
from panelpif.models.gompertz import gompertz_dmeasure, gompertz_exact_loglik, gompertz_rprocess
from panelpif.models.polio import (IB, IO, MORTALITY, SO, gamma_noise, periodic_bspline_basis,
                                   polio_log_density, polio_step, seasonality)

GP = {"K": 1.0, "r": 0.1, "sigma_G": 0.1, "tau": 0.1, "X_0": 1.0}


# ---------------------------------------------------------------------------
# Gompertz


class TestGompertz:
    def test_fixed_point(self, rng):
        p = dict(GP, sigma_G=0.0)
        for r in (0.01, 1.0, 7.0):
            assert gompertz_rprocess(np.array([1.0]), dict(p, r=r), rng)[0] == 1.0

    def test_fast_relaxation_to_capacity(self, rng):
        x = gompertz_rprocess(np.array([2.0]), {"K": 3.0, "r": 50.0, "sigma_G": 0.0}, rng)
        assert abs(x[0] - 3.0) < 1e-9

    def test_transition_law(self):
        rng = np.random.default_rng(0)
        p = {"K": 2.0, "r": 0.3, "sigma_G": 0.2}
        x = gompertz_rprocess(np.full(100_000, 1.5), p, rng)
        a = math.exp(-0.3)
        m = a * math.log(1.5) + (1 - a) * math.log(2.0)
        assert kstest(np.log(x), norm(m, 0.2).cdf).pvalue > 0.01

    def test_nonpositive_state(self, rng):
        with pytest.raises(ValueError):
            gompertz_rprocess(np.array([0.0]), GP, rng)

    def test_density_at_state(self):
        # y = X, tau = 1: -log X - log(2 pi)/2
        X = 2.5
        assert gompertz_dmeasure(X, np.array([X]), {"tau": 1.0})[0] == pytest.approx(
            -math.log(X) - 0.5 * math.log(2 * math.pi))

    def test_density_tail_and_nonpositive(self):
        assert gompertz_dmeasure(1e-300, np.array([1.0]), {"tau": 0.1})[0] < -100
        assert gompertz_dmeasure(0.0, np.array([1.0]), {"tau": 0.1})[0] == -np.inf

    def test_density_normalized(self):
        f = lambda y: math.exp(gompertz_dmeasure(y, np.array([1.0]), {"tau": 0.1})[0])
        total, _ = integrate.quad(f, 0, 10, points=[0.5, 1.0, 2.0], limit=200)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_exact_degenerate_path(self):
        unit = UnitData("u", 0.0, np.arange(1.0, 6.0), np.array([0.9, 1.2, 1.05, 0.8, 1.1]))
        p = dict(GP, sigma_G=0.0)
        ly = np.log(unit.y[:, 0])
        expected = norm(0, 0.1).logpdf(ly).sum() - ly.sum()
        assert gompertz_exact_loglik(unit, p) == pytest.approx(expected, abs=1e-10)

    def test_exact_one_step(self):
        p = {"K": 2.0, "r": 0.4, "sigma_G": 0.3, "tau": 0.2, "X_0": 0.5}
        unit = UnitData("u", 0.0, np.array([1.0]), np.array([0.8]))
        a = math.exp(-0.4)
        m = a * math.log(0.5) + (1 - a) * math.log(2.0)
        expected = norm(m, math.sqrt(0.09 + 0.04)).logpdf(math.log(0.8)) - math.log(0.8)
        assert gompertz_exact_loglik(unit, p) == pytest.approx(expected, abs=1e-12)

    def test_exact_matches_joint_gaussian(self, gompertz_panel):
        # brute force: log y is multivariate normal with AR(1) covariance plus noise
        unit = gompertz_panel[0]
        ly = np.log(unit.y[:, 0])
        N = ly.size
        a = math.exp(-GP["r"])
        idx = np.arange(N)
        mean = np.zeros(N)  # K = X_0 = 1 keeps the latent mean at 0
        i, j = np.meshgrid(idx, idx, indexing="ij")
        k = np.minimum(i, j)
        cov = GP["sigma_G"] ** 2 * a ** (i + j - 2 * k) * (1 - a ** (2 * (k + 1))) / (1 - a**2)
        cov += GP["tau"] ** 2 * np.eye(N)
        expected = multivariate_normal(mean, cov).logpdf(ly) - ly.sum()
        assert gompertz_exact_loglik(unit, GP) == pytest.approx(expected, abs=1e-8)

    @given(st.floats(-2, 2))
    def test_exact_shift_consistency(self, c):
        unit = UnitData("u", 0.0, np.arange(1.0, 9.0), np.array([0.9, 1.2, 1.05, 0.8, 1.1, 1.3, 0.7, 1.0]))
        shifted = UnitData("u", 0.0, unit.times, unit.y * math.exp(c))
        p = {"K": 1.3, "r": 0.2, "sigma_G": 0.15, "tau": 0.1, "X_0": 0.9}
        q = dict(p, K=p["K"] * math.exp(c), X_0=p["X_0"] * math.exp(c))
        assert gompertz_exact_loglik(shifted, q) == pytest.approx(
            gompertz_exact_loglik(unit, p) - c * unit.n_obs, abs=1e-9)

    def test_nonpositive_data(self):
        with pytest.raises(ValueError):
            gompertz_exact_loglik(UnitData("u", 0.0, [1.0], [0.0]), GP)


# ---------------------------------------------------------------------------
# polio


def flat_covariates(t0=1932.0, months=24, births=1000.0, pop=1e6):
    times = t0 + np.arange(-5, months + 1) / 12
    return CovariateTable(times, {"births": np.full(times.size, births),
                                  "population": np.full(times.size, pop)})


def polio_params(**kw):
    p = {"rho": 0.02, "sigma_dem": 0.0, "psi": 0.0, "tau": 0.03, "sigma_env": 0.0,
         "SO_0": 0.1, "IO_0": 2e-4, **{f"b{k}": 3.0 for k in range(1, 7)}}
    p.update(kw)
    return p


class TestPolioBasis:
    @pytest.mark.parametrize("t", [0.0, 0.13, 0.5, 0.99])
    def test_partition_of_unity(self, t):
        xi = periodic_bspline_basis(t)
        assert xi.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(xi >= 0)

    def test_periodic(self):
        t = np.linspace(-3, 3, 101)
        np.testing.assert_allclose(periodic_bspline_basis(t), periodic_bspline_basis(t + 1), atol=1e-12)

    def test_constant_coefficients(self):
        t = np.linspace(0, 1, 37)
        np.testing.assert_allclose(seasonality(t, np.full(6, 2.0)), math.exp(2.0), rtol=1e-12)

    def test_matches_scipy_bspline(self):
        # periodic cubic B-splines on knots k/6: wrap a uniform knot vector
        knots = np.arange(0, 13) / 6
        t = np.linspace(0, 1, 50, endpoint=False)
        ours = periodic_bspline_basis(t)
        for k in range(6):
            total = np.zeros_like(t)
            for shift in (-1, 0, 1):
                b = BSpline.basis_element(knots[k:k + 5] + shift, extrapolate=False)
                total += np.nan_to_num(b(t))
            np.testing.assert_allclose(ours[:, k], total, atol=1e-12)


class TestPolioDynamics:
    def test_initial_state(self):
        cov = CovariateTable(1932 + np.arange(-5, 3) / 12,
                             {"births": np.arange(8) * 100.0, "population": np.full(8, 1e6)})
        x = PolioModel().rinit(polio_params(), 3, 1932.0, cov, np.random.default_rng(0))
        assert x[0, SO] == pytest.approx(1e5)
        assert x[0, IO] == pytest.approx(200.0)
        assert x[0, IB] == 0
        # cohort k holds the births k-1 months before t0
        np.testing.assert_allclose(x[0, :6], [500, 400, 300, 200, 100, 0])

    def test_disease_free_start(self):
        x = PolioModel().rinit(polio_params(IO_0=0.0), 1, 1932.0, flat_covariates(), None)
        assert x[0, IO] == 0

    def test_missing_early_births(self):
        cov = CovariateTable(1932 + np.arange(-2, 3) / 12,
                             {"births": np.ones(5), "population": np.ones(5)})
        with pytest.raises(ValueError, match="births"):
            PolioModel().rinit(polio_params(), 1, 1932.0, cov, None)

    def test_disease_free_step(self, rng):
        x = np.zeros((1, 9))
        x[0, :6] = [10, 20, 30, 40, 50, 60]
        x[0, SO] = 1000.0
        out, lam = polio_step(x, lambda s: np.zeros(1), 7.0, polio_params(), rng)
        p = math.exp(-MORTALITY / 12)
        assert lam[0] == 0
        assert out[0, IB] == 0 and out[0, IO] == 0
        np.testing.assert_allclose(out[0, :6], [7.0, 10 * p, 20 * p, 30 * p, 40 * p, 50 * p])
        assert out[0, SO] == pytest.approx(p * 1060)

    def test_deterministic_step_conserves(self, rng):
        x = np.zeros((1, 9))
        x[0, :6] = 100.0
        x[0, SO] = 5e4
        out, lam = polio_step(x, lambda s: np.full(1, 3.0), 0.0, polio_params(), rng)
        assert lam[0] == 3.0
        before = x[0, :6].sum() + x[0, SO]
        after = out[0, 1:6].sum() + out[0, SO] + out[0, IB] + out[0, IO]
        p = math.exp(-(MORTALITY + 3.0) / 12)
        q = (1 - p) * 3.0 / (3.0 + MORTALITY)
        assert after == pytest.approx((p + q) * before)
        assert after <= before

    def test_gamma_noise_moments(self, rng):
        eps = gamma_noise(2.0, 0.3, 0.2, rng, 100_000)
        var = 0.3**2 + 0.2**2 / 2.0
        se_mean = math.sqrt(var / eps.size)
        assert abs(eps.mean() - 1) < 3 * se_mean
        # sd of the sample variance from the fourth central moment of the gamma law
        k = 1 / var
        mu4 = 3 * var**2 + 6 * var**2 / k
        se_var = math.sqrt((mu4 - var**2) / eps.size)
        assert abs(eps.var(ddof=1) - var) < 3 * se_var

    def test_gamma_noise_degenerate(self, rng):
        assert np.all(gamma_noise(np.array([0.0, 2.0]), 0.0, 0.0, rng, 2) == 1.0)


class TestPolioMeasurement:
    def test_zero_infected(self):
        assert polio_log_density(0, np.array([0.0]), 0.02, 0.03)[0] == 0.0
        assert polio_log_density(3, np.array([0.0]), 0.02, 0.03)[0] == -np.inf

    def test_normalization(self):
        io, rho, tau = 500.0, 0.02, 0.03
        m, s = rho * io, math.sqrt(rho * io + (tau * io) ** 2)
        ys = range(0, int(m + 20 * s) + 1)
        total = sum(math.exp(polio_log_density(y, np.array([io]), rho, tau)[0]) for y in ys)
        assert total == pytest.approx(1.0, abs=1e-8)

    def test_far_tail_finite(self):
        v = polio_log_density(400, np.array([100.0]), 0.02, 0.0)
        assert np.isfinite(v[0]) or v[0] == -np.inf
        assert not np.isnan(v[0])

    @pytest.mark.parametrize("y", [-1, 2.5])
    def test_invalid_counts(self, y):
        with pytest.raises(ValueError):
            polio_log_density(y, np.array([10.0]), 0.02, 0.03)

    def test_simulated_mean(self, rng):
        model = PolioModel()
        x = np.zeros((100_000, 9))
        x[:, IO] = 5000.0
        p = polio_params(tau=0.01)
        y = model.rmeasure(x, p, 0.0, None, rng)[:, 0]
        # m = 100, s = sqrt(100 + 2500): truncation at zero is negligible
        se = y.std() / math.sqrt(y.size)
        assert abs(y.mean() - 100.0) < 3 * se


# ---------------------------------------------------------------------------
# contacts


CP = {"mu_X": 1.5, "sigma_X": 3.0, "mu_D": 3.0, "sigma_D": 4.0, "mu_R": 1.0, "alpha": 0.9}


class TestContacts:
    def test_no_renewals(self, rng):
        rate = np.array([0.7, 2.0])
        end, integral, n = renewal_integral(rate, 1.5, dict(CP, mu_R=0.0), rng)
        np.testing.assert_array_equal(integral, rate * 1.5)
        np.testing.assert_array_equal(n, 0)

    def test_constant_rates(self, rng):
        _, integral, n = renewal_integral(np.full(1000, 1.5), 2.0, dict(CP, sigma_X=0.0), rng)
        np.testing.assert_allclose(integral, 3.0)
        assert n.sum() > 0

    def test_segments_sum_exactly(self, rng):
        _, integral, _, seg = renewal_integral(np.full(200, 1.0), 1.0, CP, rng, record=True)
        for j in range(200):
            assert integral[j] == pytest.approx(sum(d * r for d, r in seg[j]), rel=1e-14)
            assert sum(d for d, _ in seg[j]) == pytest.approx(1.0, rel=1e-14)

    def test_gamma_parameterization(self, rng):
        g = gamma_mean_sd(1.5, 3.0, rng, 200_000)
        assert g.mean() == pytest.approx(1.5, rel=0.03)
        assert g.std() == pytest.approx(3.0, rel=0.05)

    def test_nb_point_mass(self):
        assert nb_log_pmf(0, np.array([0.0]), np.array([2.0]))[0] == 0.0
        assert nb_log_pmf(1, np.array([0.0]), np.array([2.0]))[0] == -np.inf

    def test_nb_negative_count(self):
        with pytest.raises(ValueError):
            nb_log_pmf(-1, np.array([1.0]), np.array([1.0]))

    def test_nb_normalized_and_mean(self):
        ys = np.arange(0, 400)
        pmf = np.exp([nb_log_pmf(y, np.array([3.0]), np.array([2.0]))[0] for y in ys])
        assert pmf.sum() == pytest.approx(1.0, abs=1e-10)
        assert (ys * pmf).sum() == pytest.approx(3.0, abs=1e-8)
        assert (ys**2 * pmf).sum() - 9.0 == pytest.approx(3.0 + 9.0 / 2.0, abs=1e-6)

    def test_no_trend(self):
        model = ContactsModel()
        x = np.array([[1.0, 2.0, 4.0, 1.0], [1.0, 2.0, 4.0, 3.0]])
        np.testing.assert_allclose(model.expected_count(x, dict(CP, alpha=1.0)), [4.0, 4.0])

    def test_identity_on_zero_interval(self, rng):
        model = ContactsModel()
        x = model.rinit(CP, 5, 0.0, None, rng)
        np.testing.assert_array_equal(model.rprocess(x, 1.0, 1.0, CP, None, rng), x)


# ---------------------------------------------------------------------------
# simulation


class TestSimulation:
    @pytest.mark.parametrize("model_id,n", [("gompertz", 20), ("polio", 24), ("contacts", 4)])
    def test_round_trip_finite(self, model_id, n):
        ps = default_parameters(model_id, 2)
        data = simulate_panel(model_id, ps, n, seed=1)
        m = replicated_eval(get_model(model_id), data, ps, 200, 1, seed=2)
        assert np.all(np.isfinite(m.logliks))

    def test_same_seed_same_panel(self):
        ps = default_parameters("contacts", 3)
        a = simulate_panel("contacts", ps, 4, seed=9)
        b = simulate_panel("contacts", ps, 4, seed=9)
        for ua, ub in zip(a, b):
            np.testing.assert_array_equal(ua.y, ub.y)

    def test_deterministic_dynamics(self):
        ps = default_parameters("gompertz", 2)
        ps = ps.replace(shared={"sigma_G": 1e-300}).set_value("tau", 1e-300)
        a = simulate_panel("gompertz", ps, 10, seed=1)
        b = simulate_panel("gompertz", ps, 10, seed=2)
        np.testing.assert_allclose(a[0].y, b[0].y, rtol=1e-12)

    def test_full_scale_gompertz_shape(self):
        data = simulate_panel("gompertz", default_parameters("gompertz", 50), 100, seed=0)
        assert len(data) == 50 and all(u.n_obs == 100 for u in data)

    def test_polio_nonnegative_states(self, rng):
        model = PolioModel()
        ps = default_parameters("polio", 1)
        p = unit_parameters(ps, 0)
        cov = flat_covariates(months=120)
        x = model.rinit(p, 50, 1932.0, cov, rng)
        for k in range(120):
            x = model.rprocess(x, 1932 + k / 12, 1932 + (k + 1) / 12, p, cov, rng)
            assert np.all(x >= 0)
