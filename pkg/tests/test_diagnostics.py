import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from zinbarma.diagnostics import (
    DiagnosticsError,
    acf_pacf,
    classification_rates,
    excess_zero_from_aggregates,
    excess_zero_probability,
    gof_from_moments,
    gof_summary,
    information_criteria,
    ljung_box,
    ljung_box_from_acf,
    one_step_forecast,
    quantile_residuals,
    randomized_quantile_residuals,
    saturated_loglik,
    zero_classification_table,
)
from zinbarma.estimation import fit_em
from zinbarma.model import (
    CovariateRecipe as R,
    Dataset,
    ModelError,
    ModelSpec,
    ParameterSet,
    build_design,
    compute_states,
    zinb_pmf,
)
from zinbarma.simulation import simulate_dataset


def fake_fit(spec, params, loglik=0.0):
    # diagnostics only need the spec and a parameter set
    return SimpleNamespace(spec=spec, params_hat=params, loglik=loglik, n_params=spec.layout().size)


@pytest.fixture(scope="module")
def m2_data(model2):
    spec, truth = model2
    return simulate_dataset(spec, truth, 3000, seed=17)


# -- goodness of fit -------------------------------------------------------------


def test_perfect_fit_has_zero_errors():
    y = np.array([0, 3, 1, 7])
    g = gof_from_moments(y, y.astype(float), np.ones(4), -10.0, 2, 2.0)
    assert g.mse == g.mad == g.pearson_chi2 == 0.0
    assert g.df == 2


def test_bic_minus_aic_reference_value():
    aic, bic = information_criteria(-230.39235, 10, 149)
    assert bic - aic == pytest.approx(30.039, abs=1e-3)
    assert bic - aic == pytest.approx(510.8241 - 480.7847, abs=1e-3)
    assert aic == pytest.approx(480.7847, abs=1e-3)


def test_pearson_chi2_hand_sum():
    y = np.array([0, 2, 5])
    Lam = np.array([0.5, 1.5, 3.0])
    Psi = np.array([1.0, 2.0, 4.0])
    g = gof_from_moments(y, Lam, Psi, -5.0, 1, 1.0)
    assert g.pearson_chi2 == pytest.approx(0.25 / 1 + 0.25 / 2 + 4.0 / 4)
    assert g.mse == pytest.approx((0.25 + 0.25 + 4.0) / 3)
    assert g.mad == pytest.approx((0.5 + 0.5 + 2.0) / 3)


def test_psi_underflow_is_reported():
    with pytest.raises(DiagnosticsError, match="t = 2"):
        gof_from_moments([1, 0], [1.0, 0.0], [1.0, 0.0], -1.0, 1, 1.0)


def test_saturated_loglik_oracle():
    y = np.array([0, 0, 1, 4, 9])
    k = 1.7
    oracle = sum(stats.nbinom.logpmf(v, k, k / (k + v)) for v in y if v > 0)
    assert saturated_loglik(y, k) == pytest.approx(oracle, rel=1e-12)
    assert saturated_loglik(np.zeros(5, dtype=int), k) == 0.0


def test_gof_summary_on_fit(model2, m2_data):
    spec, truth = model2
    d = Dataset(y=m2_data.y[:300])
    res = fit_em(d, spec, truth)
    g = gof_summary(res, d)
    assert g.aic == -2 * g.loglik + 2 * g.n_params
    assert g.bic == -2 * g.loglik + g.n_params * math.log(300)
    assert g.df == 300 - g.n_params
    assert g.deviance >= 0
    assert set(g.to_dict()) >= {"mse", "mad", "pearson_chi2", "deviance", "aic", "bic"}


# -- quantile residuals ----------------------------------------------------------


def test_quantile_residuals_normal_under_true_model(model2, m2_data):
    spec, truth = model2
    r = randomized_quantile_residuals(fake_fit(spec, truth), m2_data, seed=1)
    assert stats.kstest(r, "norm").pvalue > 0.01
    np.testing.assert_array_equal(r, randomized_quantile_residuals(fake_fit(spec, truth), m2_data, seed=1))


def test_midpoint_residuals_ignore_seed():
    y = np.array([0, 1, 4])
    a = quantile_residuals(y, [1.0, 2.0, 3.0], [0.2, 0.2, 0.2], 2.0, seed=1, randomize=False)
    b = quantile_residuals(y, [1.0, 2.0, 3.0], [0.2, 0.2, 0.2], 2.0, seed=99, randomize=False)
    np.testing.assert_array_equal(a, b)
    # midpoint of (0, F(0)] for the zero observation
    f0 = 0.2 + 0.8 * (2.0 / 3.0) ** 2
    assert a[0] == pytest.approx(stats.norm.ppf(f0 / 2))


def test_randomized_residual_lies_in_cdf_interval():
    y = np.array([0, 3])
    lam, pi, k = np.array([1.5, 1.5]), np.array([0.3, 0.3]), 2.0
    u = stats.norm.cdf(quantile_residuals(y, lam, pi, k, seed=0))
    p = k / (k + 1.5)
    assert 0 < u[0] <= 0.3 + 0.7 * p**k
    assert 0.3 + 0.7 * stats.nbinom.cdf(2, k, p) < u[1] <= 0.3 + 0.7 * stats.nbinom.cdf(3, k, p)


def test_degenerate_interval_raises():
    # a positive count under pi = 1 has zero predictive mass
    with pytest.raises(DiagnosticsError, match="t = 2"):
        quantile_residuals([0, 3], [1.0, 1.0], [1.0, 1.0], 2.0, seed=0)


def test_ignoring_inflation_is_rejected():
    rng = np.random.default_rng(4)
    n = 2000
    y = np.where(rng.random(n) < 0.5, 0, rng.negative_binomial(2.0, 2.0 / 5.0, n))
    # NB fit with the right mean for the positive part but no zero state
    r = quantile_residuals(y, np.full(n, 3.0), np.zeros(n), 2.0, seed=0)
    assert stats.kstest(r, "norm").pvalue < 0.01


# -- autocorrelation -------------------------------------------------------------


def _ar1(n, phi, seed):
    rng = np.random.default_rng(seed)
    x = np.zeros(n)
    eps = rng.standard_normal(n)
    for t in range(1, n):
        x[t] = phi * x[t - 1] + eps[t]
    return x


def test_acf_lag_zero_is_one_and_ar1_recovered():
    acf, pacf = acf_pacf(_ar1(5000, 0.8, 0), 10)
    assert acf[0] == 1.0
    assert acf[1] == pytest.approx(0.8, abs=0.05)
    assert pacf[1] == pytest.approx(acf[1])
    assert np.all(np.abs(pacf[2:]) < 0.06)


def test_white_noise_within_bartlett_bands():
    x = np.random.default_rng(2).standard_normal(4000)
    acf, _ = acf_pacf(x, 100)
    inside = np.mean(np.abs(acf[1:]) < 1.96 / math.sqrt(4000))
    assert inside >= 0.88


def test_acf_matches_statsmodels():
    tsa = pytest.importorskip("statsmodels.tsa.stattools")
    x = _ar1(400, 0.5, 3)
    acf, pacf = acf_pacf(x, 12)
    np.testing.assert_allclose(acf, tsa.acf(x, nlags=12, fft=False), atol=1e-12)
    np.testing.assert_allclose(pacf, tsa.pacf(x, nlags=12, method="ldb"), atol=1e-10)


def test_acf_errors():
    with pytest.raises(ModelError, match="constant"):
        acf_pacf(np.ones(20), 5)
    with pytest.raises(ModelError, match="too short"):
        acf_pacf(np.arange(5.0), 5)


def test_ljung_box_zero_autocorrelation():
    acf = np.zeros(11)
    acf[0] = 1.0
    q, p = ljung_box_from_acf(acf, 100, 10)
    assert q == 0.0 and p == 1.0


def test_ljung_box_hand_formula_and_df_floor():
    x = _ar1(60, 0.3, 5)
    acf, _ = acf_pacf(x, 4)
    q_hand = 60 * 62 * sum(acf[h] ** 2 / (60 - h) for h in range(1, 5))
    q, p = ljung_box(x, 4, fitted_df=1)
    assert q == pytest.approx(q_hand)
    assert p == pytest.approx(stats.chi2.sf(q_hand, 3))
    assert ljung_box(x, 4, fitted_df=9)[1] == pytest.approx(stats.chi2.sf(q_hand, 1))


def test_ljung_box_size_on_white_noise():
    rng = np.random.default_rng(8)
    pv = np.array([ljung_box(rng.standard_normal(300), 10)[1] for _ in range(400)])
    assert 0.91 <= np.mean(pv > 0.05) <= 0.98


def test_ljung_box_on_true_model_residuals(model2, m2_data):
    spec, truth = model2
    r = randomized_quantile_residuals(fake_fit(spec, truth), m2_data, seed=0)
    assert ljung_box(r, 10, fitted_df=spec.p1 + spec.q1)[1] > 0.01


# -- zero inflation --------------------------------------------------------------


def test_excess_zero_reference_aggregates():
    assert excess_zero_from_aggregates(66, 0.2833 * 149, 149) == pytest.approx(0.1597, abs=1e-3)
    assert 66 / 149 == pytest.approx(0.4429, abs=1e-4)
    assert excess_zero_from_aggregates(4, 1.5, 10) == pytest.approx(0.25)


def test_excess_zero_no_zeros_is_zero():
    spec = ModelSpec(w_covariates=[R("intercept")], m_covariates=[R("intercept")])
    f = fake_fit(spec, ParameterSet(beta=[1.0], delta=[0.0], k=2.0))
    assert excess_zero_probability(f, Dataset(y=np.arange(1, 11))) == 0.0


def test_excess_zero_matches_direct_sum():
    spec = ModelSpec(w_covariates=[R("intercept")], m_covariates=[R("intercept")])
    y = np.array([0, 0, 1, 2, 0, 5, 3, 0, 1, 0])
    f = fake_fit(spec, ParameterSet(beta=[math.log(2.0)], delta=[0.0], k=2.0))
    assert excess_zero_probability(f, Dataset(y=y)) == pytest.approx((5 - 5 * 0.25) / 10)


@given(st.lists(st.integers(0, 6), min_size=3, max_size=30), st.floats(-6.0, 4.0), st.floats(0.2, 20.0))
def test_excess_zero_bounded_by_zero_share(y, b0, k):
    spec = ModelSpec(w_covariates=[R("intercept")], m_covariates=[R("intercept")])
    y = np.array(y)
    p0 = excess_zero_probability(fake_fit(spec, ParameterSet(beta=[b0], delta=[0.0], k=k)), Dataset(y=y))
    assert 0.0 <= p0 <= np.mean(y == 0) + 1e-15


def test_classification_hand_vector():
    (row,) = classification_rates([0, 0, 3, 5], [0.2, 0.7, 2.1, 0.3], [0.5])
    assert row["sensitivity"] == 0.5 and row["specificity"] == 0.5


def test_classification_all_zero_predictions():
    (row,) = classification_rates([0, 1, 0, 2], np.zeros(4), [0.5])
    assert row["sensitivity"] == 1.0 and row["specificity"] == 0.0


def test_classification_undefined_rates_absent():
    (row,) = classification_rates([1, 2, 3], [0.1, 0.2, 4.0], [0.5])
    assert row["sensitivity"] is None and row["specificity"] == pytest.approx(1 / 3)
    with pytest.raises(ModelError):
        classification_rates([0, 1], [0.1, 0.2], [0.0])


@given(st.lists(st.tuples(st.integers(0, 4), st.floats(0.0, 3.0)), min_size=2, max_size=40))
def test_classification_monotone_in_threshold(rows):
    y = np.array([r[0] for r in rows])
    lam = np.array([r[1] for r in rows])
    table = classification_rates(y, lam, [0.4, 0.5, 0.6, 1.0, 2.0])
    sens = [r["sensitivity"] for r in table]
    spec = [r["specificity"] for r in table]
    if sens[0] is not None:
        assert all(a <= b for a, b in zip(sens, sens[1:]))
    if spec[0] is not None:
        assert all(a >= b for a, b in zip(spec, spec[1:]))


def test_zero_classification_table_uses_fitted_means(model2, m2_data):
    spec, truth = model2
    tab = zero_classification_table(fake_fit(spec, truth), m2_data)
    assert [r["threshold"] for r in tab] == [0.4, 0.5, 0.6]


# -- forecasting -----------------------------------------------------------------


def test_forecast_without_arma_is_closed_form():
    spec = ModelSpec(w_covariates=[R("intercept"), R("trend")], m_covariates=[R("intercept")])
    p = ParameterSet(beta=[0.5, 0.01], delta=[-0.7], k=3.0)
    d = Dataset(y=np.array([0, 2, 1, 4, 0, 3]))
    fc = one_step_forecast(fake_fit(spec, p), d, [1.0, 7.0], [1.0])
    expected = math.exp(0.5 + 0.07) * (1 - 1 / (1 + math.exp(0.7)))
    assert fc.Lambda == pytest.approx(expected, rel=1e-14)
    assert float(np.sum(zinb_pmf(np.arange(400), fc.distribution))) == pytest.approx(1.0, abs=1e-10)


def test_forecast_ma1_unrolls_recursion():
    spec = ModelSpec(w_covariates=[R("intercept")], m_covariates=[R("intercept")], q1=1)
    p = ParameterSet(beta=[0.8], theta=[0.4], delta=[-1.0], k=2.0)
    d = simulate_dataset(spec, p, 50, seed=3)
    X, U = build_design(spec, d)
    e_last = compute_states(p, X, U, d.y).e[-1]
    fc = one_step_forecast(fake_fit(spec, p), d, [1.0], [1.0])
    assert fc.lam == pytest.approx(math.exp(0.8 + 0.4 * e_last), rel=1e-13)
    assert fc.pi == pytest.approx(1 / (1 + math.exp(1.0)))


def test_forecast_matches_extended_state_replay(model2):
    # appending any y_{N+1} and replaying gives the same W_{N+1}, M_{N+1}
    spec, truth = model2
    d = simulate_dataset(spec, truth, 80, seed=1)
    X, U = build_design(spec, Dataset(y=np.append(d.y, 0)))
    st_ext = compute_states(truth, X, U, np.append(d.y, 0))
    fc = one_step_forecast(fake_fit(spec, truth), d, X[-1], U[-1])
    assert fc.lam == pytest.approx(st_ext.lam[-1], rel=1e-13)
    assert fc.pi == pytest.approx(st_ext.pi[-1], rel=1e-13)


def test_forecast_width_mismatch():
    spec = ModelSpec(w_covariates=[R("intercept")], m_covariates=[R("intercept")])
    f = fake_fit(spec, ParameterSet(beta=[0.0], delta=[0.0], k=1.0))
    with pytest.raises(ModelError, match="widths"):
        one_step_forecast(f, Dataset(y=np.array([1, 0, 2])), [1.0, 2.0], [1.0])
