"""Goodness of fit, residual checks, zero-inflation diagnostics and forecasting."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .model import (
    LINK_CLAMP,
    Dataset,
    ModelError,
    ZinbDistribution,
    build_design,
    compute_states,
    nb_logpmf,
)


class DiagnosticsError(ArithmeticError):
    """A diagnostic is numerically undefined for the given fit."""


def fitted_states(fit, dataset: Dataset):
    """State trajectory of ``fit`` replayed over ``dataset``."""
    X, U = build_design(fit.spec, dataset)
    return compute_states(fit.params_hat, X, U, dataset.y)


# ---------------------------------------------------------------------------
# Goodness of fit
# ---------------------------------------------------------------------------


@dataclass
class GofSummary:
    mse: float
    mad: float
    pearson_chi2: float
    deviance: float
    df: int
    aic: float
    bic: float
    loglik: float
    n_params: int
    n_obs: int

    def to_dict(self) -> dict:
        return asdict(self)


def information_criteria(loglik: float, n_params: int, n_obs: int) -> tuple[float, float]:
    """``(AIC, BIC)``; their difference is ``p (log N - 2)``."""
    return -2.0 * loglik + 2.0 * n_params, -2.0 * loglik + n_params * math.log(n_obs)


def saturated_loglik(y, k: float) -> float:
    """Per-branch supremum: zero counts get ``pi = 1``; positive counts NB with ``lambda = y``."""
    y = np.asarray(y)
    pos = y[y > 0]
    return float(np.sum(nb_logpmf(pos, pos.astype(float), k)))


def gof_from_moments(y, Lambda, Psi, loglik, n_params, k) -> GofSummary:
    y = np.asarray(y, dtype=float)
    Lambda = np.asarray(Lambda, dtype=float)
    Psi = np.asarray(Psi, dtype=float)
    if np.any(Psi < 1e-300):
        t = int(np.flatnonzero(Psi < 1e-300)[0]) + 1
        raise DiagnosticsError(f"conditional variance underflows at t = {t}")
    resid = y - Lambda
    n = y.size
    aic, bic = information_criteria(loglik, n_params, n)
    return GofSummary(
        mse=float(np.mean(resid**2)), mad=float(np.mean(np.abs(resid))),
        pearson_chi2=float(np.sum(resid**2 / Psi)),
        deviance=float(2.0 * (saturated_loglik(y.astype(np.int64), k) - loglik)),
        df=n - n_params, aic=aic, bic=bic, loglik=float(loglik), n_params=int(n_params), n_obs=n,
    )


def gof_summary(fit, dataset: Dataset) -> GofSummary:
    st = fitted_states(fit, dataset)
    return gof_from_moments(dataset.y, st.Lambda, st.Psi, fit.loglik, fit.n_params, fit.params_hat.k)


# ---------------------------------------------------------------------------
# Residuals
# ---------------------------------------------------------------------------


def _cdf_bounds(y, lam, pi, k):
    y = np.asarray(y)
    p = k / (k + np.asarray(lam, dtype=float))
    pi = np.asarray(pi, dtype=float)
    upper = pi + (1.0 - pi) * stats.nbinom.cdf(y, k, p)
    lower = np.where(y > 0, pi + (1.0 - pi) * stats.nbinom.cdf(y - 1, k, p), 0.0)
    return lower, upper


def quantile_residuals(y, lam, pi, k, seed=None, randomize: bool = True) -> np.ndarray:
    """Randomized quantile residuals ``Phi^-1(u_t)`` with ``u_t`` uniform on ``(F(y_t - 1), F(y_t)]``.

    With ``randomize=False`` the interval midpoint is used and ``seed`` is
    ignored.
    """
    lower, upper = _cdf_bounds(y, lam, pi, k)
    width = upper - lower
    if np.any(width < 1e-14):
        t = int(np.flatnonzero(width < 1e-14)[0]) + 1
        raise DiagnosticsError(f"predictive cdf interval is degenerate at t = {t}")
    if randomize:
        u = lower + np.random.default_rng(seed).random(lower.size) * width
    else:
        u = lower + 0.5 * width
    return stats.norm.ppf(np.clip(u, 1e-300, 1.0 - 1e-16))


def randomized_quantile_residuals(fit, dataset: Dataset, seed=None, randomize: bool = True) -> np.ndarray:
    st = fitted_states(fit, dataset)
    return quantile_residuals(dataset.y, st.lam, st.pi, fit.params_hat.k, seed, randomize)


def pearson_residuals(fit, dataset: Dataset) -> np.ndarray:
    st = fitted_states(fit, dataset)
    return (dataset.y - st.Lambda) / np.sqrt(st.Psi)


# ---------------------------------------------------------------------------
# Autocorrelation
# ---------------------------------------------------------------------------


def acf_pacf(series, max_lag: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample ACF for lags ``0..max_lag`` and PACF via Durbin-Levinson.

    ``pacf[0]`` is 1 by convention.
    """
    x = np.asarray(series, dtype=float)
    n = x.size
    if max_lag < 1 or n <= max_lag + 1:
        raise ModelError(f"series of length {n} is too short for max_lag = {max_lag}")
    d = x - x.mean()
    c0 = float(d @ d)
    if c0 <= 0.0:
        raise ModelError("autocorrelation of a constant series is undefined")
    acf = np.array([1.0] + [float(d[h:] @ d[:-h]) / c0 for h in range(1, max_lag + 1)])
    return acf, durbin_levinson(acf)


def durbin_levinson(acf) -> np.ndarray:
    rho = np.asarray(acf, dtype=float)
    L = rho.size - 1
    pacf = np.ones(L + 1)
    phi = np.zeros(0)
    v = 1.0
    for h in range(1, L + 1):
        a = (rho[h] - phi @ rho[h - 1 : 0 : -1]) / v if h > 1 else rho[1]
        phi = np.append(phi - a * phi[::-1], a)
        v *= 1.0 - a * a
        pacf[h] = a
        if v <= 0:
            pacf[h + 1 :] = np.nan
            break
    return pacf


def ljung_box_from_acf(acf, n: int, max_lag: int, fitted_df: int = 0) -> tuple[float, float]:
    rho = np.asarray(acf, dtype=float)[1 : max_lag + 1]
    h = np.arange(1, max_lag + 1)
    q = float(n * (n + 2) * np.sum(rho**2 / (n - h)))
    df = max(max_lag - fitted_df, 1)
    return q, float(stats.chi2.sf(q, df))


def ljung_box(residuals, max_lag: int = 10, fitted_df: int = 0) -> tuple[float, float]:
    """Box-Ljung portmanteau statistic with ``max_lag - fitted_df`` (at least 1) degrees of freedom."""
    acf, _ = acf_pacf(residuals, max_lag)
    return ljung_box_from_acf(acf, len(residuals), max_lag, fitted_df)


# ---------------------------------------------------------------------------
# Zero inflation
# ---------------------------------------------------------------------------


def excess_zero_from_aggregates(n_zeros: float, nb_zero_sum: float, n_obs: int) -> float:
    return (n_zeros - nb_zero_sum) / n_obs


def excess_zero_probability(fit, dataset: Dataset) -> float:
    """Average share of observed zeros not accounted for by the fitted NB component.

    The NB zero probabilities are summed over the observed zeros only, so each
    term is at most one and the result lies in ``[0, #zeros / N]``.
    """
    st = fitted_states(fit, dataset)
    k = fit.params_hat.k
    z = dataset.y == 0
    nb0 = np.exp(k * (math.log(k) - np.log(k + st.lam[z])))
    return excess_zero_from_aggregates(int(z.sum()), float(nb0.sum()), dataset.n)


def classification_rates(y, Lambda, thresholds) -> list[dict]:
    """Sensitivity/specificity of the rule "predict zero iff Lambda_t < threshold".

    A rate with an empty reference class is reported as ``None``.
    """
    y = np.asarray(y)
    Lambda = np.asarray(Lambda, dtype=float)
    zero = y == 0
    rows = []
    for c in thresholds:
        if not c > 0:
            raise ModelError(f"thresholds must be positive, got {c}")
        pred0 = Lambda < c
        sens = float(np.mean(pred0[zero])) if zero.any() else None
        spec = float(np.mean(~pred0[~zero])) if (~zero).any() else None
        rows.append({"threshold": float(c), "sensitivity": sens, "specificity": spec})
    return rows


def zero_classification_table(fit, dataset: Dataset, thresholds=(0.4, 0.5, 0.6)) -> list[dict]:
    return classification_rates(dataset.y, fitted_states(fit, dataset).Lambda, thresholds)


# ---------------------------------------------------------------------------
# Forecasting
# ---------------------------------------------------------------------------


@dataclass
class Forecast:
    Lambda: float
    lam: float
    pi: float
    distribution: ZinbDistribution


def _next_state(coef_ar, coef_ma, S, e):
    n = e.size
    s = 0.0
    for i, c in enumerate(coef_ar):
        if n - 1 - i >= 0:
            s += c * (S[n - 1 - i] + e[n - 1 - i])
    for j, c in enumerate(coef_ma):
        if n - 1 - j >= 0:
            s += c * e[n - 1 - j]
    return s


def one_step_forecast(fit, dataset: Dataset, x_next, u_next=None) -> Forecast:
    """Predictive distribution of ``y_{N+1}`` given the observed series.

    ``x_next`` and ``u_next`` are the next rows of the two design matrices.
    """
    p = fit.params_hat
    x_next = np.asarray(x_next, dtype=float).ravel()
    u_next = np.zeros(0) if u_next is None else np.asarray(u_next, dtype=float).ravel()
    if x_next.size != p.beta.size or u_next.size != p.delta.size:
        raise ModelError(
            f"next covariates have widths ({x_next.size}, {u_next.size}), expected ({p.beta.size}, {p.delta.size})"
        )
    st = fitted_states(fit, dataset)
    w = float(x_next @ p.beta) + _next_state(p.phi, p.theta, st.Z, st.e)
    lam = math.exp(min(max(w, -LINK_CLAMP), LINK_CLAMP))
    if p.zero_inflated:
        m = float(u_next @ p.delta) + _next_state(p.alpha, p.gamma, st.V, st.e)
        pi = 1.0 / (1.0 + math.exp(-min(max(m, -LINK_CLAMP), LINK_CLAMP)))
    else:
        pi = 0.0
    return Forecast(Lambda=lam * (1.0 - pi), lam=lam, pi=pi, distribution=ZinbDistribution(lam, pi, p.k))
