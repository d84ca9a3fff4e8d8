"""Initialization, Newton-Raphson and EM fitting, standard errors and tests."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .likelihood import Evaluator, LikelihoodError
from .model import (
    Dataset,
    EstimatorOptions,
    ModelError,
    ModelSpec,
    ParameterSet,
    build_design,
    check_params_roots,
)

RIDGE_START = 1e-6
RIDGE_FACTOR = 10.0
RIDGE_CAP = 1e2
MAX_HALVINGS = 40
DECREMENT_PATIENCE = 3


class EstimationError(RuntimeError):
    """The optimizer could not produce a usable estimate."""


class EMMonotonicityError(EstimationError):
    """The observed partial likelihood decreased across an EM iteration."""


@dataclass
class FitResult:
    params_hat: ParameterSet
    names: list[str]
    estimate: np.ndarray
    se: np.ndarray
    cov: np.ndarray
    loglik: float
    n_obs: int
    n_params: int
    method: str
    converged: bool
    iterations: int
    trace: list[float]
    spec: ModelSpec
    warnings: list[str] = field(default_factory=list)
    newton_decrement: float = math.nan
    info_pd: bool = False
    info_source: str = "observed"
    info_condition: float = math.nan

    def summary_rows(self) -> list[dict]:
        se = self.se
        z = np.where(se > 0, self.estimate / np.where(se > 0, se, 1.0), np.nan)
        p = 2.0 * stats.norm.sf(np.abs(z))
        return [
            {"parameter": n, "estimate": float(e), "std_error": float(s), "z": float(zz), "p_value": float(pp)}
            for n, e, s, zz, pp in zip(self.names, self.estimate, se, z, p)
        ]


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def _intercept_column(recipes) -> int | None:
    col = 0
    for r in recipes:
        if r.kind == "intercept":
            return col
        col += r.width
    return None


def initialize(dataset: Dataset, spec: ModelSpec) -> ParameterSet:
    """Moment-based starting values; all ARMA coefficients start at zero."""
    X, U = build_design(spec, dataset)
    y = dataset.y
    n_min = spec.n1 + spec.n2 + spec.max_lag
    if dataset.n <= n_min:
        raise EstimationError(f"series of length {dataset.n} is too short for {n_min} regression/lag terms")
    pos = y[y > 0].astype(float)
    if pos.size == 0:
        raise EstimationError("cannot initialize NB component: series has no positive counts")
    beta, *_ = np.linalg.lstsq(X, np.log(np.maximum(y, 0.5)), rcond=None)
    m = pos.mean()
    s2 = pos.var(ddof=1) if pos.size > 1 else 0.0
    k = m * m / max(s2 - m, 0.1)
    delta = np.zeros(spec.n2)
    if spec.zero_inflated:
        lam = np.exp(np.clip(X @ beta, -30, 30))
        nb_zero = float(np.mean((k / (k + lam)) ** k))
        excess = float(np.clip(dataset.zero_fraction - nb_zero, 0.01, 0.99))
        ic = _intercept_column(spec.m_covariates)
        if ic is not None:
            delta[ic] = _logit(excess)
    return ParameterSet(
        beta=beta, phi=np.zeros(spec.p1), theta=np.zeros(spec.q1),
        delta=delta, alpha=np.zeros(spec.p2), gamma=np.zeros(spec.q2), k=k,
    )


# ---------------------------------------------------------------------------
# Newton-Raphson engine
# ---------------------------------------------------------------------------


def _ridge_solve(info: np.ndarray, g: np.ndarray):
    """Solve ``(info + tau I) step = g`` with the smallest tau giving a Cholesky factor.

    tau is scaled by the mean absolute diagonal of ``info``. Returns the step
    and the ridge used (0.0 when ``info`` itself is positive definite).
    """
    scale = max(1.0, float(np.mean(np.abs(np.diag(info)))))
    eye = np.eye(info.shape[0])
    tau = 0.0
    while True:
        try:
            L = np.linalg.cholesky(info + tau * scale * eye)
            step = np.linalg.solve(L.T, np.linalg.solve(L, g))
            return step, tau
        except np.linalg.LinAlgError:
            tau = RIDGE_START if tau == 0.0 else tau * RIDGE_FACTOR
            if tau > RIDGE_CAP * (1 + 1e-9):
                raise EstimationError("information matrix not positive definite after maximal ridge")


@dataclass
class _NewtonOutcome:
    x: np.ndarray
    f: float
    g: np.ndarray
    iterations: int
    trace: list[float]
    stopped: bool
    decrement: float


def _newton_maximize(fval, fgrad, fhess, x0, max_iter, step_tol, f_tol, grad_tol=None,
                     decrement_tol=None) -> _NewtonOutcome:
    """Damped Newton ascent with step halving and ridge fallback.

    Steps are accepted only if the objective does not decrease. Stops on a
    small step, a small objective change, a small gradient (when
    ``grad_tol`` is given), a Newton decrement ``g' H^-1 g`` below
    ``decrement_tol`` on ``DECREMENT_PATIENCE`` iterations (not necessarily
    consecutive), or the iteration cap. On a smooth surface the third small
    decrement comes with quadratic precision; on a rough one the decrement
    dips below the tolerance intermittently and the other rules never fire.
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = fgrad(x)
    trace = [f]
    decrement = math.inf
    small = 0
    for it in range(1, max_iter + 1):
        if grad_tol is not None and np.max(np.abs(g)) < grad_tol:
            return _NewtonOutcome(x, f, g, it - 1, trace, True, 0.0)
        info = -fhess(x)
        step, _ = _ridge_solve(info, g)
        decrement = float(g @ step)
        small += decrement_tol is not None and decrement < decrement_tol
        final = small >= DECREMENT_PATIENCE
        big = np.max(np.abs(step))
        if big > 10.0:
            step *= 10.0 / big
        t = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS):
            xn = x + t * step
            try:
                fn = fval(xn)
            except (LikelihoodError, ModelError):
                fn = -math.inf
            if fn >= f:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            return _NewtonOutcome(x, f, g, it, trace, final or np.max(np.abs(step)) < 1e-4, decrement)
        df = fn - f
        dx = np.max(np.abs(t * step))
        x = xn
        f, g = fgrad(x)
        trace.append(f)
        if final or dx < step_tol or abs(df) < f_tol:
            return _NewtonOutcome(x, f, g, it, trace, True, decrement)
    return _NewtonOutcome(x, f, g, max_iter, trace, False, decrement)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


def _setup(dataset: Dataset, spec: ModelSpec, init: ParameterSet | None):
    X, U = build_design(spec, dataset)
    layout = spec.layout()
    ev = Evaluator(layout, X, U, dataset.y)
    init = init if init is not None else initialize(dataset, spec)
    x0 = layout.pack(init, log_k=True)
    try:
        ev.loglik(x0, log_k=True)
    except LikelihoodError as exc:
        raise EstimationError(f"non-finite likelihood at the initial values: {exc}") from exc
    return ev, x0


def _finish(ev: Evaluator, x, spec, method, converged, iterations, trace, warn) -> FitResult:
    layout = ev.layout
    params = layout.unpack(x, log_k=True)
    est = layout.pack(params)
    loglik, g = ev.loglik_grad(est)
    info = -ev.hessian(est)
    info_pd = _is_pd(info)
    info_source = "observed"
    if not info_pd:
        opg = ev.opg_information(est)
        if _is_pd(opg):
            info, info_source = opg, "opg"
            warn.append("observed information is not positive definite at the estimate; "
                        "standard errors use the outer product of score contributions")
        else:
            warn.append("no positive definite information estimate; standard errors unavailable")
    cov = np.full(info.shape, np.nan)
    se = np.full(est.size, np.nan)
    if info_pd or info_source == "opg":
        cov = np.linalg.inv(info)
        cov = 0.5 * (cov + cov.T)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    cond = float(np.linalg.cond(info))
    try:
        decrement = float(g @ np.linalg.solve(info, g))
    except np.linalg.LinAlgError:
        decrement = math.nan
    bad = check_params_roots(params)
    if bad:
        warn.append("root condition violated at the estimate: " + ", ".join(bad))
    warn.append("standard error of k is heuristic: asymptotic theory covers nu with k known")
    return FitResult(
        params_hat=params, names=layout.names(), estimate=est, se=se, cov=cov, loglik=float(loglik),
        n_obs=ev.n, n_params=layout.size, method=method,
        converged=bool(converged and np.all(np.isfinite(se))),
        iterations=iterations, trace=[float(v) for v in trace], spec=spec, warnings=warn,
        newton_decrement=decrement, info_pd=info_pd, info_source=info_source, info_condition=cond,
    )


def _is_pd(a) -> bool:
    try:
        np.linalg.cholesky(a)
        return True
    except np.linalg.LinAlgError:
        return False


def fit_newton_raphson(dataset: Dataset, spec: ModelSpec, init: ParameterSet | None = None,
                       opts: EstimatorOptions | None = None) -> FitResult:
    """Maximize the partial log-likelihood by damped Newton-Raphson on ``(nu, log k)``."""
    opts = opts or spec.options
    ev, x0 = _setup(dataset, spec, init)
    out = _newton_maximize(
        lambda v: ev.loglik(v, log_k=True),
        lambda v: ev.loglik_grad(v, log_k=True),
        lambda v: ev.hessian(v, log_k=True),
        x0, opts.max_iter, opts.step_tol, opts.loglik_tol, decrement_tol=opts.decrement_tol,
    )
    warn = []
    converged = out.stopped
    if not converged:
        warn.append(f"Newton-Raphson did not converge (iterations={out.iterations}, decrement={out.decrement:.3g})")
    return _finish(ev, out.x, spec, "nr", converged, out.iterations, out.trace, warn)


def e_step(params: ParameterSet, X, U, y) -> np.ndarray:
    """Posterior probabilities that each observation came from the zero state."""
    from .likelihood import _evaluator

    ev = _evaluator(params, X, U, y, None)
    return ev.posterior_zero(ev.layout.pack(params))


def _pl_decrement(ev: Evaluator, x) -> float:
    _, g = ev.loglik_grad(x, log_k=True)
    try:
        step, _ = _ridge_solve(-ev.hessian(x, log_k=True), g)
    except EstimationError:
        return math.inf
    return float(g @ step)


def fit_em(dataset: Dataset, spec: ModelSpec, init: ParameterSet | None = None,
           opts: EstimatorOptions | None = None) -> FitResult:
    """EM with a Newton-Raphson M-step on the expected complete-data partial likelihood.

    All parameters, including ``k``, are updated jointly in each M-step. The
    observed partial log-likelihood is recorded per outer iteration; a decrease
    beyond 1e-8 raises :class:`EMMonotonicityError`.
    """
    opts = opts or spec.options
    ev, x = _setup(dataset, spec, init)
    pl = ev.loglik(x, log_k=True)
    trace = [pl]
    converged = False
    it = 0
    for it in range(1, opts.max_em_iter + 1):
        s_hat = ev.posterior_zero(x, log_k=True)
        inner = _newton_maximize(
            lambda v: ev.q_value(v, s_hat, log_k=True),
            lambda v: ev.q_grad(v, s_hat, log_k=True),
            lambda v: ev.hessian(v, log_k=True, s_hat=s_hat),
            x, opts.max_inner_iter, opts.step_tol, 0.0, grad_tol=opts.inner_grad_tol,
            decrement_tol=opts.decrement_tol,
        )
        pl_new = ev.loglik(inner.x, log_k=True)
        if pl_new < pl - 1e-8:
            raise EMMonotonicityError(f"observed log-likelihood decreased from {pl!r} to {pl_new!r} at iteration {it}")
        trace.append(pl_new)
        change = abs(pl_new - pl)
        x, pl = inner.x, pl_new
        if change <= opts.em_rel_tol * max(1.0, abs(pl)):
            converged = True
            break
        if change < opts.em_decrement_tol and _pl_decrement(ev, x) < opts.em_decrement_tol:
            converged = True
            break
    warn = [] if converged else [f"EM reached the iteration cap ({opts.max_em_iter})"]
    return _finish(ev, x, spec, "em", converged, it, trace, warn)


def fit(dataset: Dataset, spec: ModelSpec, method: str | None = None, init: ParameterSet | None = None,
        opts: EstimatorOptions | None = None) -> FitResult:
    method = method or (opts or spec.options).method
    if method == "nr":
        return fit_newton_raphson(dataset, spec, init, opts)
    if method == "em":
        return fit_em(dataset, spec, init, opts)
    raise ModelError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def covariance_from_information(info) -> np.ndarray:
    info = np.asarray(info, dtype=float)
    cond = np.linalg.cond(info)
    if not np.isfinite(cond) or cond > 1e14:
        raise EstimationError(f"information matrix is not invertible (condition number {cond:.3g})")
    cov = np.linalg.inv(info)
    return 0.5 * (cov + cov.T)


def confidence_intervals(estimate, se, level: float = 0.95) -> np.ndarray:
    zc = stats.norm.ppf(0.5 + level / 2.0) if level != 0.95 else 1.96
    est = np.asarray(estimate, dtype=float)
    se = np.asarray(se, dtype=float)
    return np.column_stack([est - zc * se, est + zc * se])


def standard_errors(fit: FitResult) -> tuple[np.ndarray, np.ndarray]:
    """Standard errors and 95% Wald intervals from the inverse information stored on ``fit``."""
    if not np.all(np.isfinite(fit.cov)):
        raise EstimationError(
            f"information at the estimate is not invertible (condition number {fit.info_condition:.3g})")
    se = np.sqrt(np.clip(np.diag(fit.cov), 0.0, None))
    return se, confidence_intervals(fit.estimate, se)


def wald_test(fit: FitResult, C, zeta) -> tuple[float, float]:
    """Wald statistic for ``H0: C theta = zeta`` and its chi-square p-value."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
    m, p = C.shape
    if p != fit.estimate.size or zeta.size != m:
        raise ModelError(f"C must be m x {fit.estimate.size} and zeta of length m")
    if np.linalg.matrix_rank(C) < m:
        raise ModelError("restriction matrix C is rank deficient")
    d = C @ fit.estimate - zeta
    W = float(d @ np.linalg.solve(C @ fit.cov @ C.T, d))
    return W, float(stats.chi2.sf(W, m))


def likelihood_ratio_test(fit_small: FitResult, fit_big: FitResult) -> tuple[float, int, float]:
    """``L = 2 (loglik_big - loglik_small)`` against chi-square with the parameter-count difference."""
    df = fit_big.n_params - fit_small.n_params
    if df <= 0:
        raise ModelError("the larger model must have more parameters than the smaller one")
    diff = fit_big.loglik - fit_small.loglik
    if diff < -1e-6:
        raise EstimationError(
            f"larger model has lower log-likelihood by {-diff:.3g}; models not nested or fit not converged"
        )
    L = max(0.0, 2.0 * diff)
    return L, df, float(stats.chi2.sf(L, df))


def vuong_statistic(ll_a, ll_b) -> tuple[float, float]:
    """One-sided Vuong z for model a over model b from per-observation log-likelihoods."""
    m = np.asarray(ll_a, dtype=float) - np.asarray(ll_b, dtype=float)
    sd = m.std()
    if sd == 0:
        raise EstimationError("per-observation log-likelihood differences have zero spread")
    z = math.sqrt(m.size) * m.mean() / sd
    return float(z), float(stats.norm.sf(z))


def per_observation_loglik(fit: FitResult, dataset: Dataset) -> np.ndarray:
    X, U = build_design(fit.spec, dataset)
    ev = Evaluator(fit.spec.layout(), X, U, dataset.y)
    return ev.per_obs(fit.estimate)


def vuong_test(fit_zinb: FitResult, fit_nb: FitResult, dataset: Dataset) -> tuple[float, float]:
    """One-sided test that the zero-inflated fit is closer to the truth than the NB fit."""
    if fit_zinb.n_obs != dataset.n or fit_nb.n_obs != dataset.n:
        raise ModelError("both fits must be on the supplied dataset")
    return vuong_statistic(per_observation_loglik(fit_zinb, dataset), per_observation_loglik(fit_nb, dataset))
