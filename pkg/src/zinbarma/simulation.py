"""Simulation of ZINB-ARMA series and the Monte Carlo parameter-recovery study."""

from __future__ import annotations

import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .model import (
    LINK_CLAMP,
    PSI_FLOOR,
    Dataset,
    ModelError,
    ModelSpec,
    ParameterSet,
    RootConditionError,
    check_params_roots,
    design_matrix,
)

log = logging.getLogger(__name__)


def simulate_series(params: ParameterSet, X, U, seed, require_invertible_ma: bool = False) -> np.ndarray:
    """Draw a count series forward in time from the hierarchical mixture.

    Each step draws the zero-state indicator ``s_t ~ Bernoulli(pi_t)`` and a
    gamma frailty ``w_t ~ Gamma(k, rate=k)``; non-structural counts are
    ``Poisson(lambda_t * w_t)``. All three draws are made at every step so the
    stream layout does not depend on the outcomes.

    AR polynomials must satisfy the root condition. Non-invertible MA
    polynomials only warn unless ``require_invertible_ma``: a finite MA of
    unit-variance errors is stationary regardless.
    """
    bad_ar = check_params_roots(params, ma=False)
    if bad_ar:
        raise RootConditionError("AR root condition violated for " + ", ".join(bad_ar))
    bad_ma = [b for b in check_params_roots(params) if b.startswith(("theta", "gamma"))]
    if bad_ma:
        msg = "MA polynomial not invertible: " + ", ".join(bad_ma)
        if require_invertible_ma:
            raise RootConditionError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    if X.shape[1] != params.beta.size or U.shape[1] != params.delta.size or X.shape[0] != U.shape[0]:
        raise ModelError("design matrices do not match the parameter dimensions")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = X.shape[0]
    k = params.k
    phi, theta, alpha, gamma = params.phi, params.theta, params.alpha, params.gamma
    xb = X @ params.beta
    ud = U @ params.delta if params.zero_inflated else None
    Z = np.zeros(n)
    V = np.zeros(n)
    e = np.zeros(n)
    y = np.zeros(n, dtype=np.int64)
    C = LINK_CLAMP
    for t in range(n):
        z = 0.0
        for i in range(phi.size):
            if t - 1 - i < 0:
                break
            z += phi[i] * (Z[t - 1 - i] + e[t - 1 - i])
        for j in range(theta.size):
            if t - 1 - j < 0:
                break
            z += theta[j] * e[t - 1 - j]
        Z[t] = z
        lam = math.exp(min(max(xb[t] + z, -C), C))
        if ud is not None:
            v = 0.0
            for i in range(alpha.size):
                if t - 1 - i < 0:
                    break
                v += alpha[i] * (V[t - 1 - i] + e[t - 1 - i])
            for j in range(gamma.size):
                if t - 1 - j < 0:
                    break
                v += gamma[j] * e[t - 1 - j]
            V[t] = v
            pi = 1.0 / (1.0 + math.exp(-min(max(ud[t] + v, -C), C)))
        else:
            pi = 0.0
        u = rng.random()
        w = rng.gamma(k, 1.0 / k)
        count = rng.poisson(lam * w)
        y[t] = 0 if u < pi else count
        Lam = lam * (1.0 - pi)
        Psi = Lam * (1.0 + lam * pi + lam / k)
        e[t] = 0.0 if Psi < PSI_FLOOR else (y[t] - Lam) / math.sqrt(Psi)
    return y


def simulate_dataset(spec: ModelSpec, params: ParameterSet, n: int, seed, covariates=None) -> Dataset:
    """Simulate a :class:`Dataset` of length ``n`` from ``spec`` at ``params``.

    ``covariates`` supplies external columns; lagged-indicator recipes are
    not supported here because they depend on the series being drawn.
    """
    covariates = dict(covariates or {})
    for r in list(spec.w_covariates) + list(spec.m_covariates):
        if r.kind == "lagged_indicator":
            raise ModelError("cannot simulate from a model with lagged-indicator covariates")
    holder = Dataset(y=np.zeros(n, dtype=np.int64), covariates=covariates)
    X = design_matrix(spec.w_covariates, n, holder)
    U = design_matrix(spec.m_covariates, n, holder)
    y = simulate_series(params, X, U, seed)
    return Dataset(y=y, covariates=covariates)


# ---------------------------------------------------------------------------
# Monte Carlo study
# ---------------------------------------------------------------------------


@dataclass
class McStudyConfig:
    spec: ModelSpec
    true_params: ParameterSet
    sizes: tuple[int, ...] = (30, 100, 500)
    reps: int = 100
    estimator: str = "em"
    seed: int = 0
    init: str = "truth"
    max_failure_rate: float = 0.2

    def __post_init__(self):
        if self.reps < 1:
            raise ModelError("replication count must be at least 1")
        if self.estimator not in ("em", "nr", "both"):
            raise ModelError(f"estimator must be em, nr or both, got {self.estimator!r}")
        if self.init not in ("truth", "data"):
            raise ModelError(f"init must be 'truth' or 'data', got {self.init!r}")
        p = self.spec.layout().size
        for n in self.sizes:
            if n < p + 5:
                raise ModelError(f"sample size {n} is below parameter count + 5 = {p + 5}")
        self.spec.layout().check(self.true_params)


@dataclass
class McSummary:
    n: int
    method: str
    names: list[str]
    true: np.ndarray
    mean: np.ndarray
    se: np.ndarray | None
    abs_bias: np.ndarray
    ci_low: np.ndarray | None
    ci_high: np.ndarray | None
    estimates: np.ndarray
    std_errors: np.ndarray
    n_requested: int
    n_failed: int
    valid: bool
    nu_mask: np.ndarray = field(default=None)

    @property
    def n_used(self) -> int:
        return self.estimates.shape[0]

    @property
    def mean_abs_bias_nu(self) -> float:
        return float(np.mean(self.abs_bias[self.nu_mask]))

    def table(self) -> list[dict]:
        rows = []
        for i, name in enumerate(self.names):
            rows.append({
                "parameter": name,
                "true": float(self.true[i]),
                "est": float(self.mean[i]),
                "se": None if self.se is None else float(self.se[i]),
                "abs_bias": float(self.abs_bias[i]),
                "ci_low": None if self.ci_low is None else float(self.ci_low[i]),
                "ci_high": None if self.ci_high is None else float(self.ci_high[i]),
            })
        return rows


def summarize_estimates(estimates, true, names, n, method, std_errors=None, n_requested=None, n_failed=0,
                        max_failure_rate=0.2) -> McSummary:
    """Est. / S.E. / |Bias| / C.I. summary of a replicate-by-parameter matrix.

    S.E. is the Monte Carlo standard error of the mean estimate; it is absent
    (``None``) with a single replicate.
    """
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    true = np.asarray(true, dtype=float)
    r = est.shape[0]
    mean = est.mean(axis=0) if r else np.full(true.size, np.nan)
    if r >= 2:
        se = est.std(axis=0, ddof=1) / math.sqrt(r)
        lo, hi = mean - 1.96 * se, mean + 1.96 * se
    else:
        se = lo = hi = None
    n_requested = r + n_failed if n_requested is None else n_requested
    nu_mask = np.array([nm != "k" for nm in names])
    return McSummary(
        n=n, method=method, names=list(names), true=true, mean=mean, se=se,
        abs_bias=np.abs(mean - true), ci_low=lo, ci_high=hi, estimates=est,
        std_errors=np.empty((r, 0)) if std_errors is None else np.atleast_2d(np.asarray(std_errors, dtype=float)),
        n_requested=n_requested, n_failed=n_failed,
        valid=n_failed <= max_failure_rate * n_requested, nu_mask=nu_mask,
    )


def _replicate(args):
    from .estimation import EstimationError, fit, initialize

    spec, true_params, n, seed_seq, methods, init = args
    rng = np.random.default_rng(seed_seq)
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        data = simulate_dataset(spec, true_params, n, rng)
        for method in methods:
            try:
                start = true_params if init == "truth" else initialize(data, spec)
                res = fit(data, spec, method=method, init=start)
                ok = res.converged and np.all(np.isfinite(res.se))
                out[method] = (res.estimate, res.se) if ok else None
            except (EstimationError, ArithmeticError, np.linalg.LinAlgError, ModelError):
                out[method] = None
    return out


def _n_workers() -> int:
    try:
        return max(1, int(os.environ.get("ZINBARMA_THREADS", "1")))
    except ValueError:
        return 1


def run_mc_study(config: McStudyConfig, workers: int | None = None, progress=None) -> dict[int, dict[str, McSummary]]:
    """Simulate and refit ``config.reps`` series per sample size.

    Replicate ``r`` at size index ``i`` always uses the ``r``-th child of the
    ``i``-th child of ``SeedSequence(config.seed)``, and results are reduced
    in replicate order, so output does not depend on the worker count.
    """
    methods = ["em", "nr"] if config.estimator == "both" else [config.estimator]
    layout = config.spec.layout()
    names = layout.names()
    true_vec = layout.pack(config.true_params)
    root = np.random.SeedSequence(config.seed)
    size_seqs = root.spawn(len(config.sizes))
    workers = workers or _n_workers()
    results: dict[int, dict[str, McSummary]] = {}
    for n, ss in zip(config.sizes, size_seqs):
        jobs = [(config.spec, config.true_params, n, child, methods, config.init) for child in ss.spawn(config.reps)]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                outs = list(pool.map(_replicate, jobs, chunksize=4))
        else:
            outs = []
            for j, job in enumerate(jobs):
                outs.append(_replicate(job))
                if progress:
                    progress(n, j + 1, config.reps)
        results[n] = {}
        for m in methods:
            good = [o[m] for o in outs if o[m] is not None]
            n_failed = config.reps - len(good)
            est = np.array([g[0] for g in good]).reshape(len(good), len(names))
            ses = np.array([g[1] for g in good]).reshape(len(good), len(names))
            summary = summarize_estimates(est, true_vec, names, n, m, ses, config.reps, n_failed,
                                          config.max_failure_rate)
            if not summary.valid:
                log.warning("N=%d %s: %d of %d replicates failed; study flagged invalid", n, m, n_failed, config.reps)
            results[n][m] = summary
    return results


@dataclass
class QQData:
    name: str
    theoretical: np.ndarray
    sample: np.ndarray
    ks_statistic: float
    ks_pvalue: float


def estimator_qq_data(estimate_matrix, true_params, se_matrix, names=None) -> list[QQData]:
    """Standardized estimates ``(est - true) / se`` against normal quantiles.

    ``se_matrix`` may be a per-replicate matrix or one value per parameter.
    Plotting positions are ``(i - 0.5) / n``.
    """
    est = np.atleast_2d(np.asarray(estimate_matrix, dtype=float))
    true = np.asarray(true_params, dtype=float)
    se = np.asarray(se_matrix, dtype=float)
    r, p = est.shape
    if r < 20:
        raise ModelError(f"need at least 20 replicates for QQ data, got {r}")
    se = np.broadcast_to(se, est.shape)
    if np.any(~np.isfinite(se)) or np.any(se <= 0):
        raise ModelError("standard errors must be positive and finite")
    names = names or [f"param{i + 1}" for i in range(p)]
    q = stats.norm.ppf((np.arange(1, r + 1) - 0.5) / r)
    out = []
    for j in range(p):
        z = (est[:, j] - true[j]) / se[:, j]
        if np.ptp(z) == 0:
            raise ModelError(f"zero spread in standardized estimates for {names[j]}")
        ks = stats.kstest(z, "norm")
        out.append(QQData(names[j], q, np.sort(z), float(ks.statistic), float(ks.pvalue)))
    return out
