"""Zero-inflated negative binomial ARMA model: parameters, design, states and pmf.

Given the history of the series, a count is zero with probability ``pi_t``
and otherwise negative binomial with mean ``lambda_t`` and shape ``k``::

    log(lambda_t) = W_t = x_t' beta + Z_t
    logit(pi_t)   = M_t = u_t' delta + V_t

    Z_t = sum_i phi_i (Z_{t-i} + e_{t-i}) + sum_j theta_j e_{t-j}
    V_t = sum_i alpha_i (V_{t-i} + e_{t-i}) + sum_j gamma_j e_{t-j}

with the standardized error ``e_t = (y_t - Lambda_t) / sqrt(Psi_t)`` and
``Z_t = V_t = e_t = 0`` for ``t <= 0``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats
from scipy.special import gammaln

from . import _kernel

LINK_CLAMP = _kernel.LINK_CLAMP
PSI_FLOOR = _kernel.PSI_FLOOR

COVARIATE_KINDS = ("intercept", "trend", "harmonic", "external", "lagged_indicator")


class ModelError(ValueError):
    """Invalid model specification, parameters or data."""


class RootConditionError(ModelError):
    """An ARMA polynomial has a zero inside or on the unit circle."""


# ---------------------------------------------------------------------------
# Parameters and specification
# ---------------------------------------------------------------------------


def _vec(values) -> np.ndarray:
    return np.atleast_1d(np.asarray(values if values is not None else [], dtype=float)).ravel()


@dataclass
class ParameterSet:
    """All model parameters ``(beta, phi, theta, delta, alpha, gamma, k)``.

    An empty ``delta`` together with empty ``alpha``/``gamma`` means the model
    has no zero-inflation component (plain NB-ARMA, ``pi_t = 0``).
    """

    beta: np.ndarray
    phi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    theta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    delta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    alpha: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gamma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    k: float = 1.0

    def __post_init__(self):
        for name in ("beta", "phi", "theta", "delta", "alpha", "gamma"):
            setattr(self, name, _vec(getattr(self, name)))
        self.k = float(self.k)
        if not (self.k > 0 and math.isfinite(self.k)):
            raise ModelError(f"overdispersion k must be positive and finite, got {self.k}")
        if self.beta.size == 0:
            raise ModelError("beta must have at least one coefficient")
        if self.delta.size == 0 and (self.alpha.size or self.gamma.size):
            raise ModelError("ARMA terms for the zero-inflation predictor require delta")
        for name in ("beta", "phi", "theta", "delta", "alpha", "gamma"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ModelError(f"{name} contains non-finite values")

    @property
    def zero_inflated(self) -> bool:
        return self.delta.size > 0

    @property
    def orders(self) -> tuple[int, int, int, int]:
        return (self.phi.size, self.theta.size, self.alpha.size, self.gamma.size)

    @property
    def n_total(self) -> int:
        """Parameter count counting every ARMA slot, plus one for k."""
        return sum(getattr(self, n).size for n in ("beta", "phi", "theta", "delta", "alpha", "gamma")) + 1

    def to_dict(self) -> dict:
        out = {n: getattr(self, n).tolist() for n in ("beta", "phi", "theta", "delta", "alpha", "gamma")}
        out["k"] = self.k
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "ParameterSet":
        return cls(
            beta=d["beta"],
            phi=d.get("phi", []),
            theta=d.get("theta", []),
            delta=d.get("delta", []),
            alpha=d.get("alpha", []),
            gamma=d.get("gamma", []),
            k=d["k"],
        )

    def copy(self) -> "ParameterSet":
        return ParameterSet.from_dict(self.to_dict())


@dataclass(frozen=True)
class CovariateRecipe:
    """One regressor (or pair, for harmonics) of a linear predictor.

    ``trend`` yields ``(t' + offset) / divisor`` with ``t' = t - 1``; the
    default divisor is ``N - 1`` so the column spans [0, 1].
    """

    kind: str
    period: float | None = None
    column: str | None = None
    lag: int | None = None
    divisor: float | None = None
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in COVARIATE_KINDS:
            raise ModelError(f"unknown covariate kind {self.kind!r}; expected one of {COVARIATE_KINDS}")
        if self.kind == "harmonic" and not (self.period is not None and self.period > 0):
            raise ModelError(f"harmonic period must be positive, got {self.period}")
        if self.kind == "external" and not self.column:
            raise ModelError("external covariate needs a column name")
        if self.kind == "lagged_indicator" and not (self.lag is not None and self.lag >= 1):
            raise ModelError(f"lagged_indicator lag must be >= 1, got {self.lag}")
        if self.kind == "trend" and self.divisor is not None and self.divisor <= 0:
            raise ModelError(f"trend divisor must be positive, got {self.divisor}")

    @property
    def width(self) -> int:
        return 2 if self.kind == "harmonic" else 1

    def names(self) -> list[str]:
        if self.kind == "intercept":
            return ["intercept"]
        if self.kind == "trend":
            return ["trend"]
        if self.kind == "harmonic":
            p = f"{self.period:g}"
            return [f"cos(2pi t/{p})", f"sin(2pi t/{p})"]
        if self.kind == "external":
            return [str(self.column)]
        return [f"I(y[t-{self.lag}]>0)"]

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        for key in ("period", "column", "lag", "divisor"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        if self.offset:
            out["offset"] = self.offset
        return out


@dataclass
class EstimatorOptions:
    method: str = "em"
    step_tol: float = 1e-8
    loglik_tol: float = 1e-10
    em_rel_tol: float = 1e-8
    max_iter: int = 200
    max_em_iter: int = 500
    max_inner_iter: int = 50
    inner_grad_tol: float = 1e-8
    decrement_tol: float = 1e-3
    em_decrement_tol: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("nr", "em"):
            raise ModelError(f"method must be 'nr' or 'em', got {self.method!r}")


@dataclass
class ModelSpec:
    """ARMA orders and covariate recipes for both linear predictors.

    ``*_fixed_zero`` lists lags (1-based) whose coefficients are held at zero
    and excluded from estimation, e.g. an MA(3) slot layout with only lags
    1 and 3 active. An empty ``m_covariates`` gives the NB-ARMA model
    without zero inflation.
    """

    w_covariates: list[CovariateRecipe]
    m_covariates: list[CovariateRecipe] = field(default_factory=list)
    p1: int = 0
    q1: int = 0
    p2: int = 0
    q2: int = 0
    ar_w_fixed_zero: tuple[int, ...] = ()
    ma_w_fixed_zero: tuple[int, ...] = ()
    ar_m_fixed_zero: tuple[int, ...] = ()
    ma_m_fixed_zero: tuple[int, ...] = ()
    options: EstimatorOptions = field(default_factory=EstimatorOptions)
    name: str = ""

    def __post_init__(self):
        if not self.w_covariates:
            raise ModelError("w_covariates must not be empty")
        for o in self.orders:
            if o < 0:
                raise ModelError(f"ARMA orders must be non-negative, got {self.orders}")
        if not self.m_covariates and (self.p2 or self.q2):
            raise ModelError("ARMA terms on the zero-inflation predictor need m_covariates")
        for lags, order, label in (
            (self.ar_w_fixed_zero, self.p1, "ar_w"),
            (self.ma_w_fixed_zero, self.q1, "ma_w"),
            (self.ar_m_fixed_zero, self.p2, "ar_m"),
            (self.ma_m_fixed_zero, self.q2, "ma_m"),
        ):
            for lag in lags:
                if not 1 <= lag <= order:
                    raise ModelError(f"{label}_fixed_zero lag {lag} outside 1..{order}")

    @property
    def orders(self) -> tuple[int, int, int, int]:
        return (self.p1, self.q1, self.p2, self.q2)

    @property
    def zero_inflated(self) -> bool:
        return bool(self.m_covariates)

    @property
    def n1(self) -> int:
        return sum(r.width for r in self.w_covariates)

    @property
    def n2(self) -> int:
        return sum(r.width for r in self.m_covariates)

    @property
    def max_lag(self) -> int:
        return max(self.orders)

    def layout(self) -> "ParamLayout":
        return ParamLayout(
            n1=self.n1,
            n2=self.n2,
            orders=self.orders,
            fixed_zero=(self.ar_w_fixed_zero, self.ma_w_fixed_zero, self.ar_m_fixed_zero, self.ma_m_fixed_zero),
            w_names=[n for r in self.w_covariates for n in r.names()],
            m_names=[n for r in self.m_covariates for n in r.names()],
        )


class ParamLayout:
    """Maps a :class:`ParameterSet` to the flat vector of free parameters.

    Vector order is ``beta, phi, theta, delta, alpha, gamma, k`` with fixed-zero
    ARMA slots dropped; ``k`` is last, on the natural or log scale.
    """

    def __init__(self, n1, n2, orders, fixed_zero=((), (), (), ()), w_names=None, m_names=None):
        self.n1, self.n2 = int(n1), int(n2)
        self.orders = tuple(int(o) for o in orders)
        self.fixed_zero = tuple(tuple(int(l) for l in f) for f in fixed_zero)
        idx = [np.arange(self.n1)]
        nxt = self.n1
        slot_idx = []
        for block in range(4):
            if block == 2:
                self.delta_offset = nxt
                idx.append(np.arange(nxt, nxt + self.n2))
                nxt += self.n2
            arr = np.full(self.orders[block], -1, dtype=np.int64)
            for lag in range(1, self.orders[block] + 1):
                if lag not in self.fixed_zero[block]:
                    arr[lag - 1] = nxt
                    nxt += 1
            slot_idx.append(arr)
        self.idx_phi, self.idx_theta, self.idx_alpha, self.idx_gamma = slot_idx
        self.k_index = nxt
        self.size = nxt + 1
        self.w_names = list(w_names) if w_names is not None else [f"beta{i + 1}" for i in range(self.n1)]
        self.m_names = list(m_names) if m_names is not None else [f"delta{i + 1}" for i in range(self.n2)]

    @classmethod
    def full(cls, params: ParameterSet) -> "ParamLayout":
        """Layout where every ARMA slot of ``params`` is free."""
        return cls(params.beta.size, params.delta.size, params.orders)

    def names(self) -> list[str]:
        out = [f"W:{n}" for n in self.w_names]
        out += [f"W:AR{i + 1}" for i, j in enumerate(self.idx_phi) if j >= 0]
        out += [f"W:MA{i + 1}" for i, j in enumerate(self.idx_theta) if j >= 0]
        out += [f"M:{n}" for n in self.m_names]
        out += [f"M:AR{i + 1}" for i, j in enumerate(self.idx_alpha) if j >= 0]
        out += [f"M:MA{i + 1}" for i, j in enumerate(self.idx_gamma) if j >= 0]
        out.append("k")
        return out

    def pack(self, params: ParameterSet, log_k: bool = False) -> np.ndarray:
        self.check(params)
        v = np.empty(self.size)
        v[: self.n1] = params.beta
        v[self.delta_offset : self.delta_offset + self.n2] = params.delta
        for slots, coefs in zip(self.slot_indices, (params.phi, params.theta, params.alpha, params.gamma)):
            for i, j in enumerate(slots):
                if j >= 0:
                    v[j] = coefs[i]
        v[self.k_index] = math.log(params.k) if log_k else params.k
        return v

    def unpack(self, v, log_k: bool = False) -> ParameterSet:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.size,):
            raise ModelError(f"expected parameter vector of length {self.size}, got {v.shape}")
        blocks = []
        for slots in self.slot_indices:
            arr = np.zeros(len(slots))
            for i, j in enumerate(slots):
                if j >= 0:
                    arr[i] = v[j]
            blocks.append(arr)
        k = math.exp(v[self.k_index]) if log_k else v[self.k_index]
        return ParameterSet(
            beta=v[: self.n1].copy(),
            phi=blocks[0],
            theta=blocks[1],
            delta=v[self.delta_offset : self.delta_offset + self.n2].copy(),
            alpha=blocks[2],
            gamma=blocks[3],
            k=k,
        )

    @property
    def slot_indices(self):
        return (self.idx_phi, self.idx_theta, self.idx_alpha, self.idx_gamma)

    @property
    def nu_size(self) -> int:
        return self.size - 1

    def check(self, params: ParameterSet) -> None:
        if params.beta.size != self.n1 or params.delta.size != self.n2 or params.orders != self.orders:
            raise ModelError(
                f"parameter dimensions (n1={params.beta.size}, n2={params.delta.size}, orders={params.orders}) "
                f"do not match layout (n1={self.n1}, n2={self.n2}, orders={self.orders})"
            )


# ---------------------------------------------------------------------------
# Data and design
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    y: np.ndarray
    covariates: dict[str, np.ndarray] = field(default_factory=dict)
    time: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y)
        if y.ndim != 1 or y.size == 0:
            raise ModelError("y must be a non-empty 1-d array")
        if not np.all(np.isfinite(y.astype(float))):
            raise ModelError("y contains non-finite values")
        if np.any(y < 0) or np.any(np.floor(y) != y):
            raise ModelError("y must contain non-negative integers")
        self.y = y.astype(np.int64)
        cov = {}
        for name, col in self.covariates.items():
            col = np.asarray(col, dtype=float)
            if col.shape != self.y.shape:
                raise ModelError(f"covariate {name!r} has length {col.size}, expected {self.y.size}")
            if not np.all(np.isfinite(col)):
                raise ModelError(f"covariate {name!r} contains non-finite values")
            cov[name] = col
        self.covariates = cov
        if self.time is None:
            self.time = np.arange(1, self.y.size + 1)
        else:
            self.time = np.asarray(self.time)
            if self.time.shape != self.y.shape:
                raise ModelError("time index length differs from y")

    @property
    def n(self) -> int:
        return int(self.y.size)

    @property
    def zero_fraction(self) -> float:
        return float(np.mean(self.y == 0))


def _recipe_columns(recipe: CovariateRecipe, n: int, dataset: Dataset | None) -> np.ndarray:
    tp = np.arange(n, dtype=float)  # t' = t - 1
    if recipe.kind == "intercept":
        return np.ones((n, 1))
    if recipe.kind == "trend":
        div = recipe.divisor if recipe.divisor is not None else max(n - 1, 1)
        return ((tp + recipe.offset) / div)[:, None]
    if recipe.kind == "harmonic":
        ang = 2.0 * np.pi * tp / recipe.period
        return np.column_stack([np.cos(ang), np.sin(ang)])
    if dataset is None:
        raise ModelError(f"{recipe.kind} covariate requires a dataset")
    if recipe.kind == "external":
        if recipe.column not in dataset.covariates:
            raise ModelError(f"unknown covariate column {recipe.column!r}; available: {sorted(dataset.covariates)}")
        return dataset.covariates[recipe.column][:, None].copy()
    # lagged_indicator
    if recipe.lag >= n:
        raise ModelError(f"lag {recipe.lag} must be smaller than the series length {n}")
    col = np.zeros(n)
    col[recipe.lag :] = (dataset.y[: n - recipe.lag] > 0).astype(float)
    return col[:, None]


def design_matrix(recipes: Sequence[CovariateRecipe], n: int, dataset: Dataset | None = None) -> np.ndarray:
    if not recipes:
        return np.zeros((n, 0))
    return np.hstack([_recipe_columns(r, n, dataset) for r in recipes])


def build_design(spec: ModelSpec, dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(X, U)`` with one row per time point, built from the recipes."""
    n = dataset.n
    if max(spec.orders) >= n:
        raise ModelError(f"ARMA orders {spec.orders} must be smaller than the series length {n}")
    return design_matrix(spec.w_covariates, n, dataset), design_matrix(spec.m_covariates, n, dataset)


# ---------------------------------------------------------------------------
# States
# ---------------------------------------------------------------------------


@dataclass
class StateTrajectory:
    W: np.ndarray
    M: np.ndarray
    Z: np.ndarray
    V: np.ndarray
    e: np.ndarray
    lam: np.ndarray
    pi: np.ndarray
    Lambda: np.ndarray
    Psi: np.ndarray
    n_clamped: int = 0
    n_psi_floor: int = 0

    @property
    def n(self) -> int:
        return self.W.size


def _check_dims(params: ParameterSet, X: np.ndarray, U: np.ndarray, y: np.ndarray):
    X = np.ascontiguousarray(X, dtype=float)
    U = np.ascontiguousarray(U, dtype=float)
    y = np.ascontiguousarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[1] != params.beta.size:
        raise ModelError(f"X has shape {X.shape}, expected (N, {params.beta.size})")
    if U.ndim != 2 or U.shape[1] != params.delta.size:
        raise ModelError(f"U has shape {U.shape}, expected (N, {params.delta.size})")
    if X.shape[0] != y.size or U.shape[0] != y.size:
        raise ModelError("design matrices and y must have the same number of rows")
    return X, U, y


def compute_states(params: ParameterSet, X, U, y) -> StateTrajectory:
    """Run the state recursions forward over ``t = 1..N``."""
    X, U, y = _check_dims(params, X, U, y)
    n = y.size
    out = {name: np.zeros(n) for name in ("W", "M", "Z", "V", "e", "lam", "pi")}
    flags = _kernel.states(
        params.beta, params.phi, params.theta, params.delta, params.alpha, params.gamma,
        params.k, X, U, y, params.zero_inflated,
        out["W"], out["M"], out["Z"], out["V"], out["e"], out["lam"], out["pi"],
    )
    Lambda, Psi = conditional_moments(out["lam"], out["pi"], params.k)
    return StateTrajectory(Lambda=Lambda, Psi=Psi, n_clamped=int(flags[0]), n_psi_floor=int(flags[1]), **out)


def conditional_moments(lam, pi, k):
    """Conditional mean and variance ``(Lambda, Psi)`` of the ZINB mixture."""
    lam = np.asarray(lam, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(pi)) and np.isfinite(k)):
        raise ModelError("conditional_moments received non-finite input")
    Lambda = lam * (1.0 - pi)
    Psi = Lambda * (1.0 + lam * pi + lam / k)
    if Lambda.ndim == 0:
        return float(Lambda), float(Psi)
    return Lambda, Psi


# ---------------------------------------------------------------------------
# Distribution
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ZinbDistribution:
    lam: float
    pi: float
    k: float

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ModelError(f"lambda must be positive, got {self.lam}")
        if not 0.0 <= self.pi <= 1.0:
            raise ModelError(f"pi must lie in [0, 1], got {self.pi}")
        if not (self.k > 0 and math.isfinite(self.k)):
            raise ModelError(f"k must be positive, got {self.k}")

    @property
    def p_tilde(self) -> float:
        return self.k / (self.k + self.lam)

    def pmf(self, y):
        return zinb_pmf(y, self)

    def cdf(self, y):
        return zinb_cdf(y, self)

    def moments(self) -> tuple[float, float]:
        return conditional_moments(self.lam, self.pi, self.k)


def nb_logpmf(y, lam, k):
    """Log NB pmf with mean ``lam`` and shape ``k``, built from log-gamma terms."""
    y = np.asarray(y, dtype=float)
    lam = np.asarray(lam, dtype=float)
    log_kl = np.log(k + lam)
    return (
        gammaln(k + y) - gammaln(k) - gammaln(y + 1.0)
        + k * (np.log(k) - log_kl)
        + np.where(y > 0, y * (np.log(lam) - log_kl), 0.0)
    )


def zinb_logpmf(y, dist: ZinbDistribution):
    y = np.asarray(y)
    nb = nb_logpmf(y, dist.lam, dist.k)
    with np.errstate(divide="ignore"):
        log_pi = math.log(dist.pi) if dist.pi > 0 else -np.inf
        log_1m = math.log1p(-dist.pi) if dist.pi < 1 else -np.inf
    out = np.where(y == 0, np.logaddexp(log_pi, log_1m + nb), log_1m + nb)
    out = np.where(y < 0, -np.inf, out)
    return out[()] if out.ndim == 0 else out


def zinb_pmf(y, dist: ZinbDistribution):
    return np.exp(zinb_logpmf(y, dist))


def zinb_cdf(y, dist: ZinbDistribution):
    """``P(Y <= y)``; the NB part uses the regularized incomplete beta function."""
    y = np.asarray(y)
    nb = stats.nbinom.cdf(y, dist.k, dist.p_tilde)
    out = np.where(y < 0, 0.0, dist.pi + (1.0 - dist.pi) * nb)
    return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Polynomial roots and moment identities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RootCheck:
    ok: bool
    min_root_modulus: float


def check_polynomial_roots(coeffs, kind: str) -> RootCheck:
    """Check that ``1 - sum c_i z^i`` (AR) or ``1 + sum c_i z^i`` (MA) has all zeros outside the unit circle."""
    c = _vec(coeffs)
    if kind not in ("ar", "ma"):
        raise ModelError(f"kind must be 'ar' or 'ma', got {kind!r}")
    if not np.all(np.isfinite(c)):
        raise ModelError("polynomial coefficients must be finite")
    nz = np.flatnonzero(c)
    if nz.size == 0:
        return RootCheck(True, math.inf)
    c = c[: nz[-1] + 1]
    sign = -1.0 if kind == "ar" else 1.0
    poly = np.concatenate([[1.0], sign * c])  # ascending powers
    roots = np.roots(poly[::-1])
    mod = float(np.min(np.abs(roots)))
    return RootCheck(bool(mod > 1.0), mod)


def check_params_roots(params: ParameterSet, ma: bool = True) -> list[str]:
    """Names of the polynomials of ``params`` failing the root condition."""
    bad = []
    checks = [("phi", params.phi, "ar"), ("alpha", params.alpha, "ar")]
    if ma:
        checks += [("theta", params.theta, "ma"), ("gamma", params.gamma, "ma")]
    for name, c, kind in checks:
        rc = check_polynomial_roots(c, kind)
        if not rc.ok:
            bad.append(f"{name} (min |root| = {rc.min_root_modulus:.4g})")
    return bad


def warn_roots(params: ParameterSet) -> None:
    bad = check_params_roots(params)
    if bad:
        warnings.warn("root condition violated for " + ", ".join(bad), RuntimeWarning, stacklevel=2)


def ma_infinity_variance(theta_coeffs, ar_coeffs=()) -> float:
    """Stationary variance of a pure MA state, ``sum_j theta_j^2`` (unit-variance errors)."""
    if _vec(ar_coeffs).size and np.any(_vec(ar_coeffs) != 0):
        raise NotImplementedError("closed-form variance is only available for pure MA predictors")
    th = _vec(theta_coeffs)
    return float(np.sum(th**2))


def ma_infinity_autocovariance(theta_coeffs, h: int) -> float:
    th = _vec(theta_coeffs)
    if h < 0:
        raise ModelError("lag must be non-negative")
    if h >= th.size:
        return 0.0
    return float(np.dot(th[: th.size - h], th[h:]))
