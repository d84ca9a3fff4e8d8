"""CSV datasets, strict JSON model configs and run reports.

Floats are written with 17 significant digits everywhere so a value read
back is bit-identical to the value written.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from .model import (
    CovariateRecipe,
    Dataset,
    EstimatorOptions,
    ModelError,
    ModelSpec,
    ParameterSet,
)


class ConfigError(ModelError):
    """Schema violation in a model config; the message carries the key path."""


# ---------------------------------------------------------------------------
# Number formatting
# ---------------------------------------------------------------------------


def fmt_float(x: float) -> str:
    return format(float(x), ".17g")


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or isinstance(obj, bool):
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt_float(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """JSON text with floats at 17 significant digits; non-finite floats become ``null``."""
    return _encode(obj, indent, 0) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in row])


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


def load_csv_dataset(path, y_column: str = "y", covariate_columns=None) -> Dataset:
    """Read a header-first CSV; rows are time order.

    ``covariate_columns=None`` takes every column except ``t`` and the
    count column. Missing cells are errors, never imputed. Row numbers in
    messages count data rows from 1.
    """
    path = Path(path)
    if not path.exists():
        raise ModelError(f"data file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ModelError(f"{path}: empty file") from None
        rows = [r for r in reader if any(c.strip() for c in r)]
    if not rows:
        raise ModelError(f"{path}: no data rows")
    if y_column not in header:
        raise ModelError(f"{path}: missing count column {y_column!r}")
    if covariate_columns is None:
        covariate_columns = [h for h in header if h not in ("t", y_column)]
    for c in covariate_columns:
        if c not in header:
            raise ModelError(f"{path}: missing covariate column {c!r}")
    iy = header.index(y_column)
    it = header.index("t") if "t" in header else None
    icov = {c: header.index(c) for c in covariate_columns}
    y = np.empty(len(rows), dtype=np.int64)
    cov = {c: np.empty(len(rows)) for c in covariate_columns}
    time = np.empty(len(rows), dtype=np.int64) if it is not None else None
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ModelError(f"{path}: row {r} has {len(row)} cells, expected {len(header)}")
        cell = row[iy].strip()
        try:
            val = float(cell)
        except ValueError:
            raise ModelError(f"{path}: row {r}: count {cell!r} is not a number") from None
        if not math.isfinite(val) or val < 0 or val != math.floor(val):
            raise ModelError(f"{path}: row {r}: count {cell!r} is not a non-negative integer")
        y[r - 1] = int(val)
        for c, j in icov.items():
            cell = row[j].strip()
            try:
                cov[c][r - 1] = float(cell)
            except ValueError:
                raise ModelError(f"{path}: row {r}: covariate {c!r} value {cell!r} is not numeric") from None
            if not math.isfinite(cov[c][r - 1]):
                raise ModelError(f"{path}: row {r}: covariate {c!r} is not finite")
        if time is not None:
            try:
                time[r - 1] = int(row[it])
            except ValueError:
                raise ModelError(f"{path}: row {r}: time index {row[it]!r} is not an integer") from None
    return Dataset(y=y, covariates=cov, time=time)


def save_csv_dataset(path, dataset: Dataset) -> None:
    names = list(dataset.covariates)
    rows = [
        [int(dataset.time[i]), int(dataset.y[i])] + [float(dataset.covariates[c][i]) for c in names]
        for i in range(dataset.n)
    ]
    write_csv(path, ["t", "y"] + names, rows)


def data_fingerprint(dataset: Dataset) -> dict:
    h = hashlib.sha256(dataset.y.tobytes())
    for name in sorted(dataset.covariates):
        h.update(name.encode())
        h.update(dataset.covariates[name].tobytes())
    return {"n_obs": dataset.n, "n_zeros": int(np.sum(dataset.y == 0)), "zero_fraction": dataset.zero_fraction,
            "sha256": h.hexdigest()}


# ---------------------------------------------------------------------------
# Model configs
# ---------------------------------------------------------------------------


@dataclass
class StudyOptions:
    sizes: tuple[int, ...] = (30, 100, 500)
    reps: int = 100
    estimator: str = "em"
    seed: int = 0
    init: str = "truth"


@dataclass
class SimulationOptions:
    n: int = 500
    seed: int = 0
    # name -> {mean, amplitude, period, phase, noise_sd}
    synthetic_covariates: dict = field(default_factory=dict)


@dataclass
class ModelConfig:
    spec: ModelSpec
    true_params: ParameterSet | None
    study: StudyOptions
    simulate: SimulationOptions
    description: str = ""
    source: dict = field(default_factory=dict)


_TOP_KEYS = {"name", "description", "w_covariates", "m_covariates", "orders", "fixed_zero", "options",
             "true_params", "study", "simulate"}
_RECIPE_KEYS = {"kind", "period", "column", "lag", "divisor", "offset"}
_ORDER_KEYS = {"p1", "q1", "p2", "q2"}
_FIXED_KEYS = {"phi", "theta", "alpha", "gamma"}
_PARAM_KEYS = {"beta", "phi", "theta", "delta", "alpha", "gamma", "k"}
_SYNTH_KEYS = {"mean", "amplitude", "period", "phase", "noise_sd"}


def _strict(d, allowed, path):
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object, got {type(d).__name__}")
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"{path}: unknown key(s) {extra}")


def _int(v, path, lo=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}: expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"{path}: must be >= {lo}, got {v}")
    return v


def _num(v, path):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{path}: expected a finite number, got {v!r}")
    return float(v)


def _recipes(lst, path):
    if not isinstance(lst, list) or not lst:
        raise ConfigError(f"{path}: expected a non-empty list of covariate recipes")
    out = []
    for i, r in enumerate(lst):
        p = f"{path}[{i}]"
        _strict(r, _RECIPE_KEYS, p)
        if "kind" not in r:
            raise ConfigError(f"{p}: missing 'kind'")
        kw = dict(r)
        if "period" in kw:
            kw["period"] = _num(kw["period"], p + ".period")
            if kw["period"] <= 0:
                raise ConfigError(f"{p}.period: must be positive, got {kw['period']}")
        for key in ("divisor", "offset"):
            if key in kw:
                kw[key] = _num(kw[key], f"{p}.{key}")
        if "lag" in kw:
            kw["lag"] = _int(kw["lag"], p + ".lag", 1)
        try:
            out.append(CovariateRecipe(**kw))
        except ModelError as exc:
            raise ConfigError(f"{p}: {exc}") from None
    return out


def config_from_dict(d: dict, source: str = "<dict>") -> ModelConfig:
    """Validate and resolve a config mapping; any unknown key is an error."""
    _strict(d, _TOP_KEYS, source)
    if "w_covariates" not in d:
        raise ConfigError(f"{source}: missing 'w_covariates'")
    w = _recipes(d["w_covariates"], "w_covariates")
    m = [] if d.get("m_covariates") is None else _recipes(d["m_covariates"], "m_covariates")
    orders = d.get("orders", {})
    _strict(orders, _ORDER_KEYS, "orders")
    o = {k: _int(orders.get(k, 0), f"orders.{k}", 0) for k in _ORDER_KEYS}
    if not m and (o["p2"] or o["q2"]):
        raise ConfigError("orders: p2/q2 need m_covariates (zero inflation)")
    fixed = d.get("fixed_zero", {})
    _strict(fixed, _FIXED_KEYS, "fixed_zero")
    fz = {}
    for key, order in (("phi", "p1"), ("theta", "q1"), ("alpha", "p2"), ("gamma", "q2")):
        lags = fixed.get(key, [])
        if not isinstance(lags, list):
            raise ConfigError(f"fixed_zero.{key}: expected a list of lags")
        fz[key] = tuple(_int(v, f"fixed_zero.{key}[{i}]", 1) for i, v in enumerate(lags))
        for lag in fz[key]:
            if lag > o[order]:
                raise ConfigError(f"fixed_zero.{key}: lag {lag} exceeds {order} = {o[order]}")
    opt = d.get("options", {})
    _strict(opt, {f.name for f in fields(EstimatorOptions)}, "options")
    try:
        options = EstimatorOptions(**opt)
    except (TypeError, ModelError) as exc:
        raise ConfigError(f"options: {exc}") from None
    try:
        spec = ModelSpec(
            w_covariates=w, m_covariates=m, p1=o["p1"], q1=o["q1"], p2=o["p2"], q2=o["q2"],
            ar_w_fixed_zero=fz["phi"], ma_w_fixed_zero=fz["theta"],
            ar_m_fixed_zero=fz["alpha"], ma_m_fixed_zero=fz["gamma"],
            options=options, name=str(d.get("name", "")),
        )
    except ModelError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    truth = None
    if d.get("true_params") is not None:
        tp = d["true_params"]
        _strict(tp, _PARAM_KEYS, "true_params")
        try:
            truth = ParameterSet.from_dict(tp)
            spec.layout().check(truth)
        except (ModelError, TypeError, KeyError) as exc:
            raise ConfigError(f"true_params: {exc}") from None
    st = d.get("study", {})
    _strict(st, {f.name for f in fields(StudyOptions)}, "study")
    study = StudyOptions(**{**st, "sizes": tuple(_int(v, "study.sizes", 1) for v in st.get("sizes", (30, 100, 500)))})
    _int(study.reps, "study.reps", 1)
    _int(study.seed, "study.seed", 0)
    if study.estimator not in ("em", "nr", "both"):
        raise ConfigError(f"study.estimator: expected em, nr or both, got {study.estimator!r}")
    if study.init not in ("truth", "data"):
        raise ConfigError(f"study.init: expected truth or data, got {study.init!r}")
    sim = d.get("simulate", {})
    _strict(sim, {f.name for f in fields(SimulationOptions)}, "simulate")
    simulate = SimulationOptions(**sim)
    _int(simulate.n, "simulate.n", 1)
    _int(simulate.seed, "simulate.seed", 0)
    for name, gen in simulate.synthetic_covariates.items():
        _strict(gen, _SYNTH_KEYS, f"simulate.synthetic_covariates.{name}")
        for key, val in gen.items():
            _num(val, f"simulate.synthetic_covariates.{name}.{key}")
    return ModelConfig(spec, truth, study, simulate, str(d.get("description", "")), d)


def bundled_configs() -> list[str]:
    root = resources.files("zinbarma") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_config_path(path_or_name):
    """A filesystem path, or the stem of a bundled config such as ``model3``."""
    p = Path(path_or_name)
    if p.exists():
        return p
    cand = resources.files("zinbarma") / "configs" / f"{path_or_name}.json"
    if cand.is_file():
        return cand
    raise ConfigError(f"config not found: {path_or_name} (bundled: {', '.join(bundled_configs())})")


def parse_model_config(path) -> ModelConfig:
    p = resolve_config_path(path)
    try:
        d = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(d, str(path))


def spec_to_dict(spec: ModelSpec) -> dict:
    out = {
        "name": spec.name,
        "w_covariates": [r.to_dict() for r in spec.w_covariates],
        "m_covariates": [r.to_dict() for r in spec.m_covariates] or None,
        "orders": {"p1": spec.p1, "q1": spec.q1, "p2": spec.p2, "q2": spec.q2},
        "fixed_zero": {"phi": list(spec.ar_w_fixed_zero), "theta": list(spec.ma_w_fixed_zero),
                       "alpha": list(spec.ar_m_fixed_zero), "gamma": list(spec.ma_m_fixed_zero)},
        "options": asdict(spec.options),
    }
    return out


def synthetic_covariates(gens: dict, n: int, seed) -> dict[str, np.ndarray]:
    """Seasonal-plus-noise columns ``mean + amplitude cos(2 pi (t' - phase) / period) + N(0, noise_sd^2)``."""
    rng = np.random.default_rng(seed)
    tp = np.arange(n, dtype=float)
    out = {}
    for name in sorted(gens):
        g = gens[name]
        base = g.get("mean", 0.0) + g.get("amplitude", 0.0) * np.cos(
            2.0 * np.pi * (tp - g.get("phase", 0.0)) / g.get("period", 52.0))
        out[name] = base + g.get("noise_sd", 0.0) * rng.standard_normal(n)
    return out


# ---------------------------------------------------------------------------
# Run reports
# ---------------------------------------------------------------------------


@dataclass
class RunReport:
    config: dict
    data: dict
    method: str
    converged: bool
    iterations: int
    loglik: float
    n_params: int
    estimates: list[dict]
    params: dict
    covariance: list
    info_source: str
    gof: dict | None = None
    diagnostics: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    version: str = ""
    seed: int | None = None
    created: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        _strict(d, {f.name for f in fields(cls)}, "report")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        return cls.from_dict(json.loads(text))


def _version() -> str:
    from . import __version__

    return __version__


def build_report(fit, dataset: Dataset, config_dict: dict, gof=None, seed=None, timestamp: bool = True) -> RunReport:
    return RunReport(
        config=config_dict,
        data=data_fingerprint(dataset),
        method=fit.method,
        converged=bool(fit.converged),
        iterations=int(fit.iterations),
        loglik=float(fit.loglik),
        n_params=int(fit.n_params),
        estimates=fit.summary_rows(),
        params=fit.params_hat.to_dict(),
        covariance=np.asarray(fit.cov, dtype=float).tolist(),
        info_source=fit.info_source,
        gof=None if gof is None else gof.to_dict(),
        warnings=list(fit.warnings),
        version=_version(),
        seed=seed,
        created=datetime.now(timezone.utc).isoformat(timespec="seconds") if timestamp else "",
    )


def fit_from_report(report: RunReport):
    """Rebuild a :class:`FitResult` (without a trace) from a saved report."""
    from .estimation import FitResult

    cfg = config_from_dict(report.config, "report.config")
    params = ParameterSet.from_dict(report.params)
    layout = cfg.spec.layout()
    cov = np.array([[np.nan if v is None else v for v in row] for row in report.covariance], dtype=float)
    se = np.array([np.nan if r["std_error"] is None else r["std_error"] for r in report.estimates], dtype=float)
    return FitResult(
        params_hat=params, names=layout.names(), estimate=layout.pack(params), se=se,
        cov=cov.reshape(layout.size, layout.size), loglik=report.loglik, n_obs=report.data["n_obs"],
        n_params=report.n_params, method=report.method, converged=report.converged,
        iterations=report.iterations, trace=[], spec=cfg.spec, warnings=list(report.warnings),
        info_source=report.info_source,
    )
