import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from zinbarma.io import parse_model_config
from zinbarma.model import CovariateRecipe as R
from zinbarma.model import ModelSpec, ParameterSet

settings.register_profile("default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _quiet_root_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="MA polynomial not invertible")
        warnings.filterwarnings("ignore", message="root condition violated")
        yield


@pytest.fixture(scope="session")
def model3():
    cfg = parse_model_config("model3")
    return cfg.spec, cfg.true_params


@pytest.fixture(scope="session")
def model1():
    cfg = parse_model_config("model1")
    return cfg.spec, cfg.true_params


@pytest.fixture(scope="session")
def model2():
    cfg = parse_model_config("model2")
    return cfg.spec, cfg.true_params


@pytest.fixture
def simple_spec():
    """Intercept + trend, MA(1) on W, intercept-only logit."""
    return ModelSpec(w_covariates=[R("intercept"), R("trend")], m_covariates=[R("intercept")], q1=1)


@pytest.fixture
def simple_truth():
    return ParameterSet(beta=[1.0, 0.5], theta=[0.3], delta=[-1.0], k=2.0)


def rng(seed=0):
    return np.random.default_rng(seed)


# -- acceptance summary ------------------------------------------------------------

_ACCEPTANCE_LINES: dict[str, str] = {}


@pytest.fixture(scope="session")
def acceptance_log():
    """``record(criterion, ok, detail)``; lines are printed once at the end of the run."""

    def record(criterion, ok, detail=""):
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        line = f"criterion {criterion:>2}: {status}  {detail}"
        _ACCEPTANCE_LINES[str(criterion)] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE_LINES, key=int):
        terminalreporter.write_line(_ACCEPTANCE_LINES[key])
