import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qsbs.distribution import sample_responses
from qsbs.model import Dataset
from qsbs.smn import MixtureFamily

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

FAMILY_GRID = [
    MixtureFamily.normal(),
    MixtureFamily.contaminated_normal(0.1, 0.3),
    MixtureFamily.contaminated_normal(0.2, 0.2),
    MixtureFamily.slash(2.0),
    MixtureFamily.slash(4.0),
    MixtureFamily.student_t(2.0),
    MixtureFamily.student_t(11.0),
]


def family_id(fam):
    return fam.label


def simulate_regression(family, alpha, beta, n, q, seed):
    """Uniform(0,1) covariates and QSBS responses, log link."""
    rng = np.random.default_rng(seed)
    beta = np.asarray(beta, dtype=float)
    X = np.column_stack([np.ones(n), rng.random((n, beta.shape[0] - 1))])
    t = sample_responses(alpha, np.exp(X @ beta), q, family, rng)
    return Dataset(t, X)


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion."""

    def record(criterion, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
