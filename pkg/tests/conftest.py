import numpy as np
import pytest

from mcrage import ColumnSchema, Dataset
from mcrage.oracle import fairness_oracle, gaussian_two_class

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    num, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.skipped):
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        _CRITERIA[num] = (status, title)
    elif rep.failed:
        _CRITERIA[num] = ("FAIL", title)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        status, title = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num:>2} {status}: {title}")


@pytest.fixture
def tiny_schema():
    return ColumnSchema(("a", "b"), ("sex",), "y", attribute_levels=(("M", "F"),), label_levels=("0", "1"))


@pytest.fixture
def tiny_dataset(tiny_schema):
    rng = np.random.default_rng(7)
    n = 40
    return Dataset(
        rng.standard_normal((n, 2)),
        rng.integers(0, 2, (n, 1)),
        rng.integers(0, 2, n),
        tiny_schema,
    )


@pytest.fixture(scope="session")
def gauss_oracle():
    return gaussian_two_class(1000, seed=0)


@pytest.fixture(scope="session")
def fair_oracle():
    return fairness_oracle(100, seed=3)


@pytest.fixture(scope="session")
def patient_csv():
    """The Patient Treatment Classification CSV (user-supplied; never downloaded)."""
    import os
    from pathlib import Path

    path = Path(os.environ.get("MCRAGE_PATIENT_CSV", "data/patient_treatment.csv"))
    if not path.exists():
        pytest.skip("Patient Treatment Classification CSV not supplied (set MCRAGE_PATIENT_CSV)")
    return path
