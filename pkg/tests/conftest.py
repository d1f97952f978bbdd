import numpy as np
import pytest

from emoattr.evaluation import SyntheticCorpusConfig, generate_synthetic, train_probe
from emoattr.ranking import SolverConfig, train_pair_models
from emoattr.emotions import DEFAULT_EMOTIONS


@pytest.fixture(scope="session")
def corpus():
    return generate_synthetic(SyntheticCorpusConfig())


@pytest.fixture(scope="session")
def trained_models(corpus):
    return train_pair_models(corpus.subset("train"), DEFAULT_EMOTIONS, SolverConfig())


@pytest.fixture(scope="session")
def probe(corpus):
    return train_probe(corpus.subset("train"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- acceptance summary ------------------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    number, title = marker.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _CRITERIA[number] = ("PASS" if report.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[number]
        line = f"{status} criterion {number:>2}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
