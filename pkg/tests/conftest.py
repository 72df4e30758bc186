"""Shared fixtures and the per-criterion summary of the acceptance suite."""

import time

import pytest

_CRITERIA = {}  # criterion name -> [outcome, detail]


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion checked by this test")


@pytest.fixture
def detail(request):
    """Call with a short string to attach measured values to the criterion line."""
    marker = request.node.get_closest_marker("criterion")

    def note(text):
        if marker is not None:
            _CRITERIA.setdefault(marker.args[0], ["PASS", []])[1].append(text)

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when == "teardown" or (rep.when == "setup" and rep.passed):
        return
    entry = _CRITERIA.setdefault(marker.args[0], ["PASS", []])
    if rep.failed:
        entry[0] = "FAIL"
        entry[1].append(str(rep.longrepr.reprcrash.message if hasattr(rep.longrepr, "reprcrash") else rep.longrepr)[:200])
    elif rep.skipped:
        entry[0] = "SKIP" if entry[0] == "PASS" else entry[0]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, notes) in _CRITERIA.items():
        terminalreporter.write_line(f"{status} {name}: {'; '.join(notes)}")


@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory):
    """Synthetic-corpus overfit run with all three decode modes, plus the perplexity/WER sweep."""
    from jasper.pipeline import perplexity_wer_sweep, run_overfit

    start = time.perf_counter()
    result = run_overfit(tmp_path_factory.mktemp("overfit"), seed=0, epochs=300, width=16)
    result.total_seconds = time.perf_counter() - start
    ppl_wer = perplexity_wer_sweep(result)
    return result, ppl_wer
