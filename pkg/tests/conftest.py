import os

import numpy as np
import pytest

_results: dict[int, dict] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            number, title = mark.args
            _results.setdefault(number, {"title": title, "outcomes": []})


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    for number, title in _markers.get(report.nodeid, ()):
        _results[number]["outcomes"].append(report.outcome)


_markers: dict[str, list] = {}


@pytest.hookimpl(tryfirst=True)
def pytest_runtest_setup(item):
    _markers[item.nodeid] = [m.args for m in item.iter_markers("criterion")]


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        r = _results[number]
        outs = r["outcomes"]
        if not outs:
            status = "NOT RUN"
        elif "failed" in outs:
            status = "FAIL"
        elif all(o == "skipped" for o in outs):
            status = "SKIP"
        else:
            status = "PASS"
        terminalreporter.write_line(f"criterion {number} {status}: {r['title']} ({len(outs)} checks)")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def real_data_paths():
    """Manifest and known-subject rating table named by environment variables, if both exist."""
    manifest = os.environ.get("GAZESCORE_MANIFEST")
    labels = os.environ.get("GAZESCORE_KNOWN_LABELS")
    if manifest and labels and os.path.isfile(manifest) and os.path.isfile(labels):
        return manifest, labels
    return None
